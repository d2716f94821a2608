use std::sync::Arc;

use optswitch::models::{preset, AidPayoff, ClConfig, ModelConfig, PRESETS};
use optswitch::net::TrainConfig;
use optswitch::osj::train_backward;
use optswitch::problem::{reflect, validate_assumptions};
use optswitch::strategy::{rollout, RolloutOptions};
use optswitch::{Payoff, SwitchGrid, SwitchingProblem, TimeGrid};
use proptest::prelude::*;

#[test]
fn every_preset_satisfies_the_cost_assumptions() {
    for name in PRESETS {
        let model = preset(name).unwrap().build().unwrap();
        let steps = model.problem().grid().steps + 1;
        let paths = 10_000usize.div_ceil(steps);
        let batch = model.simulate(paths, 1).unwrap();
        let report = validate_assumptions(model.problem(), batch.states_raw()).unwrap();
        assert!(report.samples >= 10_000);
        assert!(report.compliant(), "{name}: {:?}", &report.violations[..1]);
        if model.modes() > 1 {
            assert!(report.min_switch_cost > 0.0);
        }
    }
}

#[test]
fn capacity_is_conserved_across_modes() {
    let p = AidPayoff::default();
    for i in 0..4 {
        assert_eq!(p.total_capacity(i), 70.0);
    }
}

#[test]
fn single_fuel_high_dimensional_preset_is_the_planar_model() {
    let hd = preset("cl_hd_2").unwrap();
    let planar = preset("cl2d_lambda8").unwrap();
    assert_eq!(hd, planar);
    let a = hd.build().unwrap().simulate(20, 4).unwrap();
    let b = planar.build().unwrap().simulate(20, 4).unwrap();
    assert_eq!(a.states_raw(), b.states_raw());
}

#[test]
fn geometric_mean_of_fuels_has_the_planar_gas_law() {
    let model = preset("cl_hd_6").unwrap().build().unwrap();
    let planar = preset("cl2d_lambda8").unwrap().build().unwrap();
    let batch = model.simulate(20_000, 8).unwrap();
    let m = batch.grid().steps;
    let d = model.dim();
    let logs: Vec<f64> = batch
        .states_at(m)
        .chunks_exact(d)
        .map(|x| x[1..].iter().map(|v| v.ln()).sum::<f64>() / (d - 1) as f64)
        .collect();
    let (mean, var) = planar
        .exp_ou()
        .unwrap()
        .log_moments(planar.initial_state(), 1, batch.grid().horizon)
        .unwrap();
    let n = logs.len() as f64;
    let m_hat = logs.iter().sum::<f64>() / n;
    let v_hat = logs.iter().map(|v| (v - m_hat).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((m_hat - mean).abs() < 4.0 * (var / n).sqrt(), "{m_hat} vs {mean}");
    assert!((v_hat - var).abs() < 4.0 * var * (2.0 / n).sqrt(), "{v_hat} vs {var}");
}

fn cl_problem() -> SwitchingProblem {
    ModelConfig::Cl(ClConfig::default()).build().unwrap().problem().clone()
}

proptest! {
    #[test]
    fn reflection_dominates_every_switch(
        cont in prop::collection::vec(-10.0f64..10.0, 3),
        p in 10.0f64..100.0,
        g in 1.0f64..20.0,
    ) {
        let problem = cl_problem();
        let x = [p, g];
        let cost = |i: usize, j: usize| problem.payoff().cost(&x, i, j);
        let mut value = vec![0.0; 3];
        reflect(&cont, cost, true, &mut value);
        for i in 0..3 {
            prop_assert_eq!(cost(i, i), 0.0);
            prop_assert!(value[i] >= cont[i]);
            for j in 0..3 {
                prop_assert!(value[i] >= cont[j] - cost(i, j));
            }
        }
        reflect(&cont, cost, false, &mut value);
        prop_assert_eq!(&value, &cont);
    }
}

/// Two modes, no running profit, the same constant terminal profit.
#[derive(Debug)]
struct Flat;

impl Payoff for Flat {
    fn modes(&self) -> usize {
        2
    }
    fn dim(&self) -> usize {
        2
    }
    fn running(&self, _: f64, _: &[f64], _: usize) -> f64 {
        0.0
    }
    fn terminal(&self, _: &[f64], _: usize) -> f64 {
        1.25
    }
    fn cost(&self, _: &[f64], from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            0.1
        }
    }
}

#[test]
fn constant_terminal_profit_never_switches() {
    let model = preset("cl2d_lambda8").unwrap().build().unwrap();
    let grid = TimeGrid::new(0.25, 12).unwrap();
    let problem = SwitchingProblem::new(Arc::new(Flat), grid, SwitchGrid::Every).unwrap();
    let cfg = ModelConfig::Cl(ClConfig {
        steps: 12,
        ..ClConfig::default()
    });
    let batch = cfg.build().unwrap().simulate(256, 3).unwrap();
    let train = TrainConfig {
        epochs: 3,
        minibatch: 64,
        ..TrainConfig::default()
    };
    let sol = train_backward(&problem, &batch, &train).unwrap();
    let cont = sol.continuations(0, model.initial_state()).unwrap();
    for c in cont {
        assert!((c - 1.25).abs() < 1e-6, "{c}");
    }
    let eval = cfg.build().unwrap().simulate(100, 4).unwrap();
    for start in 0..2 {
        let out = rollout(&sol, &eval, start, RolloutOptions::default()).unwrap();
        assert!(out.switches.iter().all(|&s| s == 0));
        assert!(out.payoffs.iter().all(|&v| v == 1.25));
    }
}

#[test]
fn fixed_seed_pipeline_is_deterministic_across_thread_counts() {
    let cfg = ModelConfig::Cl(ClConfig {
        steps: 8,
        ..ClConfig::default()
    });
    let train = TrainConfig {
        epochs: 2,
        minibatch: 50,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = || {
        let model = cfg.build().unwrap();
        let batch = model.simulate(200, 9).unwrap();
        let sol = train_backward(model.problem(), &batch, &train).unwrap();
        let eval = model.simulate(100, 10).unwrap();
        let out = rollout(&sol, &eval, 0, RolloutOptions::default()).unwrap();
        (batch, sol, out)
    };
    let (b1, s1, o1) = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (b2, s2, o2) = single.install(run);
    assert_eq!(b1, b2);
    assert!(s1 == s2);
    assert_eq!(o1, o2);
}
