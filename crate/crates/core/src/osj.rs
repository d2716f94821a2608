//! Backward training of one network per (step, mode).
//!
//! The terminal value is `g^i` exactly. For `n = M-1, …, 0` the network for
//! mode `i` minimizes
//!
//! ```text
//! mean | Ŷ^i_{n+1}(X_{n+1}) + f_i(t_n, X_n) Δt - Y(X_n) - Z(X_n)·ΔW_n - U(X_n) ΔÑ_n |²
//! ```
//!
//! and its value output is the continuation `Ỹ^i_n`. The regression target
//! for step `n - 1` is the reflected value `Ŷ^i_n`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lsmc::{fit_many, BasisSpec};
use crate::net::{load_network, save_network, LossBatch, SnapshotMeta, TrainConfig};
use crate::paths::PathBatch;
use crate::problem::{reflect, reflect_batch, SwitchingProblem};
use crate::{AdamState, Network};

/// Initial and final full-batch loss of one stage network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLog {
    pub step: usize,
    pub mode: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedSolution {
    problem: SwitchingProblem,
    /// `nets[n][i]` for `n < M`.
    nets: Vec<Vec<Network>>,
    log: Vec<StageLog>,
    config: TrainConfig,
    path_seed: u64,
    paths: usize,
    seconds: f64,
}

/// Seed of the fresh initialization for stage `(n, i)`.
fn stage_seed(seed: u64, n: usize, i: usize) -> u64 {
    let key = ((n as u64) << 16 | i as u64).wrapping_add(1);
    seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean and standard deviation per coordinate of a `rows × d` batch.
fn column_stats(x: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (x.len() / d) as f64;
    let mut mean = vec![0.0; d];
    for r in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; d];
    for r in x.chunks_exact(d) {
        for k in 0..d {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let sd = var.iter().map(|v| (v / rows).sqrt()).collect();
    (mean, sd)
}

struct StageData<'a> {
    x: &'a [f64],
    dw: &'a [f64],
    dn: &'a [f64],
    shift: &'a [f64],
    scale: &'a [f64],
}

fn train_stage(
    config: &TrainConfig,
    data: &StageData<'_>,
    target: &[f64],
    drift: &[f64],
    start: Option<&Network>,
    n: usize,
    i: usize,
    modes: usize,
) -> Result<(Network, StageLog)> {
    let d = data.shift.len();
    let rows = target.len();
    let sum: Vec<f64> = target.iter().zip(drift).map(|(t, f)| t + f).collect();
    let (out_mean, out_sd) = column_stats(&sum, 1);
    let out_scale = out_sd[0].max(1e-8 + 1e-6 * out_mean[0].abs());

    let mut net = match start {
        Some(prev) => {
            let mut net = prev.clone();
            let (_, prev_scale) = prev.input_normalization();
            let scale: Vec<f64> = data
                .scale
                .iter()
                .zip(prev_scale)
                .map(|(&s, &p)| if s > 0.0 { s } else { p })
                .collect();
            net.set_input_normalization(data.shift, &scale)?;
            // The output map is relabeled rather than preserved: the raw
            // network keeps predicting standardized targets, so the level
            // follows the new target mean even when the spread collapses.
            let (shift, scale) = net.input_normalization();
            let (shift, scale) = (shift.to_vec(), scale.to_vec());
            net.with_normalization(shift, scale, out_mean[0], out_scale)?
        }
        None => {
            let scale: Vec<f64> = data.scale.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
            Network::glorot(&config.widths(d), stage_seed(config.seed, n, i))?.with_normalization(
                data.shift.to_vec(),
                scale,
                out_mean[0],
                out_scale,
            )?
        }
    };

    let batch = LossBatch {
        x: data.x,
        target,
        drift,
        dw: data.dw,
        dn: data.dn,
    };
    let numerical = |epoch: usize| Error::Numerical(format!("non-finite loss at step {n}, mode {}, epoch {epoch}", i + 1));
    let initial_loss = net.loss(&batch, None)?;
    if !initial_loss.is_finite() {
        return Err(numerical(0));
    }
    let mut adam = AdamState::for_network(&net, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((n * modes + i) as u64);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut grad = crate::net::Gradient(vec![0.0; net.param_count()]);
    let mut ws = net.workspace();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.minibatch) {
            match net.accumulate_gradient(&batch, chunk, &mut grad, &mut ws) {
                Ok(_) => {}
                Err(Error::Numerical(_)) => return Err(numerical(epoch)),
                Err(e) => return Err(e),
            }
            adam.step(&mut net, &grad, config.clamp)?;
        }
    }
    if config.refit_value_head {
        net.refit_value_head(&batch, 1e-10)?;
        if let Some(bound) = config.clamp {
            net.clamp(bound);
        }
    }
    let final_loss = net.loss(&batch, None)?;
    if !final_loss.is_finite() {
        return Err(numerical(config.epochs));
    }
    Ok((
        net,
        StageLog {
            step: n,
            mode: i,
            initial_loss,
            final_loss,
        },
    ))
}

/// Trains the full backward recursion on `batch`.
pub fn train_backward(problem: &SwitchingProblem, batch: &PathBatch, config: &TrainConfig) -> Result<TrainedSolution> {
    let grid = problem.grid();
    let d = problem.dim();
    let modes = problem.modes();
    ensure!(
        batch.grid() == grid,
        "path grid (T={}, M={}) does not match the problem grid (T={}, M={})",
        batch.grid().horizon,
        batch.grid().steps,
        grid.horizon,
        grid.steps
    );
    ensure!(batch.dim() == d, "paths have dimension {}, problem expects {d}", batch.dim());
    config.validate(batch.paths())?;
    let clock = Instant::now();
    let m = grid.steps;
    let dt = grid.dt();
    let payoff = problem.payoff();

    // Ŷ_{n+1}(X_{n+1}), path-major `paths × modes`.
    let mut target: Vec<f64> = batch
        .states_at(m)
        .chunks_exact(d)
        .flat_map(|x| (0..modes).map(move |i| payoff.terminal(x, i)))
        .collect();
    let mut nets: Vec<Vec<Network>> = vec![Vec::new(); m];
    let mut log = Vec::with_capacity(m * modes);

    for n in (0..m).rev() {
        let x = batch.states_at(n);
        let dw = batch.brownian_at(n);
        let dn = batch.compensated_at(n);
        let t = grid.time(n);
        let (shift, mut scale) = column_stats(&x, d);
        for (s, m) in scale.iter_mut().zip(&shift) {
            if *s <= 1e-12 * (1.0 + m.abs()) {
                *s = 0.0;
            }
        }
        let data = StageData {
            x: &x,
            dw: &dw,
            dn: &dn,
            shift: &shift,
            scale: &scale,
        };
        let previous = nets.get(n + 1).filter(|v| !v.is_empty() && config.warm_start);

        let trained: Vec<(Network, StageLog)> = (0..modes)
            .into_par_iter()
            .map(|i| {
                let tgt: Vec<f64> = target.iter().skip(i).step_by(modes).copied().collect();
                let drift: Vec<f64> = x.chunks_exact(d).map(|xr| payoff.running(t, xr, i) * dt).collect();
                train_stage(config, &data, &tgt, &drift, previous.map(|p| &p[i]), n, i, modes)
            })
            .collect::<Result<_>>()?;

        let stage: Vec<Network> = trained.iter().map(|(net, _)| net.clone()).collect();
        log.extend(trained.into_iter().map(|(_, l)| l));

        let mut cont = vec![0.0; batch.paths() * modes];
        let mut column = Vec::new();
        for (i, net) in stage.iter().enumerate() {
            net.values(&x, &mut column);
            for (p, v) in column.iter().enumerate() {
                cont[p * modes + i] = *v;
            }
        }
        target = reflect_batch(problem, &cont, &x, problem.is_switch_date(n));
        nets[n] = stage;
    }
    log.sort_by_key(|l| (l.step, l.mode));
    Ok(TrainedSolution {
        problem: problem.clone(),
        nets,
        log,
        config: config.clone(),
        path_seed: batch.seed(),
        paths: batch.paths(),
        seconds: clock.elapsed().as_secs_f64(),
    })
}

impl PartialEq for TrainedSolution {
    /// Weights and losses; wall time is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.nets == other.nets && self.log == other.log && self.config == other.config
    }
}

impl TrainedSolution {
    pub fn problem(&self) -> &SwitchingProblem {
        &self.problem
    }

    pub fn nets(&self) -> &[Vec<Network>] {
        &self.nets
    }

    pub fn network(&self, n: usize, mode: usize) -> Option<&Network> {
        self.nets.get(n).and_then(|s| s.get(mode))
    }

    pub fn log(&self) -> &[StageLog] {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn path_seed(&self) -> u64 {
        self.path_seed
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Training wall time in seconds (excludes path simulation).
    pub fn seconds(&self) -> f64 {
        self.seconds
    }

    fn check(&self, n: usize, mode: usize, x: &[f64]) -> Result<()> {
        let m = self.problem.grid().steps;
        ensure!(n <= m, "step {n} is past the terminal step {m}");
        ensure!(
            mode < self.problem.modes(),
            "mode {} out of range 1..={}",
            mode + 1,
            self.problem.modes()
        );
        let d = self.problem.dim();
        ensure!(
            !x.is_empty() && x.len() % d == 0,
            "state batch length {} is not a positive multiple of d = {d}",
            x.len()
        );
        Ok(())
    }

    /// Continuation values `Ỹ^j_n(x)` for every mode, `rows × I`. At `n = M`
    /// these are the terminal profits.
    pub fn continuations(&self, n: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(n, 0, x)?;
        let d = self.problem.dim();
        let modes = self.problem.modes();
        let rows = x.len() / d;
        let mut out = vec![0.0; rows * modes];
        if n == self.problem.grid().steps {
            let payoff = self.problem.payoff();
            for (o, xr) in out.chunks_exact_mut(modes).zip(x.chunks_exact(d)) {
                for (i, v) in o.iter_mut().enumerate() {
                    *v = payoff.terminal(xr, i);
                }
            }
            return Ok(out);
        }
        let mut column = Vec::new();
        for (i, net) in self.nets[n].iter().enumerate() {
            net.values(x, &mut column);
            for (r, v) in column.iter().enumerate() {
                out[r * modes + i] = *v;
            }
        }
        Ok(out)
    }

    /// Reflected value `Ŷ^i_n(x)` for each row of `x`. At `n = M` this is
    /// `g^i(x)` exactly.
    pub fn value_at(&self, n: usize, mode: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(n, mode, x)?;
        let d = self.problem.dim();
        let modes = self.problem.modes();
        let payoff = self.problem.payoff();
        if n == self.problem.grid().steps {
            return Ok(x.chunks_exact(d).map(|xr| payoff.terminal(xr, mode)).collect());
        }
        let cont = self.continuations(n, x)?;
        let at = self.problem.is_switch_date(n);
        let mut value = vec![0.0; modes];
        Ok(cont
            .chunks_exact(modes)
            .zip(x.chunks_exact(d))
            .map(|(c, xr)| {
                reflect(c, |a, b| payoff.cost(xr, a, b), at, &mut value);
                value[mode]
            })
            .collect())
    }

    /// Writes `weights/nXXXX_mY.bin`, `losses.csv` and `solution.toml`.
    pub fn save(&self, dir: impl AsRef<Path>, problem_fingerprint: &str) -> Result<()> {
        let dir = dir.as_ref();
        let weights = dir.join("weights");
        fs::create_dir_all(&weights).map_err(|e| Error::io(&weights, e))?;
        for (n, stage) in self.nets.iter().enumerate() {
            for (i, net) in stage.iter().enumerate() {
                let meta = SnapshotMeta {
                    seed: self.config.seed,
                    step: n as u64,
                    mode: i as u64,
                };
                save_network(net, meta, weights.join(weight_file(n, i)))?;
            }
        }
        let losses = dir.join("losses.csv");
        let mut csv = String::from("step,mode,initial_loss,final_loss\n");
        for l in &self.log {
            csv.push_str(&format!("{},{},{},{}\n", l.step, l.mode + 1, l.initial_loss, l.final_loss));
        }
        fs::write(&losses, csv).map_err(|e| Error::io(&losses, e))?;
        let meta = SolutionMeta {
            format: SOLUTION_FORMAT,
            problem_fingerprint: problem_fingerprint.to_owned(),
            horizon: self.problem.grid().horizon,
            steps: self.problem.grid().steps,
            dim: self.problem.dim(),
            modes: self.problem.modes(),
            switching: self.problem.switch_grid(),
            path_seed: self.path_seed,
            paths: self.paths,
            train_seconds: self.seconds,
            train: self.config.clone(),
        };
        let path = dir.join("solution.toml");
        let text = toml::to_string(&meta).map_err(|e| Error::Format(format!("solution manifest: {e}")))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads an archive written by [`TrainedSolution::save`] for `problem`.
    pub fn load(dir: impl AsRef<Path>, problem: &SwitchingProblem) -> Result<(Self, SolutionMeta)> {
        let dir = dir.as_ref();
        let path = dir.join("solution.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SolutionMeta =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ensure!(
            meta.format == SOLUTION_FORMAT,
            "solution format {} is not supported (expected {SOLUTION_FORMAT})",
            meta.format
        );
        ensure!(
            meta.steps == problem.grid().steps
                && meta.horizon == problem.grid().horizon
                && meta.dim == problem.dim()
                && meta.modes == problem.modes(),
            "solution (M={}, T={}, d={}, I={}) was trained for a different problem",
            meta.steps,
            meta.horizon,
            meta.dim,
            meta.modes
        );
        let mut nets = Vec::with_capacity(meta.steps);
        for n in 0..meta.steps {
            let mut stage = Vec::with_capacity(meta.modes);
            for i in 0..meta.modes {
                let (net, _) = load_network(dir.join("weights").join(weight_file(n, i)))?;
                ensure!(net.input_dim() == meta.dim, "weight file for step {n}, mode {} has the wrong input width", i + 1);
                stage.push(net);
            }
            nets.push(stage);
        }
        let losses_path = dir.join("losses.csv");
        let losses = fs::read_to_string(&losses_path).map_err(|e| Error::io(&losses_path, e))?;
        let bad = |line: usize| Error::Format(format!("{}: malformed line {line}", losses_path.display()));
        let mut log = Vec::new();
        for (k, line) in losses.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(k + 1));
            }
            let mode: usize = cols[1].parse().map_err(|_| bad(k + 1))?;
            log.push(StageLog {
                step: cols[0].parse().map_err(|_| bad(k + 1))?,
                mode: mode.checked_sub(1).ok_or_else(|| bad(k + 1))?,
                initial_loss: cols[2].parse().map_err(|_| bad(k + 1))?,
                final_loss: cols[3].parse().map_err(|_| bad(k + 1))?,
            });
        }
        let solution = Self {
            problem: problem.clone(),
            nets,
            log,
            config: meta.train.clone(),
            path_seed: meta.path_seed,
            paths: meta.paths,
            seconds: meta.train_seconds,
        };
        Ok((solution, meta))
    }
}

fn weight_file(n: usize, mode: usize) -> String {
    format!("n{n:04}_m{mode}.bin")
}

pub const SOLUTION_FORMAT: u32 = 1;

/// Contents of `solution.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub format: u32,
    pub problem_fingerprint: String,
    pub horizon: f64,
    pub steps: usize,
    pub dim: usize,
    pub modes: usize,
    pub switching: crate::SwitchGrid,
    pub path_seed: u64,
    pub paths: usize,
    pub train_seconds: f64,
    pub train: TrainConfig,
}

/// Regression estimates of the conditional expectations the stage network
/// approximates, on the states of `batch` at step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    /// `E[Ŷ_{n+1} + f Δt | X_n]`.
    pub y: Vec<f64>,
    /// `E[Ŷ_{n+1} ΔW | X_n] / Δt`, `rows × d`.
    pub z: Vec<f64>,
    /// `E[Ŷ_{n+1} ΔÑ | X_n] / E[ΔÑ²]`; absent without jumps.
    pub u: Option<Vec<f64>>,
}

pub fn optional_oracle_projections(
    solution: &TrainedSolution,
    batch: &PathBatch,
    n: usize,
    mode: usize,
    basis: &BasisSpec,
) -> Result<Projections> {
    let problem = solution.problem();
    let m = problem.grid().steps;
    ensure!(n < m, "projections need a step before the terminal one (got {n}, M = {m})");
    ensure!(batch.grid() == problem.grid(), "path grid does not match the solution grid");
    let d = problem.dim();
    let dt = problem.grid().dt();
    let t = problem.grid().time(n);
    let x = batch.states_at(n);
    let next = solution.value_at(n + 1, mode, &batch.states_at(n + 1))?;
    let dw = batch.brownian_at(n);
    let dn = batch.compensated_at(n);
    let payoff = problem.payoff();

    let mut responses: Vec<Vec<f64>> = Vec::with_capacity(d + 2);
    responses.push(
        next.iter()
            .zip(x.chunks_exact(d))
            .map(|(v, xr)| v + payoff.running(t, xr, mode) * dt)
            .collect(),
    );
    for k in 0..d {
        responses.push(next.iter().enumerate().map(|(p, v)| v * dw[p * d + k] / dt).collect());
    }
    let jump_var = dn.iter().map(|v| v * v).sum::<f64>() / dn.len() as f64;
    let has_jumps = jump_var > 0.0;
    if has_jumps {
        responses.push(next.iter().zip(&dn).map(|(v, j)| v * j / jump_var).collect());
    }
    let refs: Vec<&[f64]> = responses.iter().map(|r| r.as_slice()).collect();
    let fits = fit_many(basis, &x, d, &refs, Some(1e-8))?;
    let predict = |k: usize| -> Vec<f64> { x.chunks_exact(d).map(|xr| fits[k].predict(xr)).collect() };
    let y = predict(0);
    let zc: Vec<Vec<f64>> = (0..d).map(|k| predict(1 + k)).collect();
    let rows = x.len() / d;
    let mut z = vec![0.0; rows * d];
    for (k, col) in zc.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            z[r * d + k] = *v;
        }
    }
    let u = has_jumps.then(|| predict(d + 1));
    Ok(Projections { y, z, u })
}

/// One line per stage: `step,mode,initial_loss,final_loss`.
pub fn write_training_log(log: &[StageLog], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "step,mode,initial_loss,final_loss")?;
    for l in log {
        writeln!(w, "{},{},{},{}", l.step, l.mode + 1, l.initial_loss, l.final_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClConfig, ModelConfig};

    fn small() -> (crate::models::Model, PathBatch, TrainConfig) {
        let cfg = ModelConfig::Cl(ClConfig {
            steps: 6,
            ..ClConfig::default()
        });
        let model = cfg.build().unwrap();
        let batch = model.simulate(96, 11).unwrap();
        let train = TrainConfig {
            epochs: 2,
            minibatch: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        (model, batch, train)
    }

    #[test]
    fn terminal_value_is_the_terminal_profit() {
        let (model, batch, train) = small();
        let sol = train_backward(model.problem(), &batch, &train).unwrap();
        let xm = batch.states_at(6);
        for i in 0..3 {
            let v = sol.value_at(6, i, &xm).unwrap();
            for (vp, x) in v.iter().zip(xm.chunks_exact(2)) {
                assert_eq!(*vp, model.problem().payoff().terminal(x, i));
            }
        }
        assert_eq!(sol.log().len(), 6 * 3);
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let (model, batch, train) = small();
        let a = train_backward(model.problem(), &batch, &train).unwrap();
        let b = train_backward(model.problem(), &batch, &train).unwrap();
        assert!(a == b);

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), "abc").unwrap();
        let (loaded, meta) = TrainedSolution::load(dir.path(), model.problem()).unwrap();
        assert!(loaded == a);
        assert_eq!(meta.problem_fingerprint, "abc");
        assert_eq!(meta.path_seed, 11);
    }

    #[test]
    fn reflected_value_dominates_switching() {
        let (model, batch, train) = small();
        let sol = train_backward(model.problem(), &batch, &train).unwrap();
        let x = batch.states_at(2);
        let cont = sol.continuations(2, &x).unwrap();
        for i in 0..3 {
            let v = sol.value_at(2, i, &x).unwrap();
            for (r, xr) in x.chunks_exact(2).enumerate() {
                for j in 0..3 {
                    let c = model.problem().payoff().cost(xr, i, j);
                    assert!(v[r] >= cont[r * 3 + j] - c);
                }
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (model, batch, train) = small();
        let other = ModelConfig::Cl(ClConfig::default()).build().unwrap();
        assert!(train_backward(other.problem(), &batch, &train).is_err());
        let big = TrainConfig {
            minibatch: 1000,
            ..train.clone()
        };
        assert!(train_backward(model.problem(), &batch, &big).is_err());
        let sol = train_backward(model.problem(), &batch, &train).unwrap();
        assert!(sol.continuations(7, &[50.0, 6.0]).is_err());
        assert!(sol.value_at(0, 3, &[50.0, 6.0]).is_err());
        assert!(sol.continuations(0, &[50.0]).is_err());
    }
}
