//! Forward use of a trained solution: switching decisions, realized payoffs
//! on fresh paths, and decision maps over two state coordinates.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::lsmc::mean_and_stderr;
use crate::osj::TrainedSolution;
use crate::paths::PathBatch;
use crate::problem::{best_switch, SwitchingProblem};

/// Mode to hold over `[t_n, t_{n+1})` coming from `incumbent`:
/// `argmax_j (Ỹ^j_n(x) - C_{i,j}(x))`, ties kept by the incumbent. Off
/// switching dates the incumbent is returned.
pub fn decide(solution: &TrainedSolution, n: usize, incumbent: usize, x: &[f64]) -> Result<usize> {
    let problem = solution.problem();
    ensure!(
        incumbent < problem.modes(),
        "mode {} out of range 1..={}",
        incumbent + 1,
        problem.modes()
    );
    ensure!(x.len() == problem.dim(), "state has length {}, expected {}", x.len(), problem.dim());
    if !problem.is_switch_date(n) {
        return Ok(incumbent);
    }
    let cont = solution.continuations(n, x)?;
    Ok(best_switch(&cont, incumbent, |a, b| problem.payoff().cost(x, a, b)).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub mean_switches: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub start_mode: usize,
    pub payoffs: Vec<f64>,
    pub switches: Vec<u32>,
    /// Mode held over each interval, `paths × M`.
    pub modes: Vec<u8>,
    pub steps: usize,
    pub summary: Summary,
}

impl StrategyOutcome {
    pub fn path_modes(&self, path: usize) -> &[u8] {
        &self.modes[path * self.steps..(path + 1) * self.steps]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RolloutOptions {
    /// Accept the training paths themselves (diagnoses overfitting).
    pub allow_in_sample: bool,
}

/// Runs the learned policy from `start_mode` on every path of `batch`.
pub fn rollout(
    solution: &TrainedSolution,
    batch: &PathBatch,
    start_mode: usize,
    options: RolloutOptions,
) -> Result<StrategyOutcome> {
    let problem = solution.problem();
    let grid = problem.grid();
    ensure!(
        batch.grid() == grid && batch.dim() == problem.dim(),
        "evaluation paths (d={}, M={}) do not match the solution (d={}, M={})",
        batch.dim(),
        batch.grid().steps,
        problem.dim(),
        grid.steps
    );
    ensure!(
        start_mode < problem.modes(),
        "start mode {} out of range 1..={}",
        start_mode + 1,
        problem.modes()
    );
    ensure!(problem.modes() <= 256, "mode trajectories are stored as bytes (at most 256 modes)");
    ensure!(
        options.allow_in_sample || batch.seed() != solution.path_seed(),
        "evaluation paths share the training seed {}; use a fresh seed or allow in-sample evaluation",
        batch.seed()
    );
    let m = grid.steps;
    let dt = grid.dt();
    let payoff = problem.payoff();
    let mut modes = vec![0u8; batch.paths() * m];
    let results: Vec<(f64, u32)> = modes
        .par_chunks_mut(m)
        .enumerate()
        .map(|(p, traj)| -> Result<(f64, u32)> {
            let mut mode = start_mode;
            let mut total = 0.0;
            let mut switches = 0;
            for (n, slot) in traj.iter_mut().enumerate() {
                let x = batch.state(p, n);
                let next = decide(solution, n, mode, x)?;
                if next != mode {
                    total -= payoff.cost(x, mode, next);
                    switches += 1;
                    mode = next;
                }
                *slot = mode as u8;
                total += payoff.running(grid.time(n), x, mode) * dt;
            }
            total += payoff.terminal(batch.state(p, m), mode);
            Ok((total, switches))
        })
        .collect::<Result<_>>()?;
    let payoffs: Vec<f64> = results.iter().map(|r| r.0).collect();
    let switches: Vec<u32> = results.iter().map(|r| r.1).collect();
    let (mean, stderr) = mean_and_stderr(&payoffs);
    let mean_switches = switches.iter().map(|&s| s as f64).sum::<f64>() / switches.len() as f64;
    Ok(StrategyOutcome {
        start_mode,
        payoffs,
        switches,
        modes,
        steps: m,
        summary: Summary {
            mean,
            stderr,
            mean_switches,
        },
    })
}

/// Payoff of holding `modes[n]` over each interval of path `p`, starting
/// from `start_mode`: running profit, minus a cost at every change, plus the
/// terminal profit of the last mode.
pub fn realized_payoff(problem: &SwitchingProblem, batch: &PathBatch, p: usize, start_mode: usize, modes: &[u8]) -> f64 {
    let grid = problem.grid();
    let payoff = problem.payoff();
    let mut prev = start_mode;
    let mut running = 0.0;
    let mut costs = 0.0;
    for (n, &a) in modes.iter().enumerate() {
        let x = batch.state(p, n);
        let a = a as usize;
        costs += payoff.cost(x, prev, a);
        running += payoff.running(grid.time(n), x, a) * grid.dt();
        prev = a;
    }
    running - costs + payoff.terminal(batch.state(p, grid.steps), prev)
}

/// Rectangle over two state coordinates, other coordinates held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSpec {
    pub axes: [usize; 2],
    pub ranges: [(f64, f64); 2],
    /// Full state supplying the non-axis coordinates.
    pub fixed: Vec<f64>,
    pub resolution: [usize; 2],
}

impl HeatmapSpec {
    /// Non-axis coordinates at their average over `batch` at step `n`; each
    /// axis spans `average · (1 ± relative_width)`.
    pub fn around_average(
        batch: &PathBatch,
        n: usize,
        axes: [usize; 2],
        relative_width: f64,
        resolution: [usize; 2],
    ) -> Result<Self> {
        let d = batch.dim();
        ensure!(n <= batch.grid().steps, "step {n} is past the terminal step");
        ensure!(axes[0] < d && axes[1] < d, "heatmap axes out of range for d = {d}");
        ensure!(
            relative_width.is_finite() && relative_width >= 0.0,
            "relative width must be >= 0"
        );
        let x = batch.states_at(n);
        let rows = batch.paths() as f64;
        let fixed: Vec<f64> = (0..d).map(|k| x.iter().skip(k).step_by(d).sum::<f64>() / rows).collect();
        let ranges = axes.map(|a| {
            let half = relative_width * fixed[a].abs();
            (fixed[a] - half, fixed[a] + half)
        });
        Ok(Self {
            axes,
            ranges,
            fixed,
            resolution,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub step: usize,
    pub incumbent: usize,
    pub spec: HeatmapSpec,
    /// `(coord1, coord2, mode)` rows, first axis varying slowest.
    pub cells: Vec<(f64, f64, usize)>,
}

impl Heatmap {
    pub fn fraction(&self, mode: usize) -> f64 {
        self.cells.iter().filter(|c| c.2 == mode).count() as f64 / self.cells.len() as f64
    }
}

fn axis_points((lo, hi): (f64, f64), count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

pub fn heatmap(solution: &TrainedSolution, n: usize, incumbent: usize, spec: &HeatmapSpec) -> Result<Heatmap> {
    let d = solution.problem().dim();
    let [a, b] = spec.axes;
    ensure!(a < d && b < d, "heatmap axes ({}, {}) out of range for d = {d}", a + 1, b + 1);
    ensure!(a != b, "heatmap axes must be distinct");
    ensure!(spec.fixed.len() == d, "fixed state has length {}, expected {d}", spec.fixed.len());
    ensure!(
        spec.resolution.iter().all(|&r| r >= 1),
        "heatmap resolution must be >= 1 on both axes"
    );
    ensure!(
        spec.ranges.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi),
        "heatmap ranges must be finite with lo <= hi"
    );
    ensure!(n <= solution.problem().grid().steps, "step {n} is past the terminal step");
    let xs = axis_points(spec.ranges[0], spec.resolution[0]);
    let ys = axis_points(spec.ranges[1], spec.resolution[1]);
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    let mut state = spec.fixed.clone();
    for &u in &xs {
        for &v in &ys {
            state[a] = u;
            state[b] = v;
            cells.push((u, v, decide(solution, n, incumbent, &state)?));
        }
    }
    Ok(Heatmap {
        step: n,
        incumbent,
        spec: spec.clone(),
        cells,
    })
}

/// Comment header with the map's metadata, then `coord1,coord2,mode` rows
/// (coordinates and modes 1-based).
pub fn write_heatmap_csv(map: &Heatmap, w: &mut impl Write) -> std::io::Result<()> {
    let s = &map.spec;
    writeln!(w, "# step={} incumbent={}", map.step, map.incumbent + 1)?;
    writeln!(
        w,
        "# axis1=x{} range=[{},{}] points={}",
        s.axes[0] + 1,
        s.ranges[0].0,
        s.ranges[0].1,
        s.resolution[0]
    )?;
    writeln!(
        w,
        "# axis2=x{} range=[{},{}] points={}",
        s.axes[1] + 1,
        s.ranges[1].0,
        s.ranges[1].1,
        s.resolution[1]
    )?;
    let fixed: Vec<String> = s.fixed.iter().map(|v| v.to_string()).collect();
    writeln!(w, "# fixed={}", fixed.join(";"))?;
    writeln!(w, "coord1,coord2,mode")?;
    for (u, v, m) in &map.cells {
        writeln!(w, "{u},{v},{}", m + 1)?;
    }
    Ok(())
}

/// `mode_start,mean,stderr,mean_switches`, modes 1-based.
pub fn write_outcome_csv(outcomes: &[StrategyOutcome], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "mode_start,mean,stderr,mean_switches")?;
    for o in outcomes {
        let s = o.summary;
        writeln!(w, "{},{},{},{}", o.start_mode + 1, s.mean, s.stderr, s.mean_switches)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClConfig, ModelConfig};
    use crate::net::TrainConfig;
    use crate::osj::train_backward;

    fn trained() -> (crate::models::Model, TrainedSolution) {
        let cfg = ModelConfig::Cl(ClConfig {
            steps: 5,
            ..ClConfig::default()
        });
        let model = cfg.build().unwrap();
        let batch = model.simulate(64, 1).unwrap();
        let train = TrainConfig {
            epochs: 1,
            minibatch: 32,
            ..TrainConfig::default()
        };
        let sol = train_backward(model.problem(), &batch, &train).unwrap();
        (model, sol)
    }

    #[test]
    fn rollout_matches_recomputed_payoff() {
        let (model, sol) = trained();
        let eval = model.simulate(40, 2).unwrap();
        for start in 0..3 {
            let out = rollout(&sol, &eval, start, RolloutOptions::default()).unwrap();
            for p in 0..eval.paths() {
                let again = realized_payoff(model.problem(), &eval, p, start, out.path_modes(p));
                assert!((again - out.payoffs[p]).abs() <= 1e-12 * (1.0 + again.abs()));
                let changes = out
                    .path_modes(p)
                    .iter()
                    .scan(start as u8, |prev, &m| {
                        let c = m != *prev;
                        *prev = m;
                        Some(c as u32)
                    })
                    .sum::<u32>();
                assert_eq!(changes, out.switches[p]);
            }
        }
    }

    #[test]
    fn training_paths_need_explicit_opt_in() {
        let (model, sol) = trained();
        let same = model.simulate(64, 1).unwrap();
        assert!(rollout(&sol, &same, 0, RolloutOptions::default()).is_err());
        let opt_in = RolloutOptions { allow_in_sample: true };
        assert!(rollout(&sol, &same, 0, opt_in).is_ok());
    }

    #[test]
    fn heatmap_shape_and_validation() {
        let (model, sol) = trained();
        let spec = HeatmapSpec {
            axes: [0, 1],
            ranges: [(30.0, 70.0), (4.0, 8.0)],
            fixed: model.initial_state().to_vec(),
            resolution: [4, 3],
        };
        let map = heatmap(&sol, 2, 1, &spec).unwrap();
        assert_eq!(map.cells.len(), 12);
        assert_eq!(map.cells[0].0, 30.0);
        assert_eq!(map.cells[11], (70.0, 8.0, map.cells[11].2));
        let total: f64 = (0..3).map(|m| map.fraction(m)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // The terminal node is never a switching date.
        assert_eq!(heatmap(&sol, 5, 1, &spec).unwrap().fraction(1), 1.0);

        let bad_axes = HeatmapSpec { axes: [0, 0], ..spec.clone() };
        assert!(heatmap(&sol, 2, 1, &bad_axes).is_err());
        let bad_range = HeatmapSpec {
            ranges: [(1.0, 0.0), (4.0, 8.0)],
            ..spec.clone()
        };
        assert!(heatmap(&sol, 2, 1, &bad_range).is_err());
        assert!(heatmap(&sol, 6, 1, &spec).is_err());
    }

    #[test]
    fn average_centred_spec() {
        let (model, _) = trained();
        let batch = model.simulate(50, 9).unwrap();
        let spec = HeatmapSpec::around_average(&batch, 0, [0, 1], 0.5, [3, 3]).unwrap();
        assert_eq!(spec.fixed, model.initial_state());
        assert_eq!(spec.ranges[0], (25.0, 75.0));
        assert_eq!(spec.ranges[1], (3.0, 9.0));
    }
}
