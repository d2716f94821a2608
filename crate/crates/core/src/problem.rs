//! Switching problem definition and the reflection (switching max) step.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::TimeGrid;
use crate::Scalar;

/// Running profit, terminal profit and switching costs of a problem.
///
/// Modes are indexed from zero.
pub trait Payoff: Send + Sync + Debug {
    fn modes(&self) -> usize;
    fn dim(&self) -> usize;
    /// Running profit rate `f_i(t, x)`.
    fn running(&self, t: f64, x: &[f64], mode: usize) -> f64;
    /// Terminal profit `g^i(x)`.
    fn terminal(&self, x: &[f64], mode: usize) -> f64;
    /// Cost `C_{i,j}(x)` of switching from `from` to `to`.
    fn cost(&self, x: &[f64], from: usize, to: usize) -> f64;
}

/// Grid nodes at which the controller may switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SwitchGrid {
    /// Every node `t_0..t_{M-1}`.
    #[default]
    Every,
    /// Spacing of about `T/√M`: every `round(√M)`-th node from `t_0`.
    Sqrt,
    /// Every `k`-th node from `t_0`.
    Stride(usize),
}

impl SwitchGrid {
    pub fn stride(&self, steps: usize) -> usize {
        match *self {
            SwitchGrid::Every => 1,
            SwitchGrid::Sqrt => ((steps as f64).sqrt().round() as usize).max(1),
            SwitchGrid::Stride(k) => k.max(1),
        }
    }

    /// Whether `t_n` is a switching date. The terminal node never is.
    pub fn contains(&self, n: usize, steps: usize) -> bool {
        n < steps && n % self.stride(steps) == 0
    }
}

/// A full problem: payoff structure, time grid and switching dates.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    payoff: Arc<dyn Payoff>,
    grid: TimeGrid,
    switching: SwitchGrid,
}

impl SwitchingProblem {
    pub fn new(payoff: Arc<dyn Payoff>, grid: TimeGrid, switching: SwitchGrid) -> Result<Self> {
        ensure!(payoff.modes() >= 1, "problem needs at least one mode");
        ensure!(payoff.dim() >= 1, "problem needs a state dimension >= 1");
        if let SwitchGrid::Stride(k) = switching {
            ensure!(k >= 1, "switching stride must be >= 1");
        }
        Ok(Self {
            payoff,
            grid,
            switching,
        })
    }

    pub fn payoff(&self) -> &dyn Payoff {
        self.payoff.as_ref()
    }

    pub fn modes(&self) -> usize {
        self.payoff.modes()
    }

    pub fn dim(&self) -> usize {
        self.payoff.dim()
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn switch_grid(&self) -> SwitchGrid {
        self.switching
    }

    pub fn is_switch_date(&self, n: usize) -> bool {
        self.switching.contains(n, self.grid.steps)
    }

    pub fn cost_matrix(&self, x: &[f64]) -> Vec<f64> {
        let m = self.modes();
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = self.payoff.cost(x, i, j);
            }
        }
        out
    }
}

/// Best mode to hold from `incumbent` given per-mode continuation values and
/// a cost function: `argmax_j (cont_j - C_{i,j})`, ties kept by the
/// incumbent, then by the lowest index. Returns the mode and its net value.
pub fn best_switch<T: Scalar>(cont: &[T], incumbent: usize, cost: impl Fn(usize, usize) -> T) -> (usize, T) {
    let mut best = incumbent;
    let mut value = cont[incumbent];
    for (j, &c) in cont.iter().enumerate() {
        if j == incumbent {
            continue;
        }
        let net = c - cost(incumbent, j);
        if net > value {
            best = j;
            value = net;
        }
    }
    (best, value)
}

/// Reflection for one state: on switching dates
/// `value_i = max(cont_i, max_{j≠i} cont_j - C_{i,j})`, otherwise the
/// continuation unchanged.
pub fn reflect<T: Scalar>(cont: &[T], cost: impl Fn(usize, usize) -> T, at_switch_date: bool, out: &mut [T]) {
    if !at_switch_date {
        out.copy_from_slice(cont);
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = best_switch(cont, i, &cost).1;
    }
}

/// Reflection over a batch: `continuations` is `rows × I`, `x` is
/// `rows × d`; returns `rows × I` values.
pub fn reflect_batch(
    problem: &SwitchingProblem,
    continuations: &[f64],
    x: &[f64],
    at_switch_date: bool,
) -> Vec<f64> {
    let modes = problem.modes();
    let d = problem.dim();
    let mut out = vec![0.0; continuations.len()];
    for ((cont, xr), o) in continuations
        .chunks_exact(modes)
        .zip(x.chunks_exact(d))
        .zip(out.chunks_exact_mut(modes))
    {
        reflect(cont, |i, j| problem.payoff().cost(xr, i, j), at_switch_date, o);
    }
    out
}

/// A sampled breach of the switching-cost conditions.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonZeroDiagonal { sample: usize, mode: usize, cost: f64 },
    NonPositiveCost { sample: usize, from: usize, to: usize, cost: f64 },
    Triangle { sample: usize, i: usize, j: usize, k: usize, via: f64, direct: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Smallest off-diagonal cost seen (the empirical `ε`).
    pub min_switch_cost: f64,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn compliant(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks zero diagonal, strictly positive off-diagonal costs, and the
/// triangle inequality `C_ij + C_jk ≥ C_ik` on every sampled state.
pub fn validate_assumptions(problem: &SwitchingProblem, samples: &[f64]) -> Result<AssumptionReport> {
    let d = problem.dim();
    let m = problem.modes();
    ensure!(
        !samples.is_empty() && samples.len() % d == 0,
        "need at least one sample state of dimension {d}"
    );
    let mut violations = Vec::new();
    let mut min_cost = f64::INFINITY;
    for (s, x) in samples.chunks_exact(d).enumerate() {
        let c = problem.cost_matrix(x);
        for i in 0..m {
            let diag = c[i * m + i];
            if diag != 0.0 {
                violations.push(Violation::NonZeroDiagonal { sample: s, mode: i, cost: diag });
            }
            for j in 0..m {
                if i == j {
                    continue;
                }
                let cij = c[i * m + j];
                min_cost = min_cost.min(cij);
                if !(cij > 0.0) {
                    violations.push(Violation::NonPositiveCost { sample: s, from: i, to: j, cost: cij });
                }
                for k in 0..m {
                    let via = cij + c[j * m + k];
                    let direct = c[i * m + k];
                    let slack = 1e-12 * (via.abs() + direct.abs());
                    if !(via + slack >= direct) {
                        violations.push(Violation::Triangle { sample: s, i, j, k, via, direct });
                    }
                }
            }
        }
    }
    Ok(AssumptionReport {
        samples: samples.len() / d,
        min_switch_cost: if m > 1 { min_cost } else { f64::NAN },
        violations,
    })
}
