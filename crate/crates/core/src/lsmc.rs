//! Longstaff–Schwartz regression baseline.
//!
//! Backward over the grid, each path carries its realized value in every
//! mode. At a switching date the realized one-step continuation
//! `y_j = f_j Δt + V_j` is regressed on a polynomial basis of `X_n`; the
//! regression only picks the mode, while the value carried back is the
//! realized `y_{j*} - C_{i,j*}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::paths::PathBatch;
use crate::problem::{best_switch, SwitchingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Highest total polynomial degree.
    pub degree: usize,
    /// Include mixed monomials; otherwise only powers of single coordinates.
    pub cross_terms: bool,
    /// Regress on `log x` for coordinates that are positive on every path.
    pub log_transform: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            cross_terms: true,
            log_transform: true,
        }
    }
}

impl BasisSpec {
    /// Monomial exponents over `dim` variables, constant first, ordered by
    /// total degree so lower-degree bases are prefixes of higher ones.
    pub fn exponents(&self, dim: usize) -> Vec<Vec<u32>> {
        let mut out = vec![vec![0; dim]];
        for total in 1..=self.degree as u32 {
            if self.cross_terms {
                let mut current = vec![0u32; dim];
                push_compositions(total, 0, &mut current, &mut out);
            } else {
                for k in 0..dim {
                    let mut e = vec![0; dim];
                    e[k] = total;
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn size(&self, dim: usize) -> usize {
        self.exponents(dim).len()
    }
}

fn push_compositions(left: u32, k: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if k + 1 == current.len() {
        current[k] = left;
        out.push(current.clone());
        current[k] = 0;
        return;
    }
    for e in (0..=left).rev() {
        current[k] = e;
        push_compositions(left - e, k + 1, current, out);
    }
    current[k] = 0;
}

/// Coordinate map applied before the basis: optional log, then
/// standardization. Coordinates without spread are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub log: Vec<bool>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Indices of coordinates kept.
    pub active: Vec<usize>,
}

impl Transform {
    pub fn fit(x: &[f64], dim: usize, log_transform: bool) -> Self {
        let rows = x.len() / dim;
        let log: Vec<bool> = (0..dim)
            .map(|k| log_transform && x.chunks_exact(dim).all(|r| r[k] > 0.0))
            .collect();
        let value = |r: &[f64], k: usize| if log[k] { r[k].ln() } else { r[k] };
        let mut shift = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        let mut active = Vec::new();
        for k in 0..dim {
            let mean = x.chunks_exact(dim).map(|r| value(r, k)).sum::<f64>() / rows as f64;
            let var = x.chunks_exact(dim).map(|r| (value(r, k) - mean).powi(2)).sum::<f64>() / rows as f64;
            shift[k] = mean;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                scale[k] = sd;
                active.push(k);
            }
        }
        Self { log, shift, scale, active }
    }

    fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.active) {
            let v = if self.log[k] { row[k].ln() } else { row[k] };
            *o = (v - self.shift[k]) / self.scale[k];
        }
    }
}

/// A fitted regression of one response on the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub transform: Transform,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    /// In-sample residual sum of squares.
    pub residual_ss: f64,
    pub ridge_used: bool,
}

impl Regression {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut z = vec![0.0; self.transform.active.len()];
        self.transform.apply(row, &mut z);
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial(&z, e))
            .sum()
    }
}

fn monomial(z: &[f64], e: &[u32]) -> f64 {
    z.iter().zip(e).fold(1.0, |acc, (&v, &p)| acc * v.powi(p as i32))
}

fn design(x: &[f64], dim: usize, transform: &Transform, exponents: &[Vec<u32>]) -> Vec<f64> {
    let k = exponents.len();
    let rows = x.len() / dim;
    let mut a = vec![0.0; rows * k];
    a.par_chunks_mut(k).zip(x.par_chunks(dim)).for_each(|(out, row)| {
        let mut z = vec![0.0; transform.active.len()];
        transform.apply(row, &mut z);
        for (o, e) in out.iter_mut().zip(exponents) {
            *o = monomial(&z, e);
        }
    });
    a
}

/// Cholesky factor of the Gram matrix, with the ridge applied when the plain
/// factorization fails or is numerically singular.
fn factor(gram: &DMatrix<f64>, ridge: Option<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let k = gram.nrows();
    let singular = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        let l = c.l_dirty();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let top = diag.iter().cloned().fold(0.0, f64::max);
        diag.iter().any(|&v| !(v > 1e-12 * top))
    };
    if let Some(c) = gram.clone().cholesky() {
        if !singular(&c) {
            return Ok((c, false));
        }
    }
    let Some(r) = ridge else {
        return Err(Error::Numerical(format!(
            "regression design of {k} basis functions is rank deficient and no ridge is configured"
        )));
    };
    let mut g = gram.clone();
    for i in 0..k {
        g[(i, i)] += r;
    }
    let c = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge-regularized regression is still singular".into()))?;
    Ok((c, true))
}

/// Least-squares fit of several responses sharing one design: `x` is
/// `rows × dim`, each entry of `ys` has `rows` values.
pub fn fit_many(
    basis: &BasisSpec,
    x: &[f64],
    dim: usize,
    ys: &[&[f64]],
    ridge: Option<f64>,
) -> Result<Vec<Regression>> {
    ensure!(dim >= 1 && !x.is_empty() && x.len() % dim == 0, "regression states must be rows × {dim}");
    let rows = x.len() / dim;
    ensure!(ys.iter().all(|y| y.len() == rows), "every response needs {rows} values");
    let transform = Transform::fit(x, dim, basis.log_transform);
    let exponents = basis.exponents(transform.active.len());
    let k = exponents.len();
    let a = design(x, dim, &transform, &exponents);

    let inv = 1.0 / rows as f64;
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for row in a.chunks_exact(k) {
        for i in 0..k {
            for j in 0..=i {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            gram[(i, j)] *= inv;
            gram[(j, i)] = gram[(i, j)];
        }
    }
    let (chol, ridge_used) = factor(&gram, ridge)?;

    ys.iter()
        .map(|y| {
            let mut rhs = DVector::<f64>::zeros(k);
            for (row, &v) in a.chunks_exact(k).zip(y.iter()) {
                for i in 0..k {
                    rhs[i] += row[i] * v;
                }
            }
            rhs *= inv;
            let coef = chol.solve(&rhs);
            let residual_ss = a
                .chunks_exact(k)
                .zip(y.iter())
                .map(|(row, &v)| {
                    let fit: f64 = row.iter().zip(coef.iter()).map(|(a, c)| a * c).sum();
                    (v - fit).powi(2)
                })
                .sum();
            if coef.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numerical("regression produced non-finite coefficients".into()));
            }
            Ok(Regression {
                transform: transform.clone(),
                exponents: exponents.clone(),
                coefficients: coef.iter().copied().collect(),
                residual_ss,
                ridge_used,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcConfig {
    pub basis: BasisSpec,
    /// Ridge added to the normalized Gram matrix on rank deficiency.
    pub ridge: Option<f64>,
    /// Largest state dimension accepted.
    pub max_dim: usize,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self {
            basis: BasisSpec::default(),
            ridge: Some(1e-8),
            max_dim: 5,
        }
    }
}

/// Per-mode continuation regressions at one switching date.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionStage {
    pub step: usize,
    pub per_mode: Vec<Regression>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmcResult {
    /// Stages at switching dates, in increasing step order.
    pub stages: Vec<RegressionStage>,
    /// `V(0, x0, i)` after the time-0 switching decision.
    pub values: Vec<f64>,
    /// Value of holding mode `i` over the first interval, before any
    /// switching at `t_0`.
    pub continuation: Vec<f64>,
    /// Standard errors of `continuation`.
    pub continuation_stderr: Vec<f64>,
}

pub fn fit_lsmc(problem: &SwitchingProblem, batch: &PathBatch, config: &LsmcConfig) -> Result<LsmcResult> {
    let d = problem.dim();
    let modes = problem.modes();
    let grid = problem.grid();
    ensure!(
        batch.grid() == grid,
        "path grid (T={}, M={}) does not match the problem grid (T={}, M={})",
        batch.grid().horizon,
        batch.grid().steps,
        grid.horizon,
        grid.steps
    );
    ensure!(batch.dim() == d, "paths have dimension {}, problem expects {d}", batch.dim());
    ensure!(
        d <= config.max_dim,
        "regression baseline limited to d <= {} (got {d}); raise max_dim to override",
        config.max_dim
    );
    let paths = batch.paths();
    let m = grid.steps;
    let dt = grid.dt();
    let payoff = problem.payoff();

    // Pathwise values, path-major `paths × modes`.
    let x_m = batch.states_at(m);
    let mut value: Vec<f64> = x_m
        .chunks_exact(d)
        .flat_map(|x| (0..modes).map(move |i| payoff.terminal(x, i)))
        .collect();
    let mut cont = vec![0.0; paths * modes];
    let mut stages = Vec::new();

    for n in (0..m).rev() {
        let x = batch.states_at(n);
        let t = grid.time(n);
        for p in 0..paths {
            let xr = &x[p * d..(p + 1) * d];
            for j in 0..modes {
                cont[p * modes + j] = payoff.running(t, xr, j) * dt + value[p * modes + j];
            }
        }
        if n == 0 {
            break;
        }
        if !problem.is_switch_date(n) || modes == 1 {
            value.copy_from_slice(&cont);
            continue;
        }
        let columns: Vec<Vec<f64>> = (0..modes)
            .map(|j| cont.iter().skip(j).step_by(modes).copied().collect())
            .collect();
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let fits = fit_many(&config.basis, &x, d, &refs, config.ridge)
            .map_err(|e| Error::Numerical(format!("regression at step {n}: {e}")))?;
        value
            .par_chunks_mut(modes)
            .zip(cont.par_chunks(modes))
            .zip(x.par_chunks(d))
            .for_each(|((v, c), xr)| {
                let est: Vec<f64> = fits.iter().map(|r| r.predict(xr)).collect();
                for (i, vi) in v.iter_mut().enumerate() {
                    let (j, _) = best_switch(&est, i, |a, b| payoff.cost(xr, a, b));
                    *vi = c[j] - payoff.cost(xr, i, j);
                }
            });
        stages.push(RegressionStage { step: n, per_mode: fits });
    }
    stages.reverse();

    // All paths share X_0, so the time-0 regression is the sample mean.
    let x0 = batch.state(0, 0);
    let mut continuation = Vec::with_capacity(modes);
    let mut continuation_stderr = Vec::with_capacity(modes);
    for j in 0..modes {
        let col: Vec<f64> = cont.iter().skip(j).step_by(modes).copied().collect();
        let (mean, se) = mean_and_stderr(&col);
        continuation.push(mean);
        continuation_stderr.push(se);
    }
    let values = (0..modes)
        .map(|i| {
            if problem.is_switch_date(0) {
                best_switch(&continuation, i, |a, b| payoff.cost(x0, a, b)).1
            } else {
                continuation[i]
            }
        })
        .collect();
    Ok(LsmcResult {
        stages,
        values,
        continuation,
        continuation_stderr,
    })
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Difference between two per-mode value vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: usize,
    pub osj: f64,
    pub ls: f64,
    /// `|osj - ls| / |ls|`, or `|osj - ls|` when `absolute`.
    pub diff: f64,
    /// Set when the baseline is too close to zero for a relative measure.
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    /// Mean of `diff` over modes.
    pub average: f64,
}

pub fn compare(osj: &[f64], ls: &[f64]) -> Result<Comparison> {
    ensure!(
        osj.len() == ls.len() && !osj.is_empty(),
        "need one value per mode on both sides ({} vs {})",
        osj.len(),
        ls.len()
    );
    let rows: Vec<CompareRow> = osj
        .iter()
        .zip(ls)
        .enumerate()
        .map(|(mode, (&o, &l))| {
            let absolute = l.abs() < 1e-9;
            let gap = (o - l).abs();
            CompareRow {
                mode,
                osj: o,
                ls: l,
                diff: if absolute { gap } else { gap / l.abs() },
                absolute,
            }
        })
        .collect();
    let average = rows.iter().map(|r| r.diff).sum::<f64>() / rows.len() as f64;
    Ok(Comparison { rows, average })
}

/// `mode,osj,ls,rel_diff,measure` with 1-based modes, then an `average` row.
pub fn write_comparison_csv(cmp: &Comparison, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "mode,osj,ls,rel_diff,measure")?;
    for r in &cmp.rows {
        let measure = if r.absolute { "absolute" } else { "relative" };
        writeln!(w, "{},{},{},{},{measure}", r.mode + 1, r.osj, r.ls, r.diff)?;
    }
    writeln!(w, "average,,,{},", cmp.average)
}
