//! Exact transition of a multivariate Ornstein–Uhlenbeck process
//!
//! ```text
//! dY_c = κ_c (θ_c - Y_c) dt + Σ_k L_{ck} dW_k
//! ```
//!
//! with diagonal mean reversion and a full loading matrix `L`. Over a step of
//! length `h` the solution is
//!
//! ```text
//! Y_c(t+h) = θ_c + (Y_c(t) - θ_c) e^{-κ_c h} + Σ_k L_{ck} J_k(κ_c),
//! J_k(r) = ∫_0^h e^{-r (h-s)} dW_k(s).
//! ```
//!
//! The training loss needs the Brownian increment `ΔW_k = ∫_0^h dW_k` that
//! produced the step, so for every Brownian coordinate the vector
//! `(ΔW_k, J_k(r_1), …, J_k(r_q))` over the distinct rates `r_1..r_q` is drawn
//! jointly from its Gaussian law:
//!
//! ```text
//! Var ΔW = h,  Cov(ΔW, J(r)) = (1 - e^{-r h}) / r,
//! Cov(J(r), J(s)) = (1 - e^{-(r+s) h}) / (r + s).
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExactOu {
    dim: usize,
    brownian_dim: usize,
    rate: Vec<f64>,
    level: Vec<f64>,
    loading: Vec<f64>,
    distinct: Vec<f64>,
    class: Vec<usize>,
}

/// Precomputed step of length `h`.
#[derive(Debug, Clone)]
pub struct OuTransition {
    decay: Vec<f64>,
    /// Lower Cholesky factor of the `(q+1) × (q+1)` joint covariance.
    chol: Vec<f64>,
}

impl ExactOu {
    /// `loading` is `dim × brownian_dim`, row-major.
    pub fn new(rate: Vec<f64>, level: Vec<f64>, loading: Vec<f64>, brownian_dim: usize) -> Result<Self> {
        let dim = rate.len();
        ensure!(dim >= 1, "OU process needs at least one coordinate");
        ensure!(level.len() == dim, "OU level has length {}, expected {dim}", level.len());
        ensure!(
            loading.len() == dim * brownian_dim,
            "OU loading has {} entries, expected {}",
            loading.len(),
            dim * brownian_dim
        );
        ensure!(
            rate.iter().all(|&k| k.is_finite() && k > 0.0),
            "mean-reversion rates must be positive"
        );
        ensure!(
            loading.iter().chain(level.iter()).all(|v| v.is_finite()),
            "OU parameters must be finite"
        );
        let mut distinct: Vec<f64> = Vec::new();
        let class = rate
            .iter()
            .map(|&k| match distinct.iter().position(|&r| r == k) {
                Some(at) => at,
                None => {
                    distinct.push(k);
                    distinct.len() - 1
                }
            })
            .collect();
        Ok(Self {
            dim,
            brownian_dim,
            rate,
            level,
            loading,
            distinct,
            class,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }

    pub fn rate(&self) -> &[f64] {
        &self.rate
    }

    pub fn level(&self) -> &[f64] {
        &self.level
    }

    pub fn transition(&self, h: f64) -> OuTransition {
        let q = self.distinct.len() + 1;
        let mut cov = vec![0.0; q * q];
        let kernel = |r: f64| {
            if r == 0.0 {
                h
            } else {
                -(-r * h).exp_m1() / r
            }
        };
        for a in 0..q {
            for b in 0..q {
                let ra = if a == 0 { 0.0 } else { self.distinct[a - 1] };
                let rb = if b == 0 { 0.0 } else { self.distinct[b - 1] };
                cov[a * q + b] = kernel(ra + rb);
            }
        }
        OuTransition {
            decay: self.rate.iter().map(|&k| (-k * h).exp()).collect(),
            chol: semidefinite_cholesky(&cov, q),
        }
    }

    /// Advances `y` by one exact step and adds the Brownian increment to `dw`.
    ///
    /// `scratch` must hold at least `dim + distinct rates + 1` entries.
    pub fn advance<R: Rng>(
        &self,
        step: &OuTransition,
        y: &mut [f64],
        dw: &mut [f64],
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) {
        let q = self.distinct.len() + 1;
        scratch.clear();
        scratch.resize(self.dim + 2 * q, 0.0);
        let (noise, rest) = scratch.split_at_mut(self.dim);
        let (xi, v) = rest.split_at_mut(q);
        for k in 0..self.brownian_dim {
            for z in xi.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            for a in 0..q {
                let row = &step.chol[a * q..a * q + a + 1];
                v[a] = row.iter().zip(xi.iter()).map(|(l, z)| l * z).sum();
            }
            dw[k] += v[0];
            for c in 0..self.dim {
                noise[c] += self.loading[c * self.brownian_dim + k] * v[1 + self.class[c]];
            }
        }
        for c in 0..self.dim {
            y[c] = self.level[c] + (y[c] - self.level[c]) * step.decay[c] + noise[c];
        }
    }

    /// Mean of `Y(t)` started from `y0`.
    pub fn mean(&self, y0: &[f64], t: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|c| self.level[c] + (y0[c] - self.level[c]) * (-self.rate[c] * t).exp())
            .collect()
    }

    /// Covariance of `Y(t)` (deterministic start), `dim × dim` row-major.
    pub fn covariance(&self, t: f64) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let llt: f64 = (0..self.brownian_dim)
                    .map(|k| self.loading[a * self.brownian_dim + k] * self.loading[b * self.brownian_dim + k])
                    .sum();
                let r = self.rate[a] + self.rate[b];
                out[a * d + b] = llt * -(-r * t).exp_m1() / r;
            }
        }
        out
    }
}

/// Cholesky factor of a positive semidefinite matrix; pivots that round to
/// a non-positive value are treated as exact zeros.
fn semidefinite_cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let pivot = a[i * n + i] - s;
                l[i * n + i] = if pivot > 0.0 { pivot.sqrt() } else { 0.0 };
            } else {
                let diag = l[j * n + j];
                l[i * n + j] = if diag > 0.0 { (a[i * n + j] - s) / diag } else { 0.0 };
            }
        }
    }
    l
}
