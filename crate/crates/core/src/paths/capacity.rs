//! Capacity-mix state process: demand, plant availabilities, fuel and carbon
//! prices, and the electricity spot price.
//!
//! State layout for `F` fuels (`d = 2F + 3`):
//!
//! ```text
//! [ D, A^1..A^F, S^0, S^1..S^F, P ]
//! ```
//!
//! Brownian layout: `[ W^Z_0..W^Z_F, W^S_0..W^S_{F+1} ]`, also of size `d`.
//!
//! The drivers `Z^0..Z^F` follow `dZ = -α Z dt + β dW^Z` and are advanced
//! exactly; demand is `Z^0 + H(t)` and availability is `T(Z^φ)`, with `T` the
//! standard normal CDF of `Z^φ` scaled by its stationary standard deviation.
//! Prices `S = (S^0..S^F, P)` follow
//!
//! ```text
//! dS = μ S dt + diag(S) (Σ dW^S + (e^e - 1) dN e_P)
//! ```
//!
//! and are advanced by log-space Euler sub-steps with a positivity floor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::ou::ExactOu;
use super::{path_rng, JumpSpec, PathBatch, Stream, TimeGrid};
use crate::error::{ensure, Result};

/// Seasonal demand shift `H(t) = base + amplitude · cos(2π t / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seasonal {
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl Seasonal {
    pub fn at(&self, t: f64) -> f64 {
        self.base + self.amplitude * (2.0 * std::f64::consts::PI * t / self.period).cos()
    }
}

impl Default for Seasonal {
    fn default() -> Self {
        Self {
            base: 70.0,
            amplitude: 10.0,
            period: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CointegratedPriceModel {
    pub fuels: usize,
    /// Driver mean-reversion rates `α`, length `F + 1`.
    pub driver_rate: Vec<f64>,
    /// Driver loadings `β`, `(F+1) × (F+1)` row-major.
    pub driver_loading: Vec<f64>,
    /// Cointegration matrix `μ`, `(F+2) × (F+2)` row-major.
    pub price_drift: Vec<f64>,
    /// Price volatility matrix `Σ`, `(F+2) × (F+2)` row-major.
    pub price_vol: Vec<f64>,
    /// Jumps on the electricity price; `coords` index the price vector.
    pub jumps: JumpSpec,
    pub seasonal: Seasonal,
    /// Euler sub-steps per grid interval for the price block.
    pub substeps: usize,
    /// Floor, relative to the initial price, below which prices are clamped.
    pub price_floor: f64,
}

impl CointegratedPriceModel {
    pub fn dim(&self) -> usize {
        2 * self.fuels + 3
    }

    pub fn price_dim(&self) -> usize {
        self.fuels + 2
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fuels;
        ensure!(f >= 1, "capacity model needs at least one fuel");
        let nz = f + 1;
        let ns = f + 2;
        ensure!(self.driver_rate.len() == nz, "alpha must have length {nz}");
        ensure!(self.driver_loading.len() == nz * nz, "beta must be {nz}x{nz}");
        ensure!(self.price_drift.len() == ns * ns, "mu must be {ns}x{ns}");
        ensure!(self.price_vol.len() == ns * ns, "Sigma must be {ns}x{ns}");
        ensure!(self.substeps >= 1, "need at least one price sub-step");
        ensure!(
            self.price_floor > 0.0 && self.price_floor < 1.0,
            "price floor must lie in (0, 1)"
        );
        ensure!(
            self.seasonal.period > 0.0,
            "seasonal period must be positive"
        );
        self.jumps.validate(ns)?;
        let rank = self.drift_rank();
        ensure!(
            rank > 1 && rank < ns,
            "cointegration matrix has rank {rank}; need 1 < rank < {ns}"
        );
        Ok(())
    }

    pub fn drift_rank(&self) -> usize {
        let ns = self.price_dim();
        let mat = DMatrix::from_row_slice(ns, ns, &self.price_drift);
        mat.rank(1e-10)
    }

    fn driver_process(&self) -> Result<ExactOu> {
        let nz = self.fuels + 1;
        ExactOu::new(self.driver_rate.clone(), vec![0.0; nz], self.driver_loading.clone(), nz)
    }

    /// Stationary standard deviation of each driver, `sqrt((ββᵀ)_ii / 2α_i)`.
    pub fn driver_stationary_sd(&self) -> Vec<f64> {
        let nz = self.fuels + 1;
        (0..nz)
            .map(|i| {
                let v: f64 = self.driver_loading[i * nz..(i + 1) * nz].iter().map(|b| b * b).sum();
                (v / (2.0 * self.driver_rate[i])).sqrt()
            })
            .collect()
    }

    /// Availability transform `T(z) = Φ(z / sd)`.
    pub fn availability(z: f64, sd: f64) -> f64 {
        if sd > 0.0 {
            0.5 * erfc(-z / sd / std::f64::consts::SQRT_2)
        } else if z > 0.0 {
            1.0
        } else if z < 0.0 {
            0.0
        } else {
            0.5
        }
    }

    /// Exact first moment of the price vector, `E[S_t] = exp(μ̃ t) S_0` with
    /// `μ̃ = μ + λ (E[e^e] - 1)` on the jump coordinates.
    pub fn price_mean(&self, s0: &[f64], t: f64) -> Vec<f64> {
        let ns = self.price_dim();
        let mut gen = DMatrix::from_row_slice(ns, ns, &self.price_drift);
        if self.jumps.intensity > 0.0 {
            let m = self.jumps.mean_size;
            let jump_mean = 1.0 / (1.0 - m) - 1.0;
            for &c in &self.jumps.coords {
                gen[(c, c)] += self.jumps.intensity * jump_mean;
            }
        }
        let exp = (gen * t).exp();
        (exp * nalgebra::DVector::from_column_slice(s0)).iter().copied().collect()
    }
}

/// `x0` is `[Z^0..Z^F, S^0..S^F, P]`: driver starting values then prices.
pub fn simulate_capacity_model(
    model: &CointegratedPriceModel,
    grid: &TimeGrid,
    x0: &[f64],
    paths: usize,
    seed: u64,
    tag: &str,
) -> Result<PathBatch> {
    model.validate()?;
    let f = model.fuels;
    let nz = f + 1;
    let ns = f + 2;
    let d = model.dim();
    ensure!(
        x0.len() == nz + ns,
        "initial state has length {}, expected {}",
        x0.len(),
        nz + ns
    );
    ensure!(
        x0[nz..].iter().all(|&s| s.is_finite() && s > 0.0),
        "initial prices must be positive"
    );
    ensure!(paths >= 1, "path count must be >= 1, got {paths}");

    let drivers = model.driver_process()?;
    let sd = model.driver_stationary_sd();
    let m = grid.steps;
    let dt = grid.dt();
    let h = dt / model.substeps as f64;
    let step = drivers.transition(dt);
    let lambda_dt = model.jumps.intensity * dt;
    let s0 = &x0[nz..];
    let floor: Vec<f64> = s0.iter().map(|s| s * model.price_floor).collect();
    let ito: Vec<f64> = (0..ns)
        .map(|k| 0.5 * model.price_vol[k * ns..(k + 1) * ns].iter().map(|s| s * s).sum::<f64>())
        .collect();

    let observe = |t: f64, z: &[f64], s: &[f64], out: &mut [f64]| {
        out[0] = z[0] + model.seasonal.at(t);
        for phi in 1..=f {
            out[phi] = CointegratedPriceModel::availability(z[phi], sd[phi]);
        }
        out[nz..].copy_from_slice(s);
    };

    let mut batch = PathBatch::zeroed(*grid, d, paths, tag, seed);
    batch.par_fill(|p, xs, dw, dn| {
        let mut diffusion = path_rng(seed, p, Stream::Diffusion);
        let mut times_rng = path_rng(seed, p, Stream::JumpTimes);
        let mut sizes_rng = path_rng(seed, p, Stream::JumpSizes);
        let (times, sizes) = model.jumps.sample(grid.horizon, &mut times_rng, &mut sizes_rng);
        let mut next_jump = 0;
        let mut z = x0[..nz].to_vec();
        let mut s = s0.to_vec();
        let mut log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
        let mut xi = vec![0.0; ns];
        let mut drift = vec![0.0; ns];
        let mut scratch = Vec::new();
        observe(0.0, &z, &s, &mut xs[..d]);
        for n in 0..m {
            let dw_n = &mut dw[n * d..(n + 1) * d];
            drivers.advance(&step, &mut z, &mut dw_n[..nz], &mut diffusion, &mut scratch);
            let mut count = 0usize;
            let t_n = grid.time(n);
            for sub in 0..model.substeps {
                let sub_end = if sub + 1 == model.substeps {
                    grid.time(n + 1)
                } else {
                    t_n + (sub + 1) as f64 * h
                };
                for k in 0..ns {
                    drift[k] = (0..ns)
                        .map(|j| model.price_drift[k * ns + j] * s[j])
                        .sum::<f64>()
                        / s[k];
                }
                for (k, x) in xi.iter_mut().enumerate() {
                    *x = diffusion.sample::<f64, _>(StandardNormal) * h.sqrt();
                    dw_n[nz + k] += *x;
                }
                for k in 0..ns {
                    let shock: f64 = (0..ns).map(|j| model.price_vol[k * ns + j] * xi[j]).sum();
                    log_s[k] += (drift[k] - ito[k]) * h + shock;
                }
                while next_jump < times.len() && times[next_jump] < sub_end {
                    for &c in &model.jumps.coords {
                        log_s[c] += sizes[next_jump];
                    }
                    count += 1;
                    next_jump += 1;
                }
                for k in 0..ns {
                    let v = log_s[k].exp();
                    if v < floor[k] || !v.is_finite() {
                        s[k] = if v.is_finite() { floor[k] } else { f64::MAX.sqrt() };
                        log_s[k] = s[k].ln();
                    } else {
                        s[k] = v;
                    }
                }
            }
            dn[n] = count as f64 - lambda_dt;
            observe(grid.time(n + 1), &z, &s, &mut xs[(n + 1) * d..(n + 2) * d]);
        }
    });
    Ok(batch)
}
