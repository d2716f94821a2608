//! State-path simulation and the on-disk dataset format.
//!
//! A [`PathBatch`] stores, for every simulated path, the state at each node
//! of a uniform [`TimeGrid`] together with the per-interval Brownian
//! increments `ΔW_n = W(t_{n+1}) - W(t_n)` and compensated Poisson increments
//! `ΔÑ_n = N(t_{n+1}) - N(t_n) - λΔt`. Those three arrays are everything the
//! backward training loss consumes.

mod capacity;
mod exp_ou;
mod io;
mod ou;

pub use capacity::{simulate_capacity_model, CointegratedPriceModel, Seasonal};
pub use exp_ou::{simulate_exp_ou_diffusion, simulate_exp_ou_jump, ExpOuJumpModel};
pub use io::{load_batch, save_batch, write_csv, MAGIC, VERSION};
pub use ou::{ExactOu, OuTransition};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Uniform time grid `t_n = n T / M`, `n = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        ensure!(steps >= 1, "time grid needs at least one step");
        ensure!(
            horizon.is_finite() && horizon > 0.0,
            "time grid horizon must be positive, got {horizon}"
        );
        Ok(Self { horizon, steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node time `t_n`; `t_M` is exactly the horizon.
    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Default training-set size, on the order of `M²`.
    pub fn default_paths(&self) -> usize {
        self.steps * self.steps
    }
}

/// Compound Poisson jumps with exponentially distributed log-jump sizes.
///
/// A jump multiplies each affected coordinate by `exp(e)`, `e ~ Exp(mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub intensity: f64,
    pub mean_size: f64,
    pub coords: Vec<usize>,
}

impl JumpSpec {
    pub fn none() -> Self {
        Self {
            intensity: 0.0,
            mean_size: 0.1,
            coords: Vec::new(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        ensure!(
            self.intensity.is_finite() && self.intensity >= 0.0,
            "jump intensity must be >= 0, got {}",
            self.intensity
        );
        ensure!(
            self.mean_size.is_finite() && self.mean_size > 0.0,
            "mean jump size must be > 0, got {}",
            self.mean_size
        );
        ensure!(
            self.coords.iter().all(|&c| c < dim),
            "jump coordinate out of range for dimension {dim}"
        );
        Ok(())
    }

    /// Draws the sorted jump times in `[0, horizon)` and their sizes.
    pub(crate) fn sample(
        &self,
        horizon: f64,
        times_rng: &mut ChaCha8Rng,
        sizes_rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, Vec<f64>) {
        use rand_distr::{Distribution, Exp};
        if self.intensity <= 0.0 {
            return (Vec::new(), Vec::new());
        }
        let gaps = Exp::new(self.intensity).expect("positive intensity");
        let sizes = Exp::new(1.0 / self.mean_size).expect("positive mean size");
        let mut times = Vec::new();
        let mut t = gaps.sample(times_rng);
        while t < horizon {
            times.push(t);
            t += gaps.sample(times_rng);
        }
        let marks = times.iter().map(|_| sizes.sample(sizes_rng)).collect();
        (times, marks)
    }
}

/// Independent random sub-streams derived from one base seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    Diffusion = 0,
    JumpTimes = 1,
    JumpSizes = 2,
}

pub(crate) fn path_rng(seed: u64, path: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 * 4 + stream as u64);
    rng
}

/// Simulated states and driving-noise increments on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    dim: usize,
    paths: usize,
    model_tag: String,
    seed: u64,
    states: Vec<f64>,
    brownian: Vec<f64>,
    compensated: Vec<f64>,
}

impl PathBatch {
    /// Assembles a batch from row-major arrays, checking every shape.
    ///
    /// `states` is `paths × (M+1) × dim`, `brownian` is `paths × M × dim`
    /// and `compensated` is `paths × M`.
    pub fn from_parts(
        grid: TimeGrid,
        dim: usize,
        paths: usize,
        model_tag: impl Into<String>,
        seed: u64,
        states: Vec<f64>,
        brownian: Vec<f64>,
        compensated: Vec<f64>,
    ) -> Result<Self> {
        let m = grid.steps;
        ensure!(dim >= 1, "state dimension must be >= 1");
        ensure!(paths >= 1, "path count must be >= 1");
        ensure!(
            states.len() == paths * (m + 1) * dim,
            "states array has {} entries, expected {}",
            states.len(),
            paths * (m + 1) * dim
        );
        ensure!(
            brownian.len() == paths * m * dim,
            "Brownian increment array has {} entries, expected {}",
            brownian.len(),
            paths * m * dim
        );
        ensure!(
            compensated.len() == paths * m,
            "compensated jump array has {} entries, expected {}",
            compensated.len(),
            paths * m
        );
        Ok(Self {
            grid,
            dim,
            paths,
            model_tag: model_tag.into(),
            seed,
            states,
            brownian,
            compensated,
        })
    }

    pub(crate) fn zeroed(grid: TimeGrid, dim: usize, paths: usize, tag: &str, seed: u64) -> Self {
        let m = grid.steps;
        Self {
            grid,
            dim,
            paths,
            model_tag: tag.to_owned(),
            seed,
            states: vec![0.0; paths * (m + 1) * dim],
            brownian: vec![0.0; paths * m * dim],
            compensated: vec![0.0; paths * m],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * (self.grid.steps + 1) + step) * self.dim;
        &self.states[at..at + self.dim]
    }

    #[inline]
    pub fn brownian(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * self.grid.steps + step) * self.dim;
        &self.brownian[at..at + self.dim]
    }

    #[inline]
    pub fn compensated(&self, path: usize, step: usize) -> f64 {
        self.compensated[path * self.grid.steps + step]
    }

    pub fn states_raw(&self) -> &[f64] {
        &self.states
    }
    pub fn brownian_raw(&self) -> &[f64] {
        &self.brownian
    }
    pub fn compensated_raw(&self) -> &[f64] {
        &self.compensated
    }

    /// States of every path at `step`, packed `paths × dim`.
    pub fn states_at(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.dim);
        for p in 0..self.paths {
            out.extend_from_slice(self.state(p, step));
        }
        out
    }

    /// Brownian increments of every path over `[t_step, t_{step+1})`.
    pub fn brownian_at(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.dim);
        for p in 0..self.paths {
            out.extend_from_slice(self.brownian(p, step));
        }
        out
    }

    pub fn compensated_at(&self, step: usize) -> Vec<f64> {
        (0..self.paths).map(|p| self.compensated(p, step)).collect()
    }

    pub(crate) fn par_fill<F>(&mut self, fill: F)
    where
        F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Send + Sync,
    {
        use rayon::prelude::*;
        let m = self.grid.steps;
        let d = self.dim;
        self.states
            .par_chunks_mut((m + 1) * d)
            .zip(self.brownian.par_chunks_mut(m * d))
            .zip(self.compensated.par_chunks_mut(m))
            .enumerate()
            .for_each(|(p, ((x, dw), dn))| fill(p, x, dw, dn));
    }
}
