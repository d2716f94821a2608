//! Dense tanh network emitting `(Y, Z, ΔY)` and its training primitives.
//!
//! One network per (time step, mode) maps a state `x ∈ R^d` to `d + 2` raw
//! outputs, read as a value `Y`, a Brownian sensitivity `Z ∈ R^d` and a jump
//! sensitivity `ΔY`. Hidden layers use `tanh`; the output layer is affine.
//!
//! Inputs are standardized by a fixed affine map and outputs are rescaled by a
//! fixed shift and scale. Neither is trained. Both can be changed without
//! altering the function the network computes (see
//! [`Mlp::set_input_normalization`] and [`Mlp::set_output_normalization`]),
//! or relabeled with [`Mlp::with_normalization`].

mod adam;
mod io;

pub use adam::AdamState;
pub use io::{load_network, read_network, save_network, write_network, SnapshotMeta, NET_MAGIC};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::Scalar;

/// Training hyper-parameters for one stage network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Initialize stage `(n, i)` from stage `(n + 1, i)`.
    pub warm_start: bool,
    /// Optional sup-norm bound on every parameter.
    pub clamp: Option<f64>,
    pub hidden_layers: usize,
    /// Hidden width is `d + width_extra`.
    pub width_extra: usize,
    /// Seed for weight initialization and minibatch shuffling.
    pub seed: u64,
    /// Solve the value head exactly after the gradient epochs.
    pub refit_value_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            minibatch: 512,
            learning_rate: 1e-3,
            warm_start: true,
            clamp: None,
            hidden_layers: 2,
            width_extra: 10,
            seed: 0,
            refit_value_head: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, paths: usize) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be >= 1");
        ensure!(self.minibatch >= 1, "minibatch must be >= 1");
        ensure!(
            self.minibatch <= paths,
            "minibatch {} exceeds path count {paths}",
            self.minibatch
        );
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning rate must be positive"
        );
        if let Some(g) = self.clamp {
            ensure!(g.is_finite() && g > 0.0, "parameter clamp must be positive");
        }
        Ok(())
    }

    /// Layer widths `[d, d+extra, …, d+extra, d+2]`.
    pub fn widths(&self, dim: usize) -> Vec<usize> {
        let mut w = vec![dim];
        w.extend(std::iter::repeat(dim + self.width_extra).take(self.hidden_layers));
        w.push(dim + 2);
        w
    }
}

/// Feed-forward network with all trainable parameters in one flat vector.
///
/// Layer `l` maps width `widths[l]` to `widths[l+1]`; its weights are stored
/// input-major (`w[k * out + j]`) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    widths: Vec<usize>,
    params: Vec<T>,
    offsets: Vec<usize>,
    input_shift: Vec<T>,
    input_scale: Vec<T>,
    output_shift: T,
    output_scale: T,
}

/// Gradient with the same flat layout as [`Mlp`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T>(pub Vec<T>);

/// Split network output for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput<T> {
    pub y: T,
    pub z: Vec<T>,
    pub u: T,
}

/// Columns of a loss evaluation: states `x` (`rows × d`), regression targets
/// `Ŷ_{n+1}`, running-profit increments `f Δt`, Brownian increments
/// (`rows × d`) and compensated jump increments.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a, T> {
    pub x: &'a [T],
    pub target: &'a [T],
    pub drift: &'a [T],
    pub dw: &'a [T],
    pub dn: &'a [T],
}

impl<T: Scalar> LossBatch<'_, T> {
    pub fn rows(&self) -> usize {
        self.target.len()
    }
}

/// Reusable per-row activations and deltas.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    fn layout(widths: &[usize]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(widths.len());
        let mut at = 0;
        offsets.push(0);
        for w in widths.windows(2) {
            at += (w[0] + 1) * w[1];
            offsets.push(at);
        }
        offsets
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        ensure!(widths.len() >= 2, "network needs at least an input and output layer");
        ensure!(widths.iter().all(|&w| w >= 1), "layer widths must be >= 1");
        ensure!(
            widths[widths.len() - 1] == widths[0] + 2,
            "output width must be input width + 2 (value, gradient, jump)"
        );
        let offsets = Self::layout(widths);
        let d = widths[0];
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![T::zero(); *offsets.last().expect("non-empty")],
            offsets,
            input_shift: vec![T::zero(); d],
            input_scale: vec![T::one(); d],
            output_shift: T::zero(),
            output_scale: T::one(),
        })
    }

    /// Glorot-uniform weights `U(-√(6/(in+out)), √(6/(in+out)))`, zero biases.
    pub fn glorot(widths: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Trainable parameter count, `Σ_l (δ_l + 1) δ_{l+1}`.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn input_normalization(&self) -> (&[T], &[T]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn output_normalization(&self) -> (T, T) {
        (self.output_shift, self.output_scale)
    }

    /// Sets normalization without touching the weights (changes the function).
    pub fn with_normalization(
        mut self,
        input_shift: Vec<T>,
        input_scale: Vec<T>,
        output_shift: T,
        output_scale: T,
    ) -> Result<Self> {
        let d = self.input_dim();
        ensure!(
            input_shift.len() == d && input_scale.len() == d,
            "input normalization must have length {d}"
        );
        ensure!(
            input_scale.iter().all(|s| s.is_finite() && *s > T::zero())
                && output_scale.is_finite()
                && output_scale > T::zero(),
            "normalization scales must be positive and finite"
        );
        self.input_shift = input_shift;
        self.input_scale = input_scale;
        self.output_shift = output_shift;
        self.output_scale = output_scale;
        Ok(self)
    }

    /// Replaces the input standardization while preserving the function, by
    /// folding the change into the first layer.
    pub fn set_input_normalization(&mut self, shift: &[T], scale: &[T]) -> Result<()> {
        let d = self.input_dim();
        ensure!(shift.len() == d && scale.len() == d, "input normalization must have length {d}");
        ensure!(
            scale.iter().all(|s| s.is_finite() && *s > T::zero()),
            "input scales must be positive and finite"
        );
        let out = self.widths[1];
        let (w, b) = self.params[..self.offsets[1]].split_at_mut(d * out);
        for k in 0..d {
            let ratio = scale[k] / self.input_scale[k];
            let moved = (shift[k] - self.input_shift[k]) / self.input_scale[k];
            for j in 0..out {
                let wkj = w[k * out + j];
                b[j] += wkj * moved;
                w[k * out + j] = wkj * ratio;
            }
        }
        self.input_shift.copy_from_slice(shift);
        self.input_scale.copy_from_slice(scale);
        Ok(())
    }

    /// Replaces the output shift and scale while preserving the function, by
    /// folding the change into the last layer.
    pub fn set_output_normalization(&mut self, shift: T, scale: T) -> Result<()> {
        ensure!(
            scale.is_finite() && scale > T::zero() && shift.is_finite(),
            "output scale must be positive and finite"
        );
        let l = self.widths.len() - 2;
        let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
        let start = self.offsets[l];
        let ratio = self.output_scale / scale;
        let (w, b) = self.params[start..self.offsets[l + 1]].split_at_mut(fan_in * out);
        for v in w.iter_mut() {
            *v *= ratio;
        }
        b[0] = (b[0] * self.output_scale + self.output_shift - shift) / scale;
        for v in &mut b[1..] {
            *v *= ratio;
        }
        self.output_shift = shift;
        self.output_scale = scale;
        Ok(())
    }

    /// Clamps every parameter into `[-bound, bound]`.
    pub fn clamp(&mut self, bound: T) {
        for p in &mut self.params {
            *p = p.max(-bound).min(bound);
        }
    }

    pub fn sup_norm(&self) -> T {
        self.params.iter().fold(T::zero(), |m, p| m.max(p.abs()))
    }

    pub fn workspace(&self) -> Workspace<T> {
        Workspace {
            acts: self.widths.iter().map(|&w| vec![T::zero(); w]).collect(),
            delta: vec![T::zero(); *self.widths.iter().max().expect("non-empty")],
            delta_prev: vec![T::zero(); *self.widths.iter().max().expect("non-empty")],
        }
    }

    /// Raw forward pass; leaves every layer's activation in `ws`.
    fn propagate(&self, x: &[T], ws: &mut Workspace<T>) {
        let depth = self.widths.len() - 1;
        for ((a, &xi), (&s, &c)) in ws.acts[0]
            .iter_mut()
            .zip(x)
            .zip(self.input_shift.iter().zip(&self.input_scale))
        {
            *a = (xi - s) / c;
        }
        for l in 0..depth {
            let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
            let start = self.offsets[l];
            let w = &self.params[start..start + fan_in * out];
            let b = &self.params[start + fan_in * out..self.offsets[l + 1]];
            let (lower, upper) = ws.acts.split_at_mut(l + 1);
            let input = &lower[l];
            let z = &mut upper[0];
            z.copy_from_slice(b);
            for (k, &ak) in input.iter().enumerate() {
                for (zj, &wkj) in z.iter_mut().zip(&w[k * out..(k + 1) * out]) {
                    *zj += ak * wkj;
                }
            }
            if l + 1 < depth {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
    }

    /// Split `(Y, Z, ΔY)` output for one state.
    pub fn forward_one(&self, x: &[T], ws: &mut Workspace<T>) -> NetOutput<T> {
        self.propagate(x, ws);
        let o = ws.acts.last().expect("output layer");
        let d = self.input_dim();
        NetOutput {
            y: self.output_shift + self.output_scale * o[0],
            z: o[1..=d].iter().map(|&v| v * self.output_scale).collect(),
            u: o[d + 1] * self.output_scale,
        }
    }

    /// Value output `Y` only.
    pub fn value_one(&self, x: &[T], ws: &mut Workspace<T>) -> T {
        self.propagate(x, ws);
        self.output_shift + self.output_scale * ws.acts.last().expect("output layer")[0]
    }

    /// Batched forward pass over `rows × d` states, returning
    /// `(y[rows], z[rows × d], u[rows])`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let d = self.input_dim();
        ensure!(
            x.len() % d == 0,
            "input batch length {} is not a multiple of d = {d}",
            x.len()
        );
        let rows = x.len() / d;
        let mut ws = self.workspace();
        let (mut y, mut z, mut u) = (Vec::with_capacity(rows), Vec::with_capacity(rows * d), Vec::with_capacity(rows));
        for row in x.chunks_exact(d) {
            let out = self.forward_one(row, &mut ws);
            y.push(out.y);
            z.extend(out.z);
            u.push(out.u);
        }
        Ok((y, z, u))
    }

    /// Value output for every row of a `rows × d` batch.
    pub fn values(&self, x: &[T], out: &mut Vec<T>) {
        let d = self.input_dim();
        let mut ws = self.workspace();
        out.clear();
        out.extend(x.chunks_exact(d).map(|row| self.value_one(row, &mut ws)));
    }

    fn check_batch(&self, batch: &LossBatch<'_, T>) -> Result<()> {
        let d = self.input_dim();
        let n = batch.rows();
        ensure!(n >= 1, "loss batch is empty");
        ensure!(
            batch.x.len() == n * d
                && batch.dw.len() == n * d
                && batch.drift.len() == n
                && batch.dn.len() == n,
            "loss batch columns disagree with {n} rows of dimension {d}"
        );
        Ok(())
    }

    /// Empirical loss `mean |target - Y + fΔt - Z·ΔW - ΔY·ΔÑ|²` over `rows`
    /// (all rows when `None`).
    pub fn loss(&self, batch: &LossBatch<'_, T>, rows: Option<&[usize]>) -> Result<T> {
        self.check_batch(batch)?;
        let mut ws = self.workspace();
        let d = self.input_dim();
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..batch.rows()).collect();
                &all
            }
        };
        let mut total = T::zero();
        for &r in rows {
            let res = self.residual(batch, r, d, &mut ws);
            total += res * res;
        }
        Ok(total / T::from_usize(rows.len()).expect("row count fits"))
    }

    fn residual(&self, batch: &LossBatch<'_, T>, r: usize, d: usize, ws: &mut Workspace<T>) -> T {
        self.propagate(&batch.x[r * d..(r + 1) * d], ws);
        let o = ws.acts.last().expect("output layer");
        let dw = &batch.dw[r * d..(r + 1) * d];
        let zdw: T = o[1..=d].iter().zip(dw).map(|(&z, &w)| z * w).sum();
        let pred = self.output_shift + self.output_scale * (o[0] + zdw + o[d + 1] * batch.dn[r]);
        batch.target[r] + batch.drift[r] - pred
    }

    /// Replaces the value head (the output-layer weights and bias producing
    /// `Y`) by the exact minimizer of the loss with every other parameter
    /// held fixed. The loss is quadratic in these weights, so this never
    /// increases it (up to the `ridge` added to the normalized Gram matrix).
    pub fn refit_value_head(&mut self, batch: &LossBatch<'_, T>, ridge: f64) -> Result<()> {
        self.check_batch(batch)?;
        let d = self.input_dim();
        let depth = self.widths.len() - 1;
        let hidden = self.widths[depth - 1];
        let k = hidden + 1;
        let mut ws = self.workspace();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut rhs = nalgebra::DVector::<f64>::zeros(k);
        let mut features = vec![0.0; k];
        let shift = self.output_shift.to_f64_lossy();
        let scale = self.output_scale.to_f64_lossy();
        for r in 0..batch.rows() {
            self.propagate(&batch.x[r * d..(r + 1) * d], &mut ws);
            for (f, a) in features.iter_mut().zip(&ws.acts[depth - 1]) {
                *f = a.to_f64_lossy();
            }
            features[hidden] = 1.0;
            let o = &ws.acts[depth];
            let mut other = o[d + 1].to_f64_lossy() * batch.dn[r].to_f64_lossy();
            for j in 0..d {
                other += o[1 + j].to_f64_lossy() * batch.dw[r * d + j].to_f64_lossy();
            }
            let y = (batch.target[r].to_f64_lossy() + batch.drift[r].to_f64_lossy() - shift) / scale - other;
            if !y.is_finite() {
                return Err(Error::Numerical(format!("non-finite value-head target at row {r}")));
            }
            for a in 0..k {
                rhs[a] += features[a] * y;
                for b in 0..=a {
                    gram[(a, b)] += features[a] * features[b];
                }
            }
        }
        let inv = 1.0 / batch.rows() as f64;
        for a in 0..k {
            rhs[a] *= inv;
            for b in 0..=a {
                gram[(a, b)] *= inv;
                gram[(b, a)] = gram[(a, b)];
            }
            gram[(a, a)] += ridge;
        }
        let solution = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("value-head normal equations are singular".into()))?
            .solve(&rhs);
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("value-head refit produced non-finite weights".into()));
        }
        let out = self.widths[depth];
        let start = self.offsets[depth - 1];
        for h in 0..hidden {
            self.params[start + h * out] = T::from_f64_lossy(solution[h]);
        }
        self.params[start + hidden * out] = T::from_f64_lossy(solution[hidden]);
        Ok(())
    }

    /// Loss and its exact reverse-mode gradient over the given rows.
    pub fn loss_and_gradient(&self, batch: &LossBatch<'_, T>, rows: &[usize]) -> Result<(T, Gradient<T>)> {
        let mut grad = Gradient(vec![T::zero(); self.params.len()]);
        let mut ws = self.workspace();
        let loss = self.accumulate_gradient(batch, rows, &mut grad, &mut ws)?;
        Ok((loss, grad))
    }

    /// As [`Mlp::loss_and_gradient`] but writing into a caller-owned buffer,
    /// which is overwritten.
    pub fn accumulate_gradient(
        &self,
        batch: &LossBatch<'_, T>,
        rows: &[usize],
        grad: &mut Gradient<T>,
        ws: &mut Workspace<T>,
    ) -> Result<T> {
        self.check_batch(batch)?;
        ensure!(!rows.is_empty(), "minibatch is empty");
        ensure!(grad.0.len() == self.params.len(), "gradient buffer has the wrong shape");
        grad.0.iter_mut().for_each(|g| *g = T::zero());
        let d = self.input_dim();
        let depth = self.widths.len() - 1;
        let inv_n = T::one() / T::from_usize(rows.len()).expect("row count fits");
        let two = T::one() + T::one();
        let mut total = T::zero();
        for &r in rows {
            let target = batch.target[r];
            if !target.is_finite() {
                return Err(Error::Validation(format!("non-finite regression target at row {r}")));
            }
            let res = self.residual(batch, r, d, ws);
            total += res * res;

            // dL/d(raw output): residual depends on raw outputs through
            // -scale * (o0 + Σ o_k ΔW_k + o_{d+1} ΔÑ).
            let g = -two * res * inv_n * self.output_scale;
            let out_w = self.widths[depth];
            ws.delta[0] = g;
            for k in 0..d {
                ws.delta[1 + k] = g * batch.dw[r * d + k];
            }
            ws.delta[d + 1] = g * batch.dn[r];

            for l in (0..depth).rev() {
                let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
                debug_assert!(l + 1 < depth || out == out_w);
                let start = self.offsets[l];
                let w = &self.params[start..start + fan_in * out];
                let (gw, gb) = grad.0[start..self.offsets[l + 1]].split_at_mut(fan_in * out);
                let input = &ws.acts[l];
                let delta = &ws.delta[..out];
                for (gbj, &dj) in gb.iter_mut().zip(delta) {
                    *gbj += dj;
                }
                for (k, &ak) in input.iter().enumerate() {
                    for (g, &dj) in gw[k * out..(k + 1) * out].iter_mut().zip(delta) {
                        *g += ak * dj;
                    }
                }
                if l > 0 {
                    for (k, &ak) in input.iter().enumerate() {
                        let back: T = w[k * out..(k + 1) * out].iter().zip(delta).map(|(&a, &b)| a * b).sum();
                        ws.delta_prev[k] = back * (T::one() - ak * ak);
                    }
                    std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
                }
            }
        }
        let loss = total * inv_n;
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        Ok(loss)
    }
}
