//! Solvers for finite-horizon optimal switching problems driven by
//! jump-diffusion state processes.
//!
//! The crate is organised around a backward dynamic-programming pipeline:
//!
//! - [`paths`] simulates state paths together with the Brownian and
//!   compensated Poisson increments that drive them, and persists them.
//! - [`net`] holds a small dense tanh network with hand-written reverse-mode
//!   gradients and an Adam optimizer, generic over the [`Scalar`] type.
//! - [`osj`] trains one network per (time step, mode) backward in time on the
//!   one-step jump-BSDE residual, then applies the switching reflection.
//! - [`strategy`] rolls the learned policy forward on fresh paths.
//! - [`lsmc`] is the Longstaff–Schwartz regression baseline.
//! - [`models`] wires the gas-to-power scheduling and capacity-mix instances.

pub mod error;
pub mod lsmc;
pub mod models;
pub mod net;
pub mod osj;
pub mod paths;
pub mod problem;
pub mod scalar;
pub mod strategy;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use paths::{PathBatch, TimeGrid};
pub use problem::{Payoff, SwitchGrid, SwitchingProblem};

/// Dense network in 64-bit floating point (the precision used for training).
pub type Network = net::Mlp<f64>;
/// Single-precision network, for inference experiments.
pub type Network32 = net::Mlp<f32>;
/// Adam moment state matching [`Network`].
pub type AdamState = net::AdamState<f64>;
/// Reverse-mode gradient buffer matching [`Network`].
pub type Gradient = net::Gradient<f64>;
