//! Gas-fired plant scheduling: electricity price `P` and one or more fuel
//! prices, three operating modes (off, half, full).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{ExpOuJumpModel, JumpSpec};
use crate::problem::{Payoff, SwitchGrid};

/// Running profit rate of `mode` (0 = off, 1 = half, 2 = full) at power
/// price `p` and gas price `g`.
pub fn cl_profit(mode: usize, p: f64, g: f64) -> f64 {
    match mode {
        0 => -1.0,
        1 => 0.438 * (p - 7.5 * g) - 1.1,
        2 => 0.876 * (p - 10.0 * g) - 1.2,
        _ => panic!("scheduling model has 3 modes, got mode {mode}"),
    }
}

/// Cost of any mode change at gas price `g`.
pub fn cl_switch_cost(g: f64) -> f64 {
    0.01 * g + 0.001
}

pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.len() == 1 {
        return xs[0];
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// What the plant earns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClObjective {
    /// Three-mode spark-spread scheduling.
    #[default]
    Scheduling,
    /// One mode, no running profit, terminal payoff `P_T`.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClConfig {
    pub horizon: f64,
    pub steps: usize,
    pub switching: SwitchGrid,
    pub objective: ClObjective,
    /// Number of fuel coordinates `F`; the state dimension is `1 + F`.
    pub fuels: usize,
    pub power_rate: f64,
    pub power_level: f64,
    pub power_vol: f64,
    pub gas_rate: f64,
    pub gas_level: f64,
    pub gas_vol: f64,
    /// Weight of the shared power shock in the gas noise; the own shock
    /// gets `sqrt(1 - ρ²)`.
    pub gas_power_correlation: f64,
    pub jump_intensity: f64,
    pub jump_mean: f64,
    pub power_start: f64,
    pub gas_start: f64,
    /// Terminal profit, equal for every mode (scheduling objective only).
    pub salvage: f64,
}

impl Default for ClConfig {
    fn default() -> Self {
        Self {
            horizon: 0.25,
            steps: 180,
            switching: SwitchGrid::Every,
            objective: ClObjective::Scheduling,
            fuels: 1,
            power_rate: 5.0,
            power_level: 50.0,
            power_vol: 0.5,
            gas_rate: 2.0,
            gas_level: 6.0,
            gas_vol: 0.4,
            gas_power_correlation: 0.8,
            jump_intensity: 8.0,
            jump_mean: 0.1,
            power_start: 50.0,
            gas_start: 6.0,
            salvage: 0.0,
        }
    }
}

impl ClConfig {
    pub fn dim(&self) -> usize {
        1 + self.fuels
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.fuels >= 1, "fuel count must be >= 1, got {}", self.fuels);
        ensure!(
            self.gas_power_correlation.abs() <= 1.0,
            "gas/power correlation must lie in [-1, 1]"
        );
        ensure!(
            self.power_level > 0.0 && self.gas_level > 0.0 && self.power_start > 0.0 && self.gas_start > 0.0,
            "price levels and starting prices must be positive"
        );
        ensure!(
            self.jump_intensity >= 0.0 && self.jump_intensity.is_finite(),
            "jump intensity must be >= 0"
        );
        Ok(())
    }

    /// Price dynamics for `P` and `F` fuels.
    ///
    /// Fuel `φ` loads `vol·ρ` on the power shock and `vol·sqrt(1-ρ²)·sqrt(F)`
    /// on its own shock. Averaging the logs over `F` fuels divides the own
    /// loadings by `F`, so the log geometric mean loads `vol·ρ` on the power
    /// shock and has own variance `vol²(1-ρ²)`: the same diffusion as the
    /// single gas price. The Itô correction for each fuel is larger than for
    /// the single gas price by `vol²(1-ρ²)(F-1)/2`, so the long-run log level
    /// is raised by that amount over `κ` to keep the geometric mean's drift
    /// identical. At `F = 1` the shift is zero and the model is the 2D one.
    pub fn dynamics(&self) -> Result<ExpOuJumpModel> {
        self.validate()?;
        let f = self.fuels;
        let d = self.dim();
        let rho = self.gas_power_correlation;
        let own = self.gas_vol * (1.0 - rho * rho).sqrt();
        let mut sigma = vec![0.0; d * d];
        sigma[0] = self.power_vol;
        for phi in 1..=f {
            sigma[phi * d] = self.gas_vol * rho;
            sigma[phi * d + phi] = own * (f as f64).sqrt();
        }
        let shift = own * own * (f as f64 - 1.0) / (2.0 * self.gas_rate);
        let mut kappa = vec![self.gas_rate; d];
        kappa[0] = self.power_rate;
        let mut mu = vec![self.gas_level.ln() + shift; d];
        mu[0] = self.power_level.ln();
        let jumps = if self.jump_intensity > 0.0 {
            JumpSpec {
                intensity: self.jump_intensity,
                mean_size: self.jump_mean,
                coords: vec![0],
            }
        } else {
            JumpSpec::none()
        };
        Ok(ExpOuJumpModel { kappa, mu, sigma, jumps })
    }

    pub fn start(&self) -> Vec<f64> {
        let mut x0 = vec![self.gas_start; self.dim()];
        x0[0] = self.power_start;
        x0
    }

    pub fn payoff(&self) -> ClPayoff {
        ClPayoff {
            fuels: self.fuels,
            objective: self.objective,
            salvage: self.salvage,
        }
    }
}

/// Payoff over state `[P, G_1..G_F]`; fuels enter through their geometric
/// mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClPayoff {
    pub fuels: usize,
    pub objective: ClObjective,
    pub salvage: f64,
}

impl Payoff for ClPayoff {
    fn modes(&self) -> usize {
        match self.objective {
            ClObjective::Scheduling => 3,
            ClObjective::Forward => 1,
        }
    }

    fn dim(&self) -> usize {
        1 + self.fuels
    }

    fn running(&self, _t: f64, x: &[f64], mode: usize) -> f64 {
        match self.objective {
            ClObjective::Scheduling => cl_profit(mode, x[0], geometric_mean(&x[1..])),
            ClObjective::Forward => 0.0,
        }
    }

    fn terminal(&self, x: &[f64], _mode: usize) -> f64 {
        match self.objective {
            ClObjective::Scheduling => self.salvage,
            ClObjective::Forward => x[0],
        }
    }

    fn cost(&self, x: &[f64], from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            cl_switch_cost(geometric_mean(&x[1..]))
        }
    }
}
