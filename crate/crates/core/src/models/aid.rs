//! Power-producer capacity mix: gas, coal and nuclear plants serving a
//! stochastic demand, four capacity modes.
//!
//! State `[D, A^1..A^3, S^0, S^1..S^3, P]` (see [`crate::paths::capacity`]).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::paths::{CointegratedPriceModel, JumpSpec, Seasonal};
use crate::problem::{Payoff, SwitchGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AidConfig {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub switching: SwitchGrid,
    pub dynamics: CointegratedPriceModel,
    /// `[Z^0..Z^F, S^0..S^F, P]` at time 0.
    pub start: Vec<f64>,
    pub payoff: AidPayoff,
}

/// Running profit and switching-cost parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AidPayoff {
    /// Nameplate capacity `M^{φ,i}`, one row per fuel, one column per mode.
    pub capacity: Vec<Vec<f64>>,
    /// Carbon weight `h⁰_φ` in the effective fuel price.
    pub carbon_weight: Vec<f64>,
    /// Fuel weight `h_φ` in the effective fuel price.
    pub fuel_weight: Vec<f64>,
    /// Per-fuel cost rate `c^φ` of changing that fuel's capacity level.
    pub change_cost: Vec<f64>,
    /// Fixed cost `ε` of any mode change.
    pub epsilon: f64,
    /// Price fraction earned on surplus capacity.
    pub surplus_rate: f64,
    /// Price multiple paid on unmet demand.
    pub deficit_rate: f64,
}

impl AidPayoff {
    pub fn fuels(&self) -> usize {
        self.capacity.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fuels();
        ensure!(f >= 1, "capacity table needs at least one fuel");
        let modes = self.capacity[0].len();
        ensure!(modes >= 1, "capacity table needs at least one mode");
        ensure!(
            self.capacity.iter().all(|r| r.len() == modes),
            "capacity rows must all have {modes} modes"
        );
        ensure!(
            self.carbon_weight.len() == f && self.fuel_weight.len() == f && self.change_cost.len() == f,
            "carbon, fuel and change-cost weights must have one entry per fuel ({f})"
        );
        ensure!(self.epsilon > 0.0, "fixed switching cost must be positive");
        Ok(())
    }

    pub fn total_capacity(&self, mode: usize) -> f64 {
        self.capacity.iter().map(|row| row[mode]).sum()
    }
}

impl Default for AidPayoff {
    fn default() -> Self {
        Self {
            capacity: vec![
                vec![50.0, 60.0, 60.0, 70.0],
                vec![10.0, 0.0, 10.0, 0.0],
                vec![10.0, 10.0, 0.0, 0.0],
            ],
            carbon_weight: vec![0.5, 2.0, 0.0],
            fuel_weight: vec![1.0, 1.5, 1.5],
            change_cost: vec![0.1, 0.1, 0.5],
            epsilon: 0.001,
            surplus_rate: 0.5,
            deficit_rate: 2.0,
        }
    }
}

impl Default for AidConfig {
    fn default() -> Self {
        #[rustfmt::skip]
        let driver_loading = vec![
            15.0, 0.1, 0.1, 0.0,
            0.1, 0.5, -0.1, 0.0,
            0.1, -0.1, 0.5, 0.0,
            0.0, 0.0, 0.0, 0.5,
        ];
        #[rustfmt::skip]
        let price_drift = vec![
            -4.0, 0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 2.0, -1.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 1.0, 1.0, -1.0,
        ];
        #[rustfmt::skip]
        let price_vol = [
            2.5, 1.25, 1.25, 1.25, 1.25,
            1.25, 5.0, 1.25, 1.25, 1.25,
            1.25, 1.25, 15.0, 1.25, 1.25,
            0.25, 0.25, 0.25, 1.5, 1.25,
            1.25, 1.25, 1.25, 1.25, 3.0,
        ]
        .iter()
        .map(|v| v / 100.0)
        .collect();
        Self {
            horizon: 0.25,
            steps: 90,
            switching: SwitchGrid::Every,
            dynamics: CointegratedPriceModel {
                fuels: 3,
                driver_rate: vec![4.0, 8.0, 8.0, 8.0],
                driver_loading,
                price_drift,
                price_vol,
                jumps: JumpSpec {
                    intensity: 8.0,
                    mean_size: 0.1,
                    coords: vec![4],
                },
                seasonal: Seasonal::default(),
                substeps: 4,
                price_floor: 1e-8,
            },
            start: vec![0.0, 0.0, 0.0, 0.0, 20.0, 40.0, 60.0, 20.0, 120.0],
            payoff: AidPayoff::default(),
        }
    }
}

impl AidConfig {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.payoff.validate()?;
        ensure!(
            self.payoff.fuels() == self.dynamics.fuels,
            "payoff has {} fuels but dynamics has {}",
            self.payoff.fuels(),
            self.dynamics.fuels
        );
        let f = self.dynamics.fuels;
        ensure!(
            self.start.len() == 2 * f + 3,
            "start must list {} drivers then {} prices",
            f + 1,
            f + 2
        );
        Ok(())
    }

    /// Observed state at time 0: demand, availabilities, prices.
    pub fn observed_start(&self) -> Vec<f64> {
        let f = self.dynamics.fuels;
        let nz = f + 1;
        let sd = self.dynamics.driver_stationary_sd();
        let mut x = Vec::with_capacity(self.dynamics.dim());
        x.push(self.start[0] + self.dynamics.seasonal.at(0.0));
        for phi in 1..=f {
            x.push(CointegratedPriceModel::availability(self.start[phi], sd[phi]));
        }
        x.extend_from_slice(&self.start[nz..]);
        x
    }
}

impl Payoff for AidPayoff {
    fn modes(&self) -> usize {
        self.capacity[0].len()
    }

    fn dim(&self) -> usize {
        2 * self.fuels() + 3
    }

    fn running(&self, _t: f64, x: &[f64], mode: usize) -> f64 {
        aid_profit(self, x, mode)
    }

    fn terminal(&self, _x: &[f64], _mode: usize) -> f64 {
        0.0
    }

    fn cost(&self, x: &[f64], from: usize, to: usize) -> f64 {
        if from == to {
            return 0.0;
        }
        let f = self.fuels();
        let fuel_prices = &x[f + 2..2 * f + 2];
        let changed: f64 = (0..f)
            .filter(|&phi| self.capacity[phi][from] != self.capacity[phi][to])
            .map(|phi| self.change_cost[phi] * fuel_prices[phi])
            .sum();
        changed + self.epsilon
    }
}

/// `P·min(D, K̄) + a·P(K̄ - D)⁺ - b·P(D - K̄)⁺ - Σ_φ K^φ S̃^φ` with
/// `K^φ = A^φ M^{φ,i}` and `S̃^φ = h⁰_φ S⁰ + h_φ S^φ`.
pub fn aid_profit(params: &AidPayoff, x: &[f64], mode: usize) -> f64 {
    let f = params.fuels();
    let demand = x[0];
    let avail = &x[1..=f];
    let carbon = x[f + 1];
    let fuel_prices = &x[f + 2..2 * f + 2];
    let power = x[2 * f + 2];
    let mut total = 0.0;
    let mut fuel_cost = 0.0;
    for phi in 0..f {
        let k = avail[phi] * params.capacity[phi][mode];
        total += k;
        fuel_cost += k * (params.carbon_weight[phi] * carbon + params.fuel_weight[phi] * fuel_prices[phi]);
    }
    power * demand.min(total) + params.surplus_rate * power * (total - demand).max(0.0)
        - params.deficit_rate * power * (demand - total).max(0.0)
        - fuel_cost
}

/// Running profit with the default capacity table and weights.
pub fn aid_running_cost(x: &[f64], mode: usize) -> f64 {
    aid_profit(&AidPayoff::default(), x, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(d: f64, a: [f64; 3], s: [f64; 4], p: f64) -> Vec<f64> {
        let mut x = vec![d];
        x.extend(a);
        x.extend(s);
        x.push(p);
        x
    }

    #[test]
    fn full_gas_example() {
        let x = state(50.0, [1.0; 3], [20.0, 40.0, 60.0, 20.0], 120.0);
        assert!((aid_running_cost(&x, 3) - 3700.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_and_empty_capacity() {
        let x = state(70.0, [1.0; 3], [20.0, 40.0, 60.0, 20.0], 100.0);
        // Mode 0: gas 50, coal 10, nuclear 10.
        let fuel = 50.0 * (10.0 + 40.0) + 10.0 * (40.0 + 90.0) + 10.0 * 30.0;
        assert!((aid_running_cost(&x, 0) - (100.0 * 70.0 - fuel)).abs() < 1e-9);
        let y = state(30.0, [0.0; 3], [20.0, 40.0, 60.0, 20.0], 100.0);
        assert!((aid_running_cost(&y, 2) + 2.0 * 100.0 * 30.0).abs() < 1e-12);
    }

    #[test]
    fn switch_cost_example() {
        let p = AidPayoff::default();
        let x = state(70.0, [1.0; 3], [20.0, 40.0, 60.0, 20.0], 100.0);
        assert!((p.cost(&x, 0, 1) - 10.001).abs() < 1e-12);
        assert_eq!(p.cost(&x, 2, 2), 0.0);
    }

    #[test]
    fn capacity_is_conserved() {
        let p = AidPayoff::default();
        for i in 0..4 {
            assert_eq!(p.total_capacity(i), 70.0);
        }
    }

    #[test]
    fn default_config_is_valid() {
        let c = AidConfig::default();
        c.validate().unwrap();
        assert_eq!(c.dynamics.drift_rank(), 3);
        let x = c.observed_start();
        assert_eq!(x.len(), 9);
        assert_eq!(x[0], 80.0);
        assert_eq!(&x[1..4], &[0.5, 0.5, 0.5]);
    }
}
