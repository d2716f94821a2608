//! Concrete problem instances, their TOML configuration and named presets.

mod aid;
mod cl;

pub use aid::{aid_profit, aid_running_cost, AidConfig, AidPayoff};
pub use cl::{cl_profit, cl_switch_cost, geometric_mean, ClConfig, ClObjective, ClPayoff};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::paths::{simulate_capacity_model, simulate_exp_ou_jump, CointegratedPriceModel, ExpOuJumpModel, PathBatch, TimeGrid};
use crate::problem::SwitchingProblem;

/// Model configuration as stored in TOML files and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Cl(ClConfig),
    Aid(AidConfig),
}

pub const PRESETS: &[&str] = &[
    "cl2d_lambda8",
    "cl2d_lambda16",
    "cl_hd_10",
    "cl_hd_20",
    "cl_hd_30",
    "cl_hd_40",
    "cl_hd_50",
    "cl_hd_60",
    "cl_hd_70",
    "cl_forward",
    "aid_capacity",
];

/// Looks up a named preset. `cl_hd_<d>` accepts any `d >= 2`.
pub fn preset(name: &str) -> Result<ModelConfig> {
    let cl = |intensity: f64| ClConfig {
        jump_intensity: intensity,
        ..ClConfig::default()
    };
    match name {
        "cl2d_lambda8" => Ok(ModelConfig::Cl(cl(8.0))),
        "cl2d_lambda16" => Ok(ModelConfig::Cl(cl(16.0))),
        "cl_forward" => Ok(ModelConfig::Cl(ClConfig {
            objective: ClObjective::Forward,
            jump_intensity: 0.0,
            ..ClConfig::default()
        })),
        "aid_capacity" => Ok(ModelConfig::Aid(AidConfig::default())),
        _ => {
            let d = name
                .strip_prefix("cl_hd_")
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&d| d >= 2)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "unknown preset '{name}' (known: {}, or cl_hd_<d> for d >= 2)",
                        PRESETS.join(", ")
                    ))
                })?;
            Ok(ModelConfig::Cl(ClConfig {
                fuels: d - 1,
                ..cl(8.0)
            }))
        }
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("model config: {e}")))
    }

    /// Hex SHA-256 of the TOML form; identifies the problem in manifests.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        match self {
            ModelConfig::Cl(c) => TimeGrid::new(c.horizon, c.steps),
            ModelConfig::Aid(c) => TimeGrid::new(c.horizon, c.steps),
        }
    }

    pub fn build(&self) -> Result<Model> {
        let grid = self.grid()?;
        match self {
            ModelConfig::Cl(c) => {
                let dynamics = c.dynamics()?;
                let problem = SwitchingProblem::new(Arc::new(c.payoff()), grid, c.switching)?;
                Ok(Model {
                    config: self.clone(),
                    problem,
                    start: c.start(),
                    observed_start: c.start(),
                    dynamics: Dynamics::ExpOu(dynamics),
                })
            }
            ModelConfig::Aid(c) => {
                c.validate()?;
                let problem = SwitchingProblem::new(Arc::new(c.payoff.clone()), grid, c.switching)?;
                Ok(Model {
                    config: self.clone(),
                    problem,
                    start: c.start.clone(),
                    observed_start: c.observed_start(),
                    dynamics: Dynamics::Capacity(c.dynamics.clone()),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Dynamics {
    ExpOu(ExpOuJumpModel),
    Capacity(CointegratedPriceModel),
}

/// A built instance: switching problem plus the state simulator.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    problem: SwitchingProblem,
    start: Vec<f64>,
    observed_start: Vec<f64>,
    dynamics: Dynamics,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn problem(&self) -> &SwitchingProblem {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn modes(&self) -> usize {
        self.problem.modes()
    }

    /// State `X_0` as seen by the payoff and the networks.
    pub fn initial_state(&self) -> &[f64] {
        &self.observed_start
    }

    pub fn tag(&self) -> &'static str {
        match self.config {
            ModelConfig::Cl(_) => "cl",
            ModelConfig::Aid(_) => "aid",
        }
    }

    pub fn simulate(&self, paths: usize, seed: u64) -> Result<PathBatch> {
        let grid = self.problem.grid();
        match &self.dynamics {
            Dynamics::ExpOu(m) => simulate_exp_ou_jump(m, &grid, &self.start, paths, seed, self.tag()),
            Dynamics::Capacity(m) => simulate_capacity_model(m, &grid, &self.start, paths, seed, self.tag()),
        }
    }

    /// The exponential-OU dynamics, for CL instances.
    pub fn exp_ou(&self) -> Option<&ExpOuJumpModel> {
        match &self.dynamics {
            Dynamics::ExpOu(m) => Some(m),
            Dynamics::Capacity(_) => None,
        }
    }

    /// The capacity-model dynamics, for capacity-mix instances.
    pub fn capacity(&self) -> Option<&CointegratedPriceModel> {
        match &self.dynamics {
            Dynamics::Capacity(m) => Some(m),
            Dynamics::ExpOu(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for name in PRESETS {
            let m = preset(name).unwrap().build().unwrap();
            assert_eq!(m.initial_state().len(), m.dim(), "{name}");
        }
        assert_eq!(preset("cl_hd_30").unwrap().build().unwrap().dim(), 30);
        assert!(preset("cl_hd_1").is_err());
        assert!(preset("nope").is_err());
    }

    #[test]
    fn toml_round_trip_is_exact() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg, "{name}:\n{text}");
        }
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ModelConfig::from_toml("kind = \"cl\"\njump_intensity = 16.0\n").unwrap();
        assert_eq!(cfg, preset("cl2d_lambda16").unwrap());
        assert!(ModelConfig::from_toml("kind = \"cl\"\nbogus = 1\n").is_err());
        assert!(matches!(ModelConfig::from_toml("kind = \"zz\""), Err(Error::Format(_))));
    }
}
