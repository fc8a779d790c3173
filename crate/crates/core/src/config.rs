//! Experiment configuration files.
//!
//! A config is a TOML document with three optional tables: `[train]`,
//! `[sim]` and `[model]`. Missing keys take their defaults; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{ControllerConfig, PeriodSource, PhaseSource};
use crate::costs::{CostOptions, CostWeights, LegPhaseCost, NUM_TERMS};
use crate::cpg::StanceConvention;
use crate::dynamics::{PdGains, RobotModel};
use crate::env::{CommandSpec, ControlMode, EnvConfig};
use crate::error::{Error, Result};
use crate::policy::{HighActionSpace, LowActionSpace};
use crate::ppo::{TrainConfig, TrainMode};

/// Simulation, controller and cost settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub physics_substeps: usize,
    pub episode_ticks: u64,
    pub reset_perturbation: f64,
    pub initial_period: f64,
    pub high_level_period: f64,
    pub control_dt: f64,
    pub kp: f64,
    pub kd: f64,
    pub stance: StanceConvention,
    /// Replaces the learned period when set.
    pub fixed_period: Option<f64>,
    pub leg_phase_cost: LegPhaseCost,
    pub weights: [f64; NUM_TERMS],
    pub amplitude_max: f64,
    pub period_min: f64,
    pub period_max: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let high = HighActionSpace::default();
        Self {
            physics_substeps: 4,
            episode_ticks: 400,
            reset_perturbation: 0.02,
            initial_period: 0.5,
            high_level_period: 0.05,
            control_dt: 0.01,
            kp: 50.0,
            kd: 0.5,
            stance: StanceConvention::default(),
            fixed_period: None,
            leg_phase_cost: LegPhaseCost::default(),
            weights: CostWeights::default().0,
            amplitude_max: LowActionSpace::default().amplitude_max,
            period_min: high.period_min,
            period_max: high.period_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub sim: SimSettings,
    pub model: RobotModel,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_digest(self.to_toml_string()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env_config(TrainMode::Multi)?.validate()
    }

    /// Environment for a given training mode.
    pub fn env_config(&self, mode: TrainMode) -> Result<EnvConfig> {
        let s = &self.sim;
        let t = &self.train;
        let mut weights = CostWeights(s.weights);
        let (phase_source, control_mode) = match mode {
            TrainMode::Single(g) => (PhaseSource::Fixed(g), ControlMode::Hierarchical),
            TrainMode::Multi => (PhaseSource::Schedule, ControlMode::Hierarchical),
            TrainMode::Baseline => {
                weights = weights.without_leg_phase();
                (PhaseSource::Fixed(crate::cpg::GaitKind::Trot), ControlMode::Baseline)
            }
        };
        let command = match t.fixed_command {
            Some(v) => CommandSpec::Fixed(v),
            None => CommandSpec::Uniform {
                low: t.command_low,
                high: t.command_high,
            },
        };
        Ok(EnvConfig {
            controller: ControllerConfig {
                high_level_period: s.high_level_period,
                control_dt: s.control_dt,
                gains: PdGains::uniform(s.kp, s.kd)?,
                phase_source,
                period_source: s.fixed_period.map_or(PeriodSource::Policy, PeriodSource::Fixed),
                stance: s.stance,
                high_space: HighActionSpace {
                    period_min: s.period_min,
                    period_max: s.period_max,
                },
                low_space: LowActionSpace {
                    amplitude_max: s.amplitude_max,
                    calf_limits: self.model.calf_limits,
                },
            },
            model: self.model.clone(),
            mode: control_mode,
            weights,
            cost_options: CostOptions {
                leg_phase: s.leg_phase_cost,
            },
            physics_substeps: s.physics_substeps,
            episode_ticks: s.episode_ticks,
            reset_perturbation: s.reset_perturbation,
            command,
            initial_period: s.initial_period,
        })
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[train]\nseed = 7\n[sim]\nfixed_period = 0.4\n").unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.sim.fixed_period, Some(0.4));
        assert_eq!(cfg.model, RobotModel::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[train]\nsede = 7\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[sim]\nhigh_level_period = 0.033\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\ngamma = 1.5\n").is_err());
    }

    #[test]
    fn baseline_drops_leg_phase_cost() {
        let env = ExperimentConfig::default().env_config(TrainMode::Baseline).unwrap();
        assert_eq!(env.weights.0[9], 0.0);
        assert_eq!(env.mode, ControlMode::Baseline);
    }
}
