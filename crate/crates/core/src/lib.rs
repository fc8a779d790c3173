//! Hierarchical CPG-based gait controller for an 8-DOF quadruped.
//!
//! The crate bundles everything needed to train and evaluate the controller
//! on a desk: a sinusoidal oscillator bank with period synchronization
//! ([`cpg`]), a simplified floating-base quadruped with penalty contact
//! ([`dynamics`]), the ten-term locomotion cost ([`costs`]), hand-written
//! MLPs with analytic backpropagation ([`policy`]), a PPO trainer ([`ppo`]),
//! the 20 Hz / 100 Hz control loop ([`controller`]) and the experiment
//! harness ([`bench`], [`suite`]).

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod costs;
pub mod cpg;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod policy;
pub mod ppo;
pub mod suite;

pub use controller::{ControllerConfig, HierarchicalController, PeriodSource, PhaseSource};
pub use costs::{CostBreakdown, CostInputs, CostWeights, Curriculum, LegPhaseCost};
pub use cpg::{ClockState, CpgParams, GaitKind, StanceConvention};
pub use dynamics::{PdGains, RobotModel, RobotState};
pub use error::{Error, Result};
pub use policy::{GaussianPolicy, Mlp, Observation};
pub use ppo::{RolloutBuffer, TrainConfig, TrainMode};
pub use suite::SuiteMode;
