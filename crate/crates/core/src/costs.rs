//! Locomotion cost terms, their weighted sum, and the cost-scale curriculum.
//!
//! Terms `c1..c10`: base angular velocity, base linear velocity, torque,
//! joint speed, foot vertical velocity, foot clearance, foot slip,
//! orientation, action smoothness and leg phase.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cpg::NUM_LEGS;
use crate::dynamics::{RobotState, NUM_JOINTS};
use crate::error::{Error, Result};

pub const NUM_TERMS: usize = 10;

pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "angular_velocity",
    "linear_velocity",
    "torque",
    "joint_speed",
    "foot_vertical_velocity",
    "foot_clearance",
    "foot_slip",
    "orientation",
    "smoothness",
    "leg_phase",
];

/// Default swing-foot clearance target, m.
pub const DEFAULT_CLEARANCE_TARGET: f64 = 0.07;

/// Sharp logistic kernel used for the angular velocity term.
pub fn k_angular(x: f64) -> f64 {
    -logistic_bump(10.0 * x)
}

/// Wide plus sharp logistic kernel used for the linear velocity term.
pub fn k_linear(x: f64) -> f64 {
    -logistic_bump(x) - logistic_bump(10.0 * x)
}

/// `1 / (e^x + 2 + e^-x)`, evaluated without overflow for large `|x|`.
fn logistic_bump(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    // multiply through by e^-|x|
    e / (1.0 + 2.0 * e + e * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights(pub [f64; NUM_TERMS]);

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights([120.0, 500.0, 0.5, 0.02, 1.0, 1.5e4, 200.0, 100.0, 0.5, 300.0])
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("cost weights must be finite".into()))
        }
    }

    /// The same weights with the leg phase term disabled.
    pub fn without_leg_phase(mut self) -> Self {
        self.0[NUM_TERMS - 1] = 0.0;
        self
    }
}

/// Cost scale `k_c` annealed towards one by `k_c <- k_c^k_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub k_c: f64,
    pub k_d: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { k_c: 0.3, k_d: 0.999 }
    }
}

impl Curriculum {
    pub fn new(k_c: f64, k_d: f64) -> Result<Self> {
        if !(k_c > 0.0 && k_c <= 1.0) {
            return Err(Error::Config(format!("cost scale must lie in (0, 1], got {k_c}")));
        }
        if !(k_d > 0.0 && k_d < 1.0) {
            return Err(Error::Config(format!("curriculum factor must lie in (0, 1), got {k_d}")));
        }
        Ok(Self { k_c, k_d })
    }

    pub fn update(self) -> Self {
        Self {
            k_c: self.k_c.powf(self.k_d),
            ..self
        }
    }

    /// `k_c` after `n` updates: `k_c0^(k_d^n)`.
    pub fn after(self, n: u32) -> f64 {
        self.k_c.powf(self.k_d.powi(n as i32))
    }
}

pub fn curriculum_update(c: Curriculum) -> Curriculum {
    c.update()
}

/// Reading of the leg phase term. With `m` the fraction of feet whose
/// contact agrees with the commanded phase:
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegPhaseCost {
    /// `1 - m`: disagreement is penalized.
    #[default]
    Mismatch,
    /// `-m`: agreement is rewarded, in the style of the velocity kernels.
    /// Differs from `Mismatch` by a constant per tick, which matters once
    /// episodes can end early.
    NegatedMatch,
    /// `m`, the literal formula; rewards disagreement under minimization.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CostOptions {
    pub leg_phase: LegPhaseCost,
}

/// Everything a single cost evaluation needs.
#[derive(Debug, Clone, Copy)]
pub struct CostInputs<'a> {
    pub state: &'a RobotState,
    /// Forward command, expanded to `(v, 0, 0)` in the heading frame.
    pub command_velocity: f64,
    /// Desired world-frame angular velocity.
    pub command_angular_velocity: Vector3<f64>,
    pub torques: &'a [f64; NUM_JOINTS],
    pub action: &'a [f64],
    pub previous_action: &'a [f64],
    /// `G_i`: 1 in stance, 0 in swing.
    pub leg_phase: [u8; NUM_LEGS],
    pub clearance_target: f64,
}

impl<'a> CostInputs<'a> {
    pub fn new(
        state: &'a RobotState,
        command_velocity: f64,
        torques: &'a [f64; NUM_JOINTS],
        action: &'a [f64],
        previous_action: &'a [f64],
        leg_phase: [u8; NUM_LEGS],
    ) -> Self {
        Self {
            state,
            command_velocity,
            command_angular_velocity: Vector3::zeros(),
            torques,
            action,
            previous_action,
            leg_phase,
            clearance_target: DEFAULT_CLEARANCE_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terms: [f64; NUM_TERMS],
    /// `Σ w_i c_i`.
    pub total: f64,
    /// `-total`.
    pub reward: f64,
}

impl CostBreakdown {
    pub fn from_terms(terms: [f64; NUM_TERMS], weights: &CostWeights) -> Self {
        let total = terms.iter().zip(&weights.0).map(|(c, w)| w * c).sum::<f64>();
        Self {
            terms,
            total,
            reward: -total,
        }
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = (1..=NUM_TERMS).map(|i| format!("c{i}")).collect();
        h.push("total".into());
        h.push("reward".into());
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        self.terms
            .iter()
            .chain([&self.total, &self.reward])
            .map(|x| x.to_string())
            .collect()
    }
}

/// Evaluates all ten cost terms at cost scale `k_c`.
pub fn compute_costs(
    inputs: &CostInputs<'_>,
    k_c: f64,
    weights: &CostWeights,
    options: &CostOptions,
) -> Result<CostBreakdown> {
    if inputs.action.len() != inputs.previous_action.len() {
        return Err(Error::contract(format!(
            "action length {} differs from previous action length {}",
            inputs.action.len(),
            inputs.previous_action.len()
        )));
    }
    let s = inputs.state;

    let ang_err = (s.base_angular_velocity - inputs.command_angular_velocity).norm_squared();
    let c1 = k_angular(k_c * ang_err);

    let lin_err = s.heading_linear_velocity() - Vector3::new(inputs.command_velocity, 0.0, 0.0);
    let c2 = k_linear(lin_err.abs().sum());

    let c3 = k_c * inputs.torques.iter().map(|t| t * t).sum::<f64>().sqrt();
    let c4 = k_c * s.joint_velocities.iter().map(|w| w * w).sum::<f64>();

    let mut vertical = 0.0;
    let mut clearance = 0.0;
    let mut slip = 0.0;
    for leg in 0..NUM_LEGS {
        let foot = s.foot(leg);
        vertical += foot.vertical_velocity.powi(2);
        let tangential = foot.tangential_velocity.norm();
        if s.contacts[leg] {
            slip += tangential;
        } else {
            clearance += (inputs.clearance_target - foot.position.z).max(0.0).powi(2) * tangential;
        }
    }
    let c5 = k_c * vertical;
    let c6 = k_c * clearance;
    let c7 = k_c * slip;

    let c8 = k_c * (Vector3::z() - s.gravity_axis).norm();

    let c9 = k_c
        * inputs
            .previous_action
            .iter()
            .zip(inputs.action)
            .map(|(p, a)| (p - a).powi(2))
            .sum::<f64>()
            .sqrt();

    let c10 = 0.25
        * (0..NUM_LEGS)
            .map(|leg| {
                let g = f64::from(u8::from(s.contacts[leg]));
                let phase = f64::from(inputs.leg_phase[leg]);
                let agree = g * phase + (1.0 - g) * (1.0 - phase);
                match options.leg_phase {
                    LegPhaseCost::Mismatch => 1.0 - agree,
                    LegPhaseCost::NegatedMatch => -agree,
                    LegPhaseCost::AsPrinted => agree,
                }
            })
            .sum::<f64>();

    let terms = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10];
    if let Some(i) = terms.iter().position(|c| !c.is_finite()) {
        return Err(Error::Cost(format!("term c{} is not finite", i + 1)));
    }
    let breakdown = CostBreakdown::from_terms(terms, weights);
    if !breakdown.total.is_finite() {
        return Err(Error::Cost("weighted total is not finite".into()));
    }
    Ok(breakdown)
}
