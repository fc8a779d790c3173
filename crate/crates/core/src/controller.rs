//! The two-rate control loop: a 20 Hz CPG planner and a 100 Hz local
//! feedback policy feeding a PD joint controller.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::cpg::{
    eval_cpg, gait_for_velocity, leg_phase_indicator, phase_at, synchronize, wrap_angle, ClockState,
    CpgParams, GaitKind, StanceConvention, NUM_LEGS,
};
use crate::dynamics::{pd_torque, PdGains, RobotModel, RobotState, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::policy::{
    squash, GaussianPolicy, HighActionSpace, LowActionSpace, Observation, BASELINE_ACTION_DIM,
    BASELINE_OBS_DIM, LOW_ACTION_DIM, LOW_OBS_DIM,
};

/// Where the per-leg phase offsets come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    Fixed(GaitKind),
    /// Velocity schedule: trot, pace, bound on `(0,0.5]`, `(0.5,1]`, `(1,1.5]`.
    Schedule,
}

impl PhaseSource {
    pub fn gait(&self, v: f64) -> Result<GaitKind> {
        match self {
            PhaseSource::Fixed(g) => Ok(*g),
            PhaseSource::Schedule => gait_for_velocity(v.clamp(f64::MIN_POSITIVE, 1.5)),
        }
    }
}

/// Where the CPG period comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodSource {
    Policy,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// High-level period `T_CPG`, s.
    pub high_level_period: f64,
    /// Low-level period, s.
    pub control_dt: f64,
    pub gains: PdGains,
    pub phase_source: PhaseSource,
    pub period_source: PeriodSource,
    pub stance: StanceConvention,
    pub high_space: HighActionSpace,
    pub low_space: LowActionSpace,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            high_level_period: 0.05,
            control_dt: 0.01,
            gains: PdGains::default(),
            phase_source: PhaseSource::Fixed(GaitKind::Trot),
            period_source: PeriodSource::Policy,
            stance: StanceConvention::default(),
            high_space: HighActionSpace::default(),
            low_space: LowActionSpace::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.high_level_period > 0.0 && self.control_dt > 0.0) {
            return Err(Error::Config("controller periods must be positive".into()));
        }
        let ratio = self.high_level_period / self.control_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "high-level period {} is not an integer multiple of the control period {}",
                self.high_level_period, self.control_dt
            )));
        }
        if let PeriodSource::Fixed(p) = self.period_source {
            if !(p > 0.0) {
                return Err(Error::Config(format!("fixed CPG period must be positive, got {p}")));
            }
        }
        Ok(())
    }

    pub fn ticks_per_decision(&self) -> u64 {
        (self.high_level_period / self.control_dt).round() as u64
    }
}

/// Result of one high-level decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighLevelOutcome {
    pub tick: u64,
    pub params: CpgParams,
    pub gait: GaitKind,
    pub previous_gait: GaitKind,
    /// Largest per-leg jump of the CPG value at the decision instant.
    pub discontinuity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowLevelOutcome {
    pub targets: [f64; NUM_JOINTS],
    pub amplitude: f64,
    /// Decoded action `[A, calf0..calf3]`.
    pub action: [f64; LOW_ACTION_DIM],
    /// Set when the policy output was not finite and targets were held.
    pub fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub high: Option<HighLevelOutcome>,
    pub low: LowLevelOutcome,
    pub torques: [f64; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub cpg: CpgParams,
    pub clock: ClockState,
    pub last_decision_tick: Option<u64>,
    /// Table offsets of the gait currently in use.
    pub gait: GaitKind,
    pub previous_action: [f64; LOW_ACTION_DIM],
    pub targets: [f64; NUM_JOINTS],
}

/// Runtime of the hierarchical controller.
#[derive(Debug, Clone)]
pub struct HierarchicalController {
    config: ControllerConfig,
    state: ControllerState,
}

impl HierarchicalController {
    /// Starts at tick zero with period `initial_period` and the gait the
    /// phase source picks for `v`.
    pub fn new(config: ControllerConfig, initial_period: f64, v: f64) -> Result<Self> {
        config.validate()?;
        let gait = config.phase_source.gait(v)?;
        let cpg = CpgParams::from_period(initial_period, gait.phase_offsets())?;
        let previous_action = config.low_space.midpoint();
        let (a, calf) = (previous_action[0], &previous_action[1..]);
        let clock = ClockState::new(config.control_dt)?;
        let thigh = eval_cpg(&cpg, 0.0).map(|s| a * s);
        let targets = std::array::from_fn(|j| if j < NUM_LEGS { thigh[j] } else { calf[j - NUM_LEGS] });
        Ok(Self {
            config,
            state: ControllerState {
                cpg,
                clock,
                last_decision_tick: None,
                gait,
                previous_action,
                targets,
            },
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn cpg(&self) -> &CpgParams {
        &self.state.cpg
    }

    pub fn clock(&self) -> &ClockState {
        &self.state.clock
    }

    pub fn time(&self) -> f64 {
        self.state.clock.time()
    }

    pub fn is_decision_tick(&self) -> bool {
        self.state.clock.step.is_multiple_of(self.config.ticks_per_decision())
    }

    /// Period used at the next decision when the source is fixed.
    pub fn fixed_period(&self) -> Option<f64> {
        match self.config.period_source {
            PeriodSource::Fixed(p) => Some(p),
            PeriodSource::Policy => None,
        }
    }

    /// Resynchronizes the oscillator bank to `period` and the gait selected
    /// for `v`. Only the period change is made continuous; a gait change
    /// applies its offset delta directly.
    pub fn high_level_step(&mut self, v: f64, period: f64) -> Result<HighLevelOutcome> {
        if !self.is_decision_tick() {
            return Err(Error::contract(format!(
                "high-level step requested at tick {}, which is not a multiple of {}",
                self.state.clock.step,
                self.config.ticks_per_decision()
            )));
        }
        let t = self.time();
        let before = eval_cpg(&self.state.cpg, t);
        let synced = synchronize(&self.state.cpg, period, &self.state.clock)?;
        let previous_gait = self.state.gait;
        let gait = self.config.phase_source.gait(v)?;
        let (old_off, new_off) = (previous_gait.phase_offsets(), gait.phase_offsets());
        let phases: [f64; NUM_LEGS] =
            std::array::from_fn(|i| wrap_angle(synced.phases()[i] + new_off[i] - old_off[i]));
        let params = CpgParams::new(synced.frequency(), phases)?;
        let after = eval_cpg(&params, t);
        let discontinuity = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.state.cpg = params;
        self.state.gait = gait;
        self.state.last_decision_tick = Some(self.state.clock.step);
        Ok(HighLevelOutcome {
            tick: self.state.clock.step,
            params,
            gait,
            previous_gait,
            discontinuity,
        })
    }

    /// Low-level observation; see [`crate::policy::LOW_OBS_DIM`] for the layout.
    pub fn build_observation(&self, robot: &RobotState, v: f64) -> Observation {
        let mut obs = Vec::with_capacity(LOW_OBS_DIM);
        push_proprioception(&mut obs, robot);
        obs.extend(self.state.previous_action);
        obs.push(v);
        obs.push(TAU / self.state.cpg.frequency());
        for p in phase_at(&self.state.cpg, &self.state.clock) {
            obs.push(p.sin());
            obs.push(p.cos());
        }
        let mut onehot = [0.0; 3];
        onehot[GaitKind::nearest(&self.state.cpg.phases()).index()] = 1.0;
        obs.extend(onehot);
        debug_assert_eq!(obs.len(), LOW_OBS_DIM);
        Observation(obs)
    }

    /// Turns a raw low-level policy output into eight joint targets: thigh
    /// `A * CPG_i(t)`, calf taken directly from the policy.
    pub fn low_level_step(&mut self, raw: &[f64]) -> LowLevelOutcome {
        if raw.len() != LOW_ACTION_DIM || raw.iter().any(|x| !x.is_finite()) {
            return LowLevelOutcome {
                targets: self.state.targets,
                amplitude: self.state.previous_action[0],
                action: self.state.previous_action,
                fault: true,
            };
        }
        let action = self.config.low_space.decode_vec(raw);
        let thigh = eval_cpg(&self.state.cpg, self.time()).map(|s| action[0] * s);
        let targets = std::array::from_fn(|j| if j < NUM_LEGS { thigh[j] } else { action[1 + j - NUM_LEGS] });
        self.state.targets = targets;
        self.state.previous_action = action;
        LowLevelOutcome {
            targets,
            amplitude: action[0],
            action,
            fault: false,
        }
    }

    /// Stance indicator of every leg at the current tick.
    pub fn leg_phase(&self) -> [u8; NUM_LEGS] {
        leg_phase_indicator(&self.state.cpg, &self.state.clock, self.config.stance)
    }

    pub fn advance(&mut self) {
        self.state.clock.tick();
    }

    /// One low-level tick with caller-supplied action sources. `high` maps
    /// the command to a raw period output and is consulted only on decision
    /// ticks with a policy period source.
    pub fn control_step_with(
        &mut self,
        robot: &RobotState,
        v: f64,
        model: &RobotModel,
        mut high: impl FnMut(f64) -> Result<f64>,
        mut low: impl FnMut(&Observation) -> Result<Vec<f64>>,
    ) -> Result<ControlOutput> {
        let high_out = if self.is_decision_tick() {
            let period = match self.config.period_source {
                PeriodSource::Fixed(p) => p,
                PeriodSource::Policy => self.config.high_space.period(high(v)?),
            };
            Some(self.high_level_step(v, period)?)
        } else {
            None
        };
        let obs = self.build_observation(robot, v);
        let raw = low(&obs)?;
        let low_out = self.low_level_step(&raw);
        let torques = pd_torque(&low_out.targets, robot, &self.config.gains, model.torque_limit);
        self.advance();
        Ok(ControlOutput {
            high: high_out,
            low: low_out,
            torques,
        })
    }

    /// One deterministic tick using the policies' mean actions.
    pub fn control_step(
        &mut self,
        robot: &RobotState,
        v: f64,
        model: &RobotModel,
        high: Option<&GaussianPolicy>,
        low: &GaussianPolicy,
        low_input_scale: &[f64],
    ) -> Result<ControlOutput> {
        self.control_step_with(
            robot,
            v,
            model,
            |v| match high {
                Some(p) => Ok(p.mode(&[v])?[0]),
                None => Err(Error::contract("policy period source without a high-level policy")),
            },
            |obs| low.mode(&scale_input(obs.as_slice(), low_input_scale)),
        )
    }
}

pub(crate) fn scale_input(obs: &[f64], scale: &[f64]) -> Vec<f64> {
    obs.iter().zip(scale).map(|(o, s)| o * s).collect()
}

fn push_proprioception(obs: &mut Vec<f64>, robot: &RobotState) {
    obs.extend(robot.gravity_axis.iter());
    obs.extend(robot.body_linear_velocity().iter());
    obs.extend(robot.body_angular_velocity().iter());
    obs.extend(robot.joint_angles);
    obs.extend(robot.joint_velocities);
}

/// End-to-end comparison controller: one policy emitting all eight joint
/// targets, no oscillator.
#[derive(Debug, Clone)]
pub struct BaselineController {
    limits: [[f64; 2]; NUM_JOINTS],
    gains: PdGains,
    previous_action: [f64; BASELINE_ACTION_DIM],
    targets: [f64; NUM_JOINTS],
    clock: ClockState,
}

impl BaselineController {
    pub fn new(model: &RobotModel, gains: PdGains, control_dt: f64) -> Result<Self> {
        let limits: [[f64; 2]; NUM_JOINTS] = std::array::from_fn(|j| model.joint_limits(j));
        let mid = limits.map(|[lo, hi]| squash(0.0, lo, hi));
        Ok(Self {
            limits,
            gains,
            previous_action: mid,
            targets: mid,
            clock: ClockState::new(control_dt)?,
        })
    }

    pub fn clock(&self) -> &ClockState {
        &self.clock
    }

    pub fn previous_action(&self) -> &[f64; BASELINE_ACTION_DIM] {
        &self.previous_action
    }

    pub fn build_observation(&self, robot: &RobotState, v: f64) -> Observation {
        let mut obs = Vec::with_capacity(BASELINE_OBS_DIM);
        push_proprioception(&mut obs, robot);
        obs.extend(self.previous_action);
        obs.push(v);
        Observation(obs)
    }

    pub fn apply(&mut self, raw: &[f64]) -> ([f64; NUM_JOINTS], bool) {
        if raw.len() != BASELINE_ACTION_DIM || raw.iter().any(|x| !x.is_finite()) {
            return (self.targets, true);
        }
        let targets = std::array::from_fn(|j| squash(raw[j], self.limits[j][0], self.limits[j][1]));
        self.targets = targets;
        self.previous_action = targets;
        (targets, false)
    }

    pub fn torques(&self, robot: &RobotState, model: &RobotModel) -> [f64; NUM_JOINTS] {
        pd_torque(&self.targets, robot, &self.gains, model.torque_limit)
    }

    pub fn advance(&mut self) {
        self.clock.tick();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::gait_phase_offsets;
    use crate::dynamics::reset;
    use crate::policy::{HIGH_HIDDEN, LOW_HIDDEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ctrl(phase: PhaseSource, period: PeriodSource) -> HierarchicalController {
        let cfg = ControllerConfig {
            phase_source: phase,
            period_source: period,
            ..ControllerConfig::default()
        };
        HierarchicalController::new(cfg, 0.5, 0.3).unwrap()
    }

    #[test]
    fn config_requires_integer_ratio() {
        let cfg = ControllerConfig {
            high_level_period: 0.055,
            ..ControllerConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(ControllerConfig::default().ticks_per_decision(), 5);
    }

    #[test]
    fn same_period_keeps_signal() {
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        for _ in 0..10 {
            c.advance();
        }
        let before = eval_cpg(c.cpg(), c.time());
        let out = c.high_level_step(0.3, 0.5).unwrap();
        assert!(out.discontinuity < 1e-12);
        assert_eq!(before, eval_cpg(c.cpg(), c.time()).map(|x| x + 0.0));
    }

    #[test]
    fn period_change_is_continuous() {
        // B_old = 4π (period 0.5) switching to period 1.0 at t = 1.0
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Pace), PeriodSource::Fixed(0.5));
        for _ in 0..100 {
            c.advance();
        }
        assert!((c.cpg().frequency() - 4.0 * PI).abs() < 1e-12);
        let out = c.high_level_step(0.3, 1.0).unwrap();
        assert!(out.discontinuity < 1e-9);
        assert!((c.cpg().frequency() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn schedule_switches_gait_and_records_jump() {
        let mut c = ctrl(PhaseSource::Schedule, PeriodSource::Fixed(0.5));
        assert_eq!(c.state().gait, GaitKind::Trot);
        for _ in 0..5 {
            c.advance();
        }
        let out = c.high_level_step(0.7, 0.5).unwrap();
        assert_eq!(out.previous_gait, GaitKind::Trot);
        assert_eq!(out.gait, GaitKind::Pace);
        let rel: Vec<f64> = c.cpg().phases().iter().map(|p| wrap_angle(p - c.cpg().phases()[0])).collect();
        let table = gait_phase_offsets(GaitKind::Pace);
        for i in 0..NUM_LEGS {
            assert!(crate::cpg::angle_diff(rel[i], table[i] - table[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn off_schedule_high_level_is_rejected() {
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        c.advance();
        assert!(matches!(c.high_level_step(0.3, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn thigh_targets_follow_amplitude() {
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        c.advance();
        let out = c.low_level_step(&[-1e9, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&out.targets[..4], &[0.0; 4]);
        assert_eq!(out.targets.len(), 8);

        // A = 0.5 exactly: raw = logit(0.5 / 0.8)
        let p: f64 = 0.5 / 0.8;
        let raw_a = (p / (1.0 - p)).ln();
        // pick t where CPG = [1, -1, 0, 0.5]: custom phases
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        c.state.cpg = CpgParams::new(TAU / 0.5, [PI / 2.0, 1.5 * PI, 0.0, PI / 6.0]).unwrap();
        let out = c.low_level_step(&[raw_a, 0.0, 0.0, 0.0, 0.0]);
        let expected = [0.5, -0.5, 0.0, 0.25];
        for i in 0..4 {
            assert!((out.targets[i] - expected[i]).abs() < 1e-12);
        }
        assert!(out.targets[4..].iter().all(|c| (c + 0.4).abs() < 1e-12));
    }

    #[test]
    fn non_finite_policy_output_holds_targets() {
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        let first = c.low_level_step(&[0.3, 0.1, 0.2, 0.3, 0.4]);
        let held = c.low_level_step(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        assert!(held.fault);
        assert_eq!(held.targets, first.targets);
    }

    #[test]
    fn observation_layout() {
        let model = RobotModel::default();
        let robot = reset(&model, 0, 0.0);
        let c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Fixed(0.5));
        let obs = c.build_observation(&robot, 0.3);
        assert_eq!(obs.len(), 43);
        assert!((obs.0[31] - TAU / c.cpg().frequency()).abs() < 1e-15);
        assert!((obs.0[31] - 0.5).abs() < 1e-12);
        assert_eq!(&obs.0[40..], &[1.0, 0.0, 0.0]);
        assert_eq!(obs.0[30], 0.3);
        let pace = ctrl(PhaseSource::Fixed(GaitKind::Pace), PeriodSource::Fixed(0.5));
        assert_eq!(&pace.build_observation(&robot, 0.3).0[40..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn control_step_cadence_and_limits() {
        let model = RobotModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sizes = vec![1];
        sizes.extend(HIGH_HIDDEN);
        sizes.push(1);
        let high = GaussianPolicy::new(&sizes, &mut rng).unwrap();
        let mut sizes = vec![LOW_OBS_DIM];
        sizes.extend(LOW_HIDDEN);
        sizes.push(LOW_ACTION_DIM);
        let mut low = GaussianPolicy::new(&sizes, &mut rng).unwrap();
        low.mean.params_mut().iter_mut().for_each(|p| *p *= 300.0);
        let scale = crate::policy::ObsLayout::Low.input_scale();
        let mut c = ctrl(PhaseSource::Fixed(GaitKind::Trot), PeriodSource::Policy);
        let robot = reset(&model, 0, 0.0);
        let mut decisions = Vec::new();
        for tick in 0..23 {
            let out = c.control_step(&robot, 0.6, &model, Some(&high), &low, &scale).unwrap();
            if out.high.is_some() {
                decisions.push(tick);
            }
            assert!(out.torques.iter().all(|t| t.abs() <= model.torque_limit));
            assert!(out.low.targets[..4].iter().all(|t| t.abs() <= 0.8));
        }
        assert_eq!(decisions, vec![0, 5, 10, 15, 20]);
        assert_eq!(c.clock().step, 23);
    }

    #[test]
    fn baseline_observation_and_targets() {
        let model = RobotModel::default();
        let robot = reset(&model, 0, 0.0);
        let mut b = BaselineController::new(&model, PdGains::default(), 0.01).unwrap();
        assert_eq!(b.build_observation(&robot, 0.5).len(), BASELINE_OBS_DIM);
        let (t, fault) = b.apply(&[0.0; 8]);
        assert!(!fault);
        assert!((t[0] - 0.0).abs() < 1e-15);
        assert!((t[4] + 0.4).abs() < 1e-15);
        let (held, fault) = b.apply(&[f64::INFINITY; 8]);
        assert!(fault);
        assert_eq!(held, t);
    }
}
