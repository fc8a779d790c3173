//! Episodic locomotion environment wrapping the simulator, the controller
//! and the cost function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{BaselineController, ControllerConfig, HierarchicalController, HighLevelOutcome};
use crate::costs::{compute_costs, CostBreakdown, CostInputs, CostOptions, CostWeights};
use crate::cpg::NUM_LEGS;
use crate::dynamics::{
    check_termination, mechanical_energy_rate, pd_torque, reset, step_dynamics, EnergyMode, RobotModel,
    RobotState, Termination, NUM_JOINTS,
};
use crate::error::{Error, Result};
use crate::policy::{Observation, HIGH_OBS_DIM};

/// How the forward command is chosen at every reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSpec {
    Fixed(f64),
    Uniform { low: f64, high: f64 },
}

impl CommandSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CommandSpec::Fixed(v) => v > 0.0 && v <= 1.5,
            CommandSpec::Uniform { low, high } => low > 0.0 && low <= high && high <= 1.5,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("command range {self:?} must lie in (0, 1.5]")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CommandSpec::Fixed(v) => v,
            CommandSpec::Uniform { low, high } if high > low => rng.random_range(low..=high),
            CommandSpec::Uniform { low, .. } => low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Hierarchical,
    /// Direct joint-target policy without an oscillator.
    Baseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub model: RobotModel,
    pub controller: ControllerConfig,
    pub mode: ControlMode,
    pub weights: CostWeights,
    pub cost_options: CostOptions,
    /// Physics steps per control tick; PD torques are recomputed each one.
    pub physics_substeps: usize,
    pub episode_ticks: u64,
    pub reset_perturbation: f64,
    pub command: CommandSpec,
    pub initial_period: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            controller: ControllerConfig::default(),
            mode: ControlMode::Hierarchical,
            weights: CostWeights::default(),
            cost_options: CostOptions::default(),
            physics_substeps: 4,
            episode_ticks: 400,
            reset_perturbation: 0.02,
            command: CommandSpec::Uniform { low: 0.1, high: 1.5 },
            initial_period: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.controller.validate()?;
        self.weights.validate()?;
        self.command.validate()?;
        if self.physics_substeps == 0 || self.controller.control_dt / self.physics_substeps as f64 > 0.01 {
            return Err(Error::Config("physics step must not exceed 0.01 s".into()));
        }
        if self.episode_ticks == 0 {
            return Err(Error::Config("episodes need at least one tick".into()));
        }
        let [lo, hi] = self.controller.low_space.calf_limits;
        let [mlo, mhi] = self.model.calf_limits;
        if !(lo < hi) || lo < mlo || hi > mhi {
            return Err(Error::Config("calf action range exceeds the calf joint limits".into()));
        }
        Ok(())
    }

    pub fn physics_dt(&self) -> f64 {
        self.controller.control_dt / self.physics_substeps as f64
    }
}

/// Everything one control tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub costs: CostBreakdown,
    pub terminated: Option<Termination>,
    pub truncated: bool,
    /// Simulation or policy fault; the episode ends.
    pub fault: bool,
    pub targets: [f64; NUM_JOINTS],
    /// Torque averaged over the physics substeps.
    pub torques: [f64; NUM_JOINTS],
    pub action: Vec<f64>,
    pub previous_action: Vec<f64>,
    pub leg_phase: [u8; NUM_LEGS],
    /// Motor work during the tick, J.
    pub energy_positive: f64,
    pub energy_absolute: f64,
    pub command: f64,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated.is_some() || self.truncated || self.fault
    }
}

#[derive(Debug, Clone)]
enum Ctrl {
    Hier(HierarchicalController),
    Base(BaselineController),
}

#[derive(Debug, Clone)]
pub struct LocomotionEnv {
    config: EnvConfig,
    state: RobotState,
    ctrl: Ctrl,
    command: f64,
    tick: u64,
    cost_scale: f64,
    pending_high: bool,
    last_high: Option<HighLevelOutcome>,
}

impl LocomotionEnv {
    pub fn new<R: Rng + ?Sized>(config: EnvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let command = config.command.sample(rng);
        let state = reset(&config.model, rng.random(), config.reset_perturbation);
        let ctrl = Self::make_ctrl(&config, command)?;
        let mut env = Self {
            config,
            state,
            ctrl,
            command,
            tick: 0,
            cost_scale: 1.0,
            pending_high: false,
            last_high: None,
        };
        env.prepare_tick()?;
        Ok(env)
    }

    fn make_ctrl(config: &EnvConfig, command: f64) -> Result<Ctrl> {
        Ok(match config.mode {
            ControlMode::Hierarchical => Ctrl::Hier(HierarchicalController::new(
                config.controller.clone(),
                config.initial_period,
                command,
            )?),
            ControlMode::Baseline => Ctrl::Base(BaselineController::new(
                &config.model,
                config.controller.gains,
                config.controller.control_dt,
            )?),
        })
    }

    /// Starts a new episode with a fresh command and initial state.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.command = self.config.command.sample(rng);
        self.reset_with(rng.random(), self.command)
    }

    /// Starts a new episode from a seed and an explicit command.
    pub fn reset_with(&mut self, seed: u64, command: f64) -> Result<()> {
        self.command = command;
        self.state = reset(&self.config.model, seed, self.config.reset_perturbation);
        self.ctrl = Self::make_ctrl(&self.config, command)?;
        self.tick = 0;
        self.last_high = None;
        self.prepare_tick()
    }

    /// Applies fixed-period decisions and flags pending policy decisions.
    fn prepare_tick(&mut self) -> Result<()> {
        self.pending_high = false;
        if let Ctrl::Hier(c) = &mut self.ctrl {
            if c.is_decision_tick() {
                match c.fixed_period() {
                    Some(p) => self.last_high = Some(c.high_level_step(self.command, p)?),
                    None => self.pending_high = true,
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn command(&self) -> f64 {
        self.command
    }

    /// Changes the command mid-episode; takes effect at the next decision.
    pub fn set_command(&mut self, v: f64) -> Result<()> {
        CommandSpec::Fixed(v).validate()?;
        self.command = v;
        Ok(())
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.controller.control_dt
    }

    pub fn set_cost_scale(&mut self, k_c: f64) {
        self.cost_scale = k_c;
    }

    pub fn controller(&self) -> Option<&HierarchicalController> {
        match &self.ctrl {
            Ctrl::Hier(c) => Some(c),
            Ctrl::Base(_) => None,
        }
    }

    /// The most recent high-level decision.
    pub fn last_high(&self) -> Option<&HighLevelOutcome> {
        self.last_high.as_ref()
    }

    /// True when a high-level period must be supplied before [`Self::step`].
    pub fn needs_high_action(&self) -> bool {
        self.pending_high
    }

    pub fn high_observation(&self) -> [f64; HIGH_OBS_DIM] {
        [self.command]
    }

    pub fn apply_high(&mut self, raw: f64) -> Result<HighLevelOutcome> {
        let Ctrl::Hier(c) = &mut self.ctrl else {
            return Err(Error::contract("baseline environment has no high level"));
        };
        if !self.pending_high {
            return Err(Error::contract(format!("no high-level decision due at tick {}", self.tick)));
        }
        let period = c.config().high_space.period(raw);
        let out = c.high_level_step(self.command, period)?;
        self.pending_high = false;
        self.last_high = Some(out);
        Ok(out)
    }

    pub fn observation(&self) -> Observation {
        match &self.ctrl {
            Ctrl::Hier(c) => c.build_observation(&self.state, self.command),
            Ctrl::Base(b) => b.build_observation(&self.state, self.command),
        }
    }

    /// Advances one control tick with the raw low-level action.
    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome> {
        if self.pending_high {
            return Err(Error::contract("high-level action required before this tick"));
        }
        let (targets, fault, action, previous_action, leg_phase) = match &mut self.ctrl {
            Ctrl::Hier(c) => {
                let prev = c.state().previous_action.to_vec();
                let out = c.low_level_step(raw);
                let phase = c.leg_phase();
                (out.targets, out.fault, out.action.to_vec(), prev, phase)
            }
            Ctrl::Base(b) => {
                let prev = b.previous_action().to_vec();
                let (t, fault) = b.apply(raw);
                (t, fault, t.to_vec(), prev, [0; NUM_LEGS])
            }
        };

        let model = &self.config.model;
        let gains = &self.config.controller.gains;
        let dt = self.config.physics_dt();
        let n = self.config.physics_substeps;
        let mut torque_sum = [0.0; NUM_JOINTS];
        let (mut e_pos, mut e_abs) = (0.0, 0.0);
        let mut sim_fault = false;
        for _ in 0..n {
            let tau = pd_torque(&targets, &self.state, gains, model.torque_limit);
            e_pos += mechanical_energy_rate(&self.state, &tau, EnergyMode::PositiveWork) * dt;
            e_abs += mechanical_energy_rate(&self.state, &tau, EnergyMode::AbsoluteWork) * dt;
            for (s, t) in torque_sum.iter_mut().zip(&tau) {
                *s += t;
            }
            match step_dynamics(model, &self.state, &tau, dt) {
                Ok(next) => self.state = next,
                Err(Error::Simulation(_)) => {
                    sim_fault = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let torques = torque_sum.map(|s| s / n as f64);

        match &mut self.ctrl {
            Ctrl::Hier(c) => c.advance(),
            Ctrl::Base(b) => b.advance(),
        }
        self.tick += 1;

        let mut terminated = check_termination(&self.state);
        let costs = if sim_fault {
            terminated = Some(Termination::NonFinite);
            CostBreakdown::from_terms([0.0; crate::costs::NUM_TERMS], &self.config.weights)
        } else {
            let inputs = CostInputs::new(&self.state, self.command, &torques, &action, &previous_action, leg_phase);
            compute_costs(&inputs, self.cost_scale, &self.config.weights, &self.config.cost_options)?
        };
        let truncated = terminated.is_none() && self.tick >= self.config.episode_ticks;
        let reward = if sim_fault { 0.0 } else { costs.reward };
        let outcome = StepOutcome {
            reward,
            costs,
            terminated,
            truncated,
            fault: fault || sim_fault,
            targets,
            torques,
            action,
            previous_action,
            leg_phase,
            energy_positive: e_pos,
            energy_absolute: e_abs,
            command: self.command,
        };
        if !outcome.done() {
            self.prepare_tick()?;
        }
        Ok(outcome)
    }
}
