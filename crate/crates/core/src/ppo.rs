//! Proximal policy optimization for the two-level controller.
//!
//! The low-level stream acts every tick; the high-level stream acts on
//! decision ticks and collects the summed low-level reward of its interval.
//! Both are trained from the same rollouts with separate actor and critic
//! networks.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{Curriculum, NUM_TERMS, TERM_NAMES};
use crate::cpg::GaitKind;
use crate::env::{EnvConfig, LocomotionEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::{
    gaussian_log_prob, Adam, ActionSample, GaussianPolicy, Mlp, ObsLayout, BASELINE_ACTION_DIM,
    HIGH_ACTION_DIM, HIGH_HIDDEN, LOW_ACTION_DIM, LOW_HIDDEN,
};

/// Which controller is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Hierarchical controller with one fixed gait.
    Single(GaitKind),
    /// Hierarchical controller with the velocity gait schedule.
    Multi,
    /// Direct joint-target policy.
    Baseline,
}

impl TrainMode {
    pub fn has_cpg(self) -> bool {
        !matches!(self, TrainMode::Baseline)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainMode::Single(g) => write!(f, "single:{g}"),
            TrainMode::Multi => f.write_str("multi"),
            TrainMode::Baseline => f.write_str("baseline"),
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(TrainMode::Multi),
            "baseline" => Ok(TrainMode::Baseline),
            _ => match s.strip_prefix("single:") {
                Some(g) => Ok(TrainMode::Single(g.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown mode '{s}' (expected single:<gait>, multi or baseline)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u32,
    pub steps_per_iteration: usize,
    pub num_envs: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    /// Linear decay of the learning rate to zero over `iterations`.
    pub lr_decay: bool,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    /// Multiplies rewards before advantage estimation.
    pub reward_scale: f64,
    pub initial_cost_scale: f64,
    pub curriculum_factor: f64,
    pub command_low: f64,
    pub command_high: f64,
    pub fixed_command: Option<f64>,
    pub min_log_std: f64,
    pub max_log_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 250,
            steps_per_iteration: 8192,
            num_envs: 16,
            minibatch_size: 512,
            epochs: 4,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 3e-4,
            lr_decay: true,
            max_grad_norm: 0.5,
            entropy_coef: 0.0,
            reward_scale: 0.005,
            initial_cost_scale: 0.3,
            curriculum_factor: 0.999,
            command_low: 0.1,
            command_high: 1.5,
            fixed_command: None,
            min_log_std: -3.0,
            max_log_std: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 || self.steps_per_iteration == 0 || self.num_envs == 0 {
            return bad("iterations, steps_per_iteration and num_envs must be positive");
        }
        if self.minibatch_size == 0 || self.epochs == 0 {
            return bad("minibatch_size and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.learning_rate > 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) {
            return bad("clip, learning_rate, max_grad_norm and reward_scale must be positive");
        }
        Curriculum::new(self.initial_cost_scale, self.curriculum_factor)?;
        if self.min_log_std >= self.max_log_std {
            return bad("min_log_std must be below max_log_std");
        }
        Ok(())
    }

    /// Ticks each environment runs per iteration, rounded up to whole
    /// high-level intervals.
    pub fn ticks_per_env(&self, ticks_per_decision: u64) -> usize {
        let per = self.steps_per_iteration.div_ceil(self.num_envs);
        let k = ticks_per_decision.max(1) as usize;
        per.div_ceil(k) * k
    }
}

/// Generalized advantage estimation over one trajectory segment.
///
/// `dones[t]` ends the episode after step `t`; any bootstrap for truncated
/// episodes must already be folded into `rewards[t]`. `last_value` is the
/// value of the state following the final step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::contract("rewards, values and dones must have equal length"));
    }
    let mut adv = vec![0.0; n];
    let mut next_value = last_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Transitions of one stream from one environment, in time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    /// Network inputs, already scaled.
    pub obs: Vec<Vec<f64>>,
    /// Pre-clamp raw actions.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Unscaled rewards.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the successor state for truncated steps, zero otherwise.
    pub bootstrap: Vec<f64>,
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn push(&mut self, obs: Vec<f64>, sample: &ActionSample, value: f64) {
        self.obs.push(obs);
        self.actions.push(sample.raw.clone());
        self.log_probs.push(sample.log_prob);
        self.values.push(value);
        self.rewards.push(0.0);
        self.dones.push(false);
        self.bootstrap.push(0.0);
    }

    /// Advantages and returns with rewards multiplied by `reward_scale`.
    pub fn advantages(&self, gamma: f64, lambda: f64, reward_scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let rewards: Vec<f64> = self
            .rewards
            .iter()
            .zip(&self.bootstrap)
            .map(|(r, b)| r * reward_scale + gamma * b)
            .collect();
        compute_gae(&rewards, &self.values, &self.dones, self.last_value, gamma, lambda)
    }
}

/// A flattened training batch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_buffers(buffers: &[RolloutBuffer], cfg: &TrainConfig) -> Result<Self> {
        let mut b = Batch::default();
        for buf in buffers {
            let (adv, ret) = buf.advantages(cfg.gamma, cfg.lambda, cfg.reward_scale)?;
            b.obs.extend(buf.obs.iter().cloned());
            b.actions.extend(buf.actions.iter().cloned());
            b.log_probs.extend(&buf.log_probs);
            b.advantages.extend(adv);
            b.returns.extend(ret);
        }
        normalize(&mut b.advantages);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// Shifts and scales to zero mean and unit variance in place.
pub fn normalize(x: &mut [f64]) {
    if x.len() < 2 {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for v in x {
        *v = (*v - mean) / std;
    }
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Actor and critic for one stream, with their optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub layout: ObsLayout,
    pub input_scale: Vec<f64>,
    policy_opt: Adam,
    log_std_opt: Adam,
    value_opt: Adam,
}

/// Diagnostics of one PPO update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(layout: ObsLayout, hidden: &[usize], action_dim: usize, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![layout.dim()];
        sizes.extend(hidden);
        sizes.push(action_dim);
        let policy = GaussianPolicy::new(&sizes, rng)?;
        *sizes.last_mut().expect("non-empty") = 1;
        let value = Mlp::new(&sizes, 1.0, rng)?;
        Ok(Self::from_networks(layout, policy, value))
    }

    pub fn from_networks(layout: ObsLayout, policy: GaussianPolicy, value: Mlp) -> Self {
        Self {
            policy_opt: Adam::new(policy.mean.params().len()),
            log_std_opt: Adam::new(policy.log_std.len()),
            value_opt: Adam::new(value.params().len()),
            input_scale: layout.input_scale(),
            layout,
            policy,
            value,
        }
    }

    pub fn scale(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().zip(&self.input_scale).map(|(o, s)| o * s).collect()
    }

    /// Samples an action and evaluates the critic on an already scaled input.
    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<(ActionSample, f64)> {
        let sample = self.policy.sample(input, rng)?;
        let value = self.value.forward(input)?[0];
        Ok((sample, value))
    }

    pub fn value_of(&self, input: &[f64]) -> Result<f64> {
        Ok(self.value.forward(input)?[0])
    }

    /// Clipped-surrogate update of actor and critic over `epochs` passes.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        cfg: &TrainConfig,
        lr: f64,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let n = batch.len();
        if n == 0 {
            return Ok(UpdateStats::default());
        }
        let dim = self.policy.action_dim();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mut count = 0usize;
        let mut g_pol = vec![0.0; self.policy.mean.params().len()];
        let mut g_std = vec![0.0; dim];
        let mut g_val = vec![0.0; self.value.params().len()];
        for _ in 0..cfg.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.minibatch_size) {
                let m = chunk.len() as f64;
                g_pol.fill(0.0);
                g_std.fill(0.0);
                g_val.fill(0.0);
                for &i in chunk {
                    let obs = &batch.obs[i];
                    let a = &batch.actions[i];
                    let adv = batch.advantages[i];

                    let cache = self.policy.mean.forward_cached(obs)?;
                    let mean = cache.output();
                    let logp = gaussian_log_prob(mean, &self.policy.log_std, a);
                    let log_ratio = logp - batch.log_probs[i];
                    let ratio = log_ratio.exp();
                    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                    let surr = (ratio * adv).min(clipped * adv);
                    stats.policy_loss -= surr;
                    stats.approx_kl += (ratio - 1.0) - log_ratio;
                    if (ratio - clipped).abs() > 0.0 {
                        stats.clip_fraction += 1.0;
                    }
                    // d(-surr)/d logp, zero where the clipped branch is active
                    let active = ratio * adv <= clipped * adv;
                    let coef = if active { -adv * ratio / m } else { 0.0 };
                    if coef != 0.0 {
                        let mut upstream = vec![0.0; dim];
                        for k in 0..dim {
                            let inv_var = (-2.0 * self.policy.log_std[k]).exp();
                            let diff = a[k] - mean[k];
                            upstream[k] = coef * diff * inv_var;
                            g_std[k] += coef * (diff * diff * inv_var - 1.0);
                        }
                        self.policy.mean.accumulate_backward(&cache, &upstream, &mut g_pol)?;
                    }
                    for g in g_std.iter_mut() {
                        *g -= cfg.entropy_coef / m;
                    }

                    let vcache = self.value.forward_cached(obs)?;
                    let v = vcache.output()[0];
                    let err = v - batch.returns[i];
                    stats.value_loss += 0.5 * err * err;
                    self.value.accumulate_backward(&vcache, &[err / m], &mut g_val)?;
                    count += 1;
                }
                clip_grad_norm(&mut g_pol, cfg.max_grad_norm);
                clip_grad_norm(&mut g_val, cfg.max_grad_norm);
                self.policy_opt.step(self.policy.mean.params_mut(), &g_pol, lr);
                self.log_std_opt.step(&mut self.policy.log_std, &g_std, lr);
                for l in &mut self.policy.log_std {
                    *l = l.clamp(cfg.min_log_std, cfg.max_log_std);
                }
                self.value_opt.step(self.value.params_mut(), &g_val, lr);
            }
        }
        if !(self.policy.is_finite() && self.value.is_finite()) {
            return Err(Error::Training("network parameters became non-finite".into()));
        }
        let c = count.max(1) as f64;
        stats.policy_loss /= c;
        stats.value_loss /= c;
        stats.approx_kl /= c;
        stats.clip_fraction /= c;
        Ok(stats)
    }
}

/// Per-iteration training log entry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub total_steps: u64,
    pub cost_scale: f64,
    pub learning_rate: f64,
    /// Mean unscaled per-tick reward.
    pub mean_reward: f64,
    pub episodes: usize,
    pub mean_episode_length: f64,
    pub falls: usize,
    pub faults: usize,
    pub mean_forward_velocity: f64,
    pub mean_abs_velocity_error: f64,
    pub mean_period: f64,
    pub mean_amplitude: f64,
    pub low: UpdateStats,
    pub high: UpdateStats,
    pub low_std: f64,
    /// Mean unweighted value of each cost term.
    pub mean_costs: [f64; NUM_TERMS],
}

impl IterationMetrics {
    /// Fixed columns; the per-term costs follow as `cost_<term>`.
    pub const CSV_HEADER: [&'static str; 21] = [
        "iteration",
        "total_steps",
        "cost_scale",
        "learning_rate",
        "mean_reward",
        "episodes",
        "mean_episode_length",
        "falls",
        "faults",
        "mean_forward_velocity",
        "mean_abs_velocity_error",
        "mean_period",
        "mean_amplitude",
        "low_policy_loss",
        "low_value_loss",
        "low_approx_kl",
        "low_clip_fraction",
        "high_policy_loss",
        "high_value_loss",
        "high_approx_kl",
        "low_std",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            self.total_steps.to_string(),
            self.cost_scale.to_string(),
            self.learning_rate.to_string(),
            self.mean_reward.to_string(),
            self.episodes.to_string(),
            self.mean_episode_length.to_string(),
            self.falls.to_string(),
            self.faults.to_string(),
            self.mean_forward_velocity.to_string(),
            self.mean_abs_velocity_error.to_string(),
            self.mean_period.to_string(),
            self.mean_amplitude.to_string(),
            self.low.policy_loss.to_string(),
            self.low.value_loss.to_string(),
            self.low.approx_kl.to_string(),
            self.low.clip_fraction.to_string(),
            self.high.policy_loss.to_string(),
            self.high.value_loss.to_string(),
            self.high.approx_kl.to_string(),
            self.low_std.to_string(),
        ]
        .into_iter()
        .chain(self.mean_costs.iter().map(f64::to_string))
        .collect()
    }

    pub fn csv_header() -> Vec<String> {
        Self::CSV_HEADER
            .iter()
            .map(|h| h.to_string())
            .chain(TERM_NAMES.iter().map(|t| format!("cost_{t}")))
            .collect()
    }
}

/// Open high-level transition awaiting the rewards of its interval.
#[derive(Debug, Clone, Copy, Default)]
struct OpenDecision {
    index: usize,
}

/// Data gathered in one iteration.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub low: Vec<RolloutBuffer>,
    pub high: Vec<RolloutBuffer>,
    /// Every step outcome, when recording was requested.
    pub steps: Vec<StepOutcome>,
}

#[derive(Debug, Clone, Copy, Default)]
struct RolloutTally {
    steps: usize,
    reward: f64,
    episodes: usize,
    episode_len_sum: u64,
    falls: usize,
    faults: usize,
    velocity: f64,
    velocity_error: f64,
    period: f64,
    periods: usize,
    costs: [f64; NUM_TERMS],
    amplitude: f64,
}

/// Drives environment collection and PPO updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    mode: TrainMode,
    envs: Vec<LocomotionEnv>,
    low: Agent,
    high: Option<Agent>,
    curriculum: Curriculum,
    rng: ChaCha8Rng,
    iteration: u32,
    total_steps: u64,
    record_steps: bool,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mode: TrainMode, env_cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (low, high) = match mode {
            TrainMode::Baseline => (
                Agent::new(ObsLayout::Baseline, &LOW_HIDDEN, BASELINE_ACTION_DIM, &mut rng)?,
                None,
            ),
            _ => {
                let low = Agent::new(ObsLayout::Low, &LOW_HIDDEN, LOW_ACTION_DIM, &mut rng)?;
                let high = match env_cfg.controller.period_source {
                    crate::controller::PeriodSource::Policy => {
                        Some(Agent::new(ObsLayout::High, &HIGH_HIDDEN, HIGH_ACTION_DIM, &mut rng)?)
                    }
                    crate::controller::PeriodSource::Fixed(_) => None,
                };
                (low, high)
            }
        };
        let envs = (0..cfg.num_envs)
            .map(|_| LocomotionEnv::new(env_cfg.clone(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let curriculum = Curriculum::new(cfg.initial_cost_scale, cfg.curriculum_factor)?;
        Ok(Self {
            cfg,
            mode,
            envs,
            low,
            high,
            curriculum,
            rng,
            iteration: 0,
            total_steps: 0,
            record_steps: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn env_config(&self) -> &EnvConfig {
        self.envs[0].config()
    }

    pub fn low(&self) -> &Agent {
        &self.low
    }

    pub fn high(&self) -> Option<&Agent> {
        self.high.as_ref()
    }

    pub fn curriculum(&self) -> Curriculum {
        self.curriculum
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    /// Keeps every step outcome of the next rollouts (for inspection).
    pub fn set_record_steps(&mut self, on: bool) {
        self.record_steps = on;
    }

    fn learning_rate(&self) -> f64 {
        if self.cfg.lr_decay {
            let frac = 1.0 - self.iteration as f64 / self.cfg.iterations as f64;
            self.cfg.learning_rate * frac.max(0.05)
        } else {
            self.cfg.learning_rate
        }
    }

    /// Runs every environment for one iteration's share of ticks.
    pub fn collect(&mut self) -> Result<Rollout> {
        let (rollout, _) = self.collect_tallied()?;
        Ok(rollout)
    }

    fn collect_tallied(&mut self) -> Result<(Rollout, RolloutTally)> {
        let k_c = self.curriculum.k_c;
        let ticks = self.cfg.ticks_per_env(self.envs[0].config().controller.ticks_per_decision());
        let mut rollout = Rollout::default();
        let mut tally = RolloutTally::default();
        let record = self.record_steps;
        for env in &mut self.envs {
            env.set_cost_scale(k_c);
            let mut low_buf = RolloutBuffer::default();
            let mut high_buf = RolloutBuffer::default();
            let mut open: Option<OpenDecision> = None;
            for _ in 0..ticks {
                if env.needs_high_action() {
                    let high = self.high.as_ref().ok_or_else(|| Error::contract("missing high-level agent"))?;
                    let input = high.scale(&env.high_observation());
                    let (sample, value) = high.act(&input, &mut self.rng)?;
                    let out = env.apply_high(sample.action[0])?;
                    tally.period += out.params.period();
                    tally.periods += 1;
                    high_buf.push(input, &sample, value);
                    open = Some(OpenDecision { index: high_buf.len() - 1 });
                }
                let input = self.low.scale(env.observation().as_slice());
                let (sample, value) = self.low.act(&input, &mut self.rng)?;
                let out = env.step(&sample.action)?;
                low_buf.push(input, &sample, value);
                let t = low_buf.len() - 1;
                low_buf.rewards[t] = out.reward;
                if let Some(d) = open {
                    high_buf.rewards[d.index] += out.reward;
                }

                tally.steps += 1;
                tally.reward += out.reward;
                for (acc, c) in tally.costs.iter_mut().zip(out.costs.terms) {
                    *acc += c;
                }
                tally.velocity += env.state().forward_velocity();
                tally.velocity_error += (out.command - env.state().forward_velocity()).abs();
                if self.mode.has_cpg() {
                    tally.amplitude += out.action[0];
                }
                if out.done() {
                    low_buf.dones[t] = true;
                    if out.truncated {
                        let next = self.low.scale(env.observation().as_slice());
                        low_buf.bootstrap[t] = self.low.value_of(&next)?;
                    }
                    if let Some(d) = open.take() {
                        high_buf.dones[d.index] = true;
                        if out.truncated {
                            let high = self.high.as_ref().expect("open decision implies agent");
                            high_buf.bootstrap[d.index] = high.value_of(&high.scale(&env.high_observation()))?;
                        }
                    }
                    tally.episodes += 1;
                    tally.episode_len_sum += env.tick();
                    if out.terminated.is_some() {
                        tally.falls += 1;
                    }
                    if out.fault {
                        tally.faults += 1;
                    }
                    env.reset(&mut self.rng)?;
                }
                if record {
                    rollout.steps.push(out);
                }
            }
            low_buf.last_value = self.low.value_of(&self.low.scale(env.observation().as_slice()))?;
            if let Some(high) = &self.high {
                high_buf.last_value = high.value_of(&high.scale(&env.high_observation()))?;
            }
            rollout.low.push(low_buf);
            if self.high.is_some() {
                rollout.high.push(high_buf);
            }
        }
        self.total_steps += tally.steps as u64;
        Ok((rollout, tally))
    }

    /// One collection and update cycle.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let lr = self.learning_rate();
        let k_c = self.curriculum.k_c;
        let (rollout, tally) = self.collect_tallied()?;
        let low_batch = Batch::from_buffers(&rollout.low, &self.cfg)?;
        let low_stats = self.low.update(&low_batch, &self.cfg, lr, &mut self.rng)?;
        let mut high_stats = UpdateStats::default();
        if let Some(high) = &mut self.high {
            let mut hcfg = self.cfg.clone();
            hcfg.minibatch_size = hcfg.minibatch_size.div_ceil(5);
            let batch = Batch::from_buffers(&rollout.high, &hcfg)?;
            high_stats = high.update(&batch, &hcfg, lr, &mut self.rng)?;
        }
        self.curriculum = self.curriculum.update();
        self.iteration += 1;
        let n = tally.steps.max(1) as f64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            total_steps: self.total_steps,
            cost_scale: k_c,
            learning_rate: lr,
            mean_reward: tally.reward / n,
            episodes: tally.episodes,
            mean_episode_length: if tally.episodes > 0 {
                tally.episode_len_sum as f64 / tally.episodes as f64
            } else {
                0.0
            },
            falls: tally.falls,
            faults: tally.faults,
            mean_forward_velocity: tally.velocity / n,
            mean_abs_velocity_error: tally.velocity_error / n,
            mean_period: if tally.periods > 0 {
                tally.period / tally.periods as f64
            } else {
                0.0
            },
            mean_amplitude: tally.amplitude / n,
            low: low_stats,
            high: high_stats,
            low_std: self.low.policy.std().iter().sum::<f64>() / self.low.policy.action_dim() as f64,
            mean_costs: tally.costs.map(|c| c / n),
        })
    }

    /// Runs all configured iterations, reporting each to `on_iteration`.
    pub fn train(&mut self, mut on_iteration: impl FnMut(&IterationMetrics)) -> Result<Vec<IterationMetrics>> {
        let mut log = Vec::with_capacity(self.cfg.iterations as usize);
        while self.iteration < self.cfg.iterations {
            let m = self.train_iteration()?;
            on_iteration(&m);
            log.push(m);
        }
        Ok(log)
    }

    /// The trained networks.
    pub fn into_agents(self) -> (Agent, Option<Agent>) {
        (self.low, self.high)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CommandSpec;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn mode_strings_round_trip() {
        for s in ["single:trot", "single:pace", "single:bound", "multi", "baseline"] {
            assert_eq!(s.parse::<TrainMode>().unwrap().to_string(), s);
        }
        assert!("single:gallop".parse::<TrainMode>().is_err());
        assert!("dual".parse::<TrainMode>().is_err());
    }

    #[test]
    fn gae_unit_rewards() {
        let (adv, ret) = compute_gae(&[1.0; 3], &[0.0; 3], &[false, false, true], 0.0, 0.5, 1.0).unwrap();
        assert_eq!(adv, vec![1.75, 1.5, 1.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn gae_lambda_zero_is_td() {
        let r = [0.3, -1.0, 2.0];
        let v = [0.5, 0.1, -0.4];
        let (adv, _) = compute_gae(&r, &v, &[false; 3], 0.7, 0.9, 0.0).unwrap();
        let next = [0.1, -0.4, 0.7];
        for t in 0..3 {
            assert!((adv[t] - (r[t] + 0.9 * next[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_lambda_one_is_monte_carlo() {
        let r = [0.3, -1.0, 2.0, 0.5];
        let v = [0.5, 0.1, -0.4, 0.2];
        let dones = [false, true, false, false];
        let (_, ret) = compute_gae(&r, &v, &dones, 1.5, 0.9, 1.0).unwrap();
        let expect = [0.3 + 0.9 * -1.0, -1.0, 2.0 + 0.9 * (0.5 + 0.9 * 1.5), 0.5 + 0.9 * 1.5];
        for t in 0..4 {
            assert!((ret[t] - expect[t]).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn gae_length_mismatch_is_rejected() {
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[false], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn normalize_gives_unit_moments() {
        let mut x = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut x);
        let mean: f64 = x.iter().sum::<f64>() / 4.0;
        let var: f64 = x.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    /// One-dimensional bandit: reward 1 for a positive action.
    #[test]
    fn bandit_success_probability_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = Agent::new(ObsLayout::High, &[8], 1, &mut rng).unwrap();
        let cfg = TrainConfig {
            minibatch_size: 64,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let success = |a: &Agent| {
            let mean = a.policy.mean.forward(&[1.0]).unwrap()[0];
            let sd = a.policy.std()[0];
            let z = mean / sd;
            // probability of a positive draw via the normal CDF
            let n = Normal::new(0.0, 1.0).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            (0..20_000).filter(|_| n.sample(&mut r) < z).count() as f64 / 20_000.0
        };
        let before = success(&agent);
        for _ in 0..100 {
            let mut buf = RolloutBuffer::default();
            for _ in 0..64 {
                let (s, v) = agent.act(&[1.0], &mut rng).unwrap();
                buf.push(vec![1.0], &s, v);
                let t = buf.len() - 1;
                buf.rewards[t] = f64::from(u8::from(s.raw[0] > 0.0));
                buf.dones[t] = true;
            }
            let mut c = cfg.clone();
            c.reward_scale = 1.0;
            let batch = Batch::from_buffers(&[buf], &c).unwrap();
            agent.update(&batch, &c, c.learning_rate, &mut rng).unwrap();
        }
        let after = success(&agent);
        assert!(after > before + 0.2, "before {before}, after {after}");
    }

    fn small_trainer(seed: u64) -> Trainer {
        let cfg = TrainConfig {
            seed,
            iterations: 2,
            steps_per_iteration: 200,
            num_envs: 2,
            minibatch_size: 50,
            epochs: 1,
            ..TrainConfig::default()
        };
        let env = EnvConfig {
            command: CommandSpec::Fixed(0.6),
            episode_ticks: 60,
            ..EnvConfig::default()
        };
        Trainer::new(cfg, TrainMode::Single(GaitKind::Trot), env).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let a = small_trainer(11).train(|_| {}).unwrap();
        let b = small_trainer(11).train(|_| {}).unwrap();
        assert_eq!(a, b);
        let c = small_trainer(12).train(|_| {}).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rollout_layout() {
        let mut t = small_trainer(1);
        t.set_record_steps(true);
        let r = t.collect().unwrap();
        assert_eq!(r.low.len(), 2);
        assert_eq!(r.low[0].len(), 100);
        // one decision every five ticks, plus one after each mid-window reset
        let resets = r.low[0].dones.iter().filter(|d| **d).count();
        assert!(r.high[0].len() >= 20 && r.high[0].len() <= 20 + resets);
        // every low-level reward is credited to exactly one decision
        let low: f64 = r.low[0].rewards.iter().sum();
        let high: f64 = r.high[0].rewards.iter().sum();
        assert!((low - high).abs() < 1e-9 * low.abs().max(1.0));
        assert_eq!(r.high[0].dones.iter().filter(|d| **d).count(), resets);
        assert!(r.low[0].dones.iter().filter(|d| **d).count() >= 1);
        assert_eq!(r.steps.len(), 200);
    }
}
