//! Evaluation harness: velocity tracking, energy, contact patterns and gait
//! switching of trained controllers, plus the CSV/TOML writers for results.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::cpg::{GaitKind, LEG_NAMES, NUM_LEGS};
use crate::dynamics::{RobotState, Termination};
use crate::env::{CommandSpec, LocomotionEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, ObsLayout};
use crate::ppo::{IterationMetrics, TrainMode};

pub const DEFAULT_VELOCITIES: [f64; 5] = [0.3, 0.6, 0.9, 1.2, 1.5];
pub const DEFAULT_WARMUP: f64 = 1.0;
pub const ENERGY_BIN_WIDTH: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub velocities: Vec<f64>,
    /// Seconds per velocity, including the warm-up.
    pub duration: f64,
    pub warmup: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            velocities: DEFAULT_VELOCITIES.to_vec(),
            duration: 10.0,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.velocities.is_empty() {
            return Err(Error::Config("no evaluation velocities".into()));
        }
        for &v in &self.velocities {
            CommandSpec::Fixed(v).validate()?;
        }
        if !(self.duration > self.warmup && self.warmup >= 0.0) {
            return Err(Error::Config("duration must exceed the warm-up".into()));
        }
        Ok(())
    }
}

/// Runs a checkpoint's policies deterministically in a fresh environment.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    env: LocomotionEnv,
    low: GaussianPolicy,
    high: Option<GaussianPolicy>,
    low_scale: Vec<f64>,
}

impl PolicyRunner {
    pub fn new(ck: &Checkpoint, command: f64, duration: f64, seed: u64) -> Result<Self> {
        let mut cfg = ck.config.env_config(ck.mode)?;
        cfg.command = CommandSpec::Fixed(command);
        cfg.episode_ticks = (duration / cfg.controller.control_dt).round().max(1.0) as u64 + 1;
        let (low, high) = ck.policies()?;
        let layout = match ck.mode {
            TrainMode::Baseline => ObsLayout::Baseline,
            _ => ObsLayout::Low,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut env = LocomotionEnv::new(cfg, &mut rng)?;
        env.set_cost_scale(1.0);
        Ok(Self {
            env,
            low,
            high,
            low_scale: layout.input_scale(),
        })
    }

    pub fn env(&self) -> &LocomotionEnv {
        &self.env
    }

    pub fn set_command(&mut self, v: f64) -> Result<()> {
        self.env.set_command(v)
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.env.needs_high_action() {
            let high = self
                .high
                .as_ref()
                .ok_or_else(|| Error::contract("checkpoint lacks a high-level policy"))?;
            let raw = high.mode(&self.env.high_observation())?[0];
            self.env.apply_high(raw)?;
        }
        let obs = self.env.observation();
        let input: Vec<f64> = obs.as_slice().iter().zip(&self.low_scale).map(|(o, s)| o * s).collect();
        let raw = self.low.mode(&input)?;
        self.env.step(&raw)
    }
}

/// One control tick of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub command: f64,
    pub state: RobotState,
    pub targets: [f64; 8],
    pub torques: [f64; 8],
    pub leg_phase: [u8; NUM_LEGS],
    pub period: f64,
    pub gait: Option<GaitKind>,
    pub amplitude: f64,
    pub reward: f64,
    pub energy_positive: f64,
    pub energy_absolute: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: GaitKind,
    pub to: GaitKind,
    pub discontinuity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    pub switches: Vec<SwitchEvent>,
    pub termination: Option<(f64, Termination)>,
    pub faults: usize,
}

/// Runs `duration` seconds with the command given by `profile(t)`.
pub fn run_trace(ck: &Checkpoint, profile: impl Fn(f64) -> f64, duration: f64, seed: u64) -> Result<Trace> {
    let mut runner = PolicyRunner::new(ck, profile(0.0), duration, seed)?;
    let dt = runner.env.config().controller.control_dt;
    let ticks = (duration / dt).round() as u64;
    let mut trace = Trace {
        dt,
        rows: Vec::with_capacity(ticks as usize),
        switches: Vec::new(),
        termination: None,
        faults: 0,
    };
    let mut last_decision = None;
    for tick in 0..ticks {
        let t = tick as f64 * dt;
        runner.set_command(profile(t))?;
        let out = runner.step()?;
        let env = runner.env();
        if let Some(h) = env.last_high() {
            if last_decision != Some(h.tick) {
                last_decision = Some(h.tick);
                if h.gait != h.previous_gait {
                    trace.switches.push(SwitchEvent {
                        time: h.tick as f64 * dt,
                        from: h.previous_gait,
                        to: h.gait,
                        discontinuity: h.discontinuity,
                    });
                }
            }
        }
        let ctrl = env.controller();
        trace.rows.push(TraceRow {
            time: t + dt,
            command: out.command,
            state: env.state().clone(),
            targets: out.targets,
            torques: out.torques,
            leg_phase: out.leg_phase,
            period: ctrl.map_or(0.0, |c| c.cpg().period()),
            gait: ctrl.map(|c| c.state().gait),
            amplitude: if ck.mode.has_cpg() { out.action[0] } else { 0.0 },
            reward: out.reward,
            energy_positive: out.energy_positive,
            energy_absolute: out.energy_absolute,
        });
        if out.fault {
            trace.faults += 1;
        }
        if let Some(term) = out.terminated {
            trace.termination = Some((t + dt, term));
            break;
        }
    }
    Ok(trace)
}

/// Share of contact time in which both feet of a pair touch the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOverlap {
    /// Sum over the gait's leg pairs of ticks with both feet down, divided by
    /// ticks with at least one of them down.
    pub ratio: f64,
    /// Fraction of ticks with all four feet down.
    pub all_down_fraction: f64,
    /// True when all feet are down most of the time, which makes the ratio
    /// uninformative.
    pub degenerate: bool,
}

pub fn pair_overlap(contacts: &[[bool; NUM_LEGS]], gait: GaitKind) -> PairOverlap {
    let (mut both, mut either, mut all) = (0usize, 0usize, 0usize);
    for c in contacts {
        for (a, b) in gait.leg_pairs() {
            both += usize::from(c[a] && c[b]);
            either += usize::from(c[a] || c[b]);
        }
        all += usize::from(c.iter().all(|x| *x));
    }
    let all_down_fraction = if contacts.is_empty() { 0.0 } else { all as f64 / contacts.len() as f64 };
    PairOverlap {
        ratio: if either == 0 { 0.0 } else { both as f64 / either as f64 },
        all_down_fraction,
        degenerate: all_down_fraction > 0.5,
    }
}

/// Contact interval of one leg, `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactRun {
    pub leg: usize,
    pub start: f64,
    pub end: f64,
}

/// Run-length encodes each leg's contact flags.
pub fn contact_runs(times: &[f64], contacts: &[[bool; NUM_LEGS]], dt: f64) -> Vec<ContactRun> {
    let mut runs = Vec::new();
    for leg in 0..NUM_LEGS {
        let mut start = None;
        for (t, c) in times.iter().zip(contacts) {
            match (c[leg], start) {
                (true, None) => start = Some(*t),
                (false, Some(s)) => {
                    runs.push(ContactRun { leg, start: s, end: *t });
                    start = None;
                }
                _ => {}
            }
        }
        if let (Some(s), Some(t)) = (start, times.last()) {
            runs.push(ContactRun { leg, start: s, end: t + dt });
        }
    }
    runs
}

/// Velocity-tracking and efficiency summary at one command.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub command: f64,
    pub mean_forward_velocity: f64,
    pub tracking_error: f64,
    pub fell: bool,
    pub survived: f64,
    /// Mean motor power, W.
    pub power_positive: f64,
    pub power_absolute: f64,
    /// Positive work per meter travelled, J/m.
    pub energy_per_meter: f64,
    pub mean_period: f64,
    pub overlap: Option<PairOverlap>,
    pub gait: Option<GaitKind>,
    pub windows: Vec<EnergyWindow>,
}

impl TrackingResult {
    /// The robot did not fall and moved at under a quarter of the command.
    pub fn stopped(&self) -> bool {
        !self.fell && self.mean_forward_velocity < 0.25 * self.command
    }
}

/// Averages over one second of steady walking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWindow {
    pub velocity: f64,
    pub power_positive: f64,
    pub power_absolute: f64,
}

pub fn summarize(trace: &Trace, command: f64, warmup: f64) -> TrackingResult {
    let rows: Vec<&TraceRow> = trace.rows.iter().filter(|r| r.time > warmup + 1e-9).collect();
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TraceRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let v = mean(&|r| r.state.forward_velocity());
    let err = mean(&|r| (r.command - r.state.forward_velocity()).abs());
    let duration = n * trace.dt;
    let e_pos: f64 = rows.iter().map(|r| r.energy_positive).sum();
    let e_abs: f64 = rows.iter().map(|r| r.energy_absolute).sum();
    let distance = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => {
            let d = b.state.base_position - a.state.base_position;
            d.x.hypot(d.y)
        }
        _ => 0.0,
    };
    let gait = rows.last().and_then(|r| r.gait);
    let contacts: Vec<[bool; NUM_LEGS]> = rows.iter().map(|r| r.state.contacts).collect();
    let per_window = (1.0 / trace.dt).round() as usize;
    let windows = rows
        .chunks_exact(per_window.max(1))
        .map(|w| {
            let k = w.len() as f64;
            EnergyWindow {
                velocity: w.iter().map(|r| r.state.forward_velocity()).sum::<f64>() / k,
                power_positive: w.iter().map(|r| r.energy_positive).sum::<f64>() / (k * trace.dt),
                power_absolute: w.iter().map(|r| r.energy_absolute).sum::<f64>() / (k * trace.dt),
            }
        })
        .collect();
    TrackingResult {
        command,
        mean_forward_velocity: v,
        tracking_error: err,
        fell: trace.termination.is_some(),
        survived: trace.rows.last().map_or(0.0, |r| r.time),
        power_positive: e_pos / duration,
        power_absolute: e_abs / duration,
        energy_per_meter: if distance > 1e-6 { e_pos / distance } else { f64::INFINITY },
        mean_period: mean(&|r| r.period),
        overlap: gait.map(|g| pair_overlap(&contacts, g)),
        gait,
        windows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: TrainMode,
    pub results: Vec<TrackingResult>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 13] = [
        "mode",
        "command",
        "mean_forward_velocity",
        "tracking_error",
        "fell",
        "survived",
        "power_positive",
        "power_absolute",
        "energy_per_meter",
        "mean_period",
        "gait",
        "pair_overlap",
        "overlap_degenerate",
    ];

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(Self::CSV_HEADER)?;
        for r in &self.results {
            csv.write_record([
                self.mode.to_string(),
                r.command.to_string(),
                r.mean_forward_velocity.to_string(),
                r.tracking_error.to_string(),
                r.fell.to_string(),
                r.survived.to_string(),
                r.power_positive.to_string(),
                r.power_absolute.to_string(),
                r.energy_per_meter.to_string(),
                r.mean_period.to_string(),
                r.gait.map_or(String::new(), |g| g.to_string()),
                r.overlap.map_or(String::new(), |o| o.ratio.to_string()),
                r.overlap.map_or(String::new(), |o| o.degenerate.to_string()),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Evaluates a checkpoint at each commanded velocity.
pub fn run_tracking_eval(ck: &Checkpoint, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut results = Vec::new();
    for &v in &cfg.velocities {
        let trace = run_trace(ck, |_| v, cfg.duration, cfg.seed)?;
        results.push(summarize(&trace, v, cfg.warmup));
    }
    Ok(EvalReport { mode: ck.mode, results })
}

/// Mean power of the one-second windows whose velocity falls in
/// `[k * width, (k + 1) * width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBin {
    pub index: usize,
    /// Bin center, `width * k + width / 2`.
    pub velocity: f64,
    pub count: usize,
    pub power_positive: f64,
    pub power_absolute: f64,
}

/// Bins windows by velocity; the bin range grows to cover every window.
pub fn energy_bins(windows: &[EnergyWindow], width: f64) -> Vec<EnergyBin> {
    let valid: Vec<&EnergyWindow> = windows.iter().filter(|w| w.velocity.is_finite() && w.velocity >= 0.0).collect();
    let max_k = valid.iter().map(|w| (w.velocity / width).floor() as usize).max();
    let Some(max_k) = max_k else {
        return Vec::new();
    };
    let mut bins: Vec<EnergyBin> = (0..=max_k)
        .map(|k| EnergyBin {
            index: k,
            velocity: width * k as f64 + width / 2.0,
            count: 0,
            power_positive: 0.0,
            power_absolute: 0.0,
        })
        .collect();
    for w in valid {
        let b = &mut bins[(w.velocity / width).floor() as usize];
        b.count += 1;
        b.power_positive += w.power_positive;
        b.power_absolute += w.power_absolute;
    }
    for b in &mut bins {
        if b.count > 0 {
            b.power_positive /= b.count as f64;
            b.power_absolute /= b.count as f64;
        }
    }
    bins.retain(|b| b.count > 0);
    bins
}

pub fn write_energy_csv(label: &str, bins: &[EnergyBin], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["label", "velocity", "count", "power_positive", "power_absolute"])?;
    for b in bins {
        csv.write_record([
            label.to_string(),
            format!("{:.2}", b.velocity),
            b.count.to_string(),
            b.power_positive.to_string(),
            b.power_absolute.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_contact_csv(runs: &[ContactRun], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["leg", "start", "end"])?;
    for r in runs {
        csv.write_record([LEG_NAMES[r.leg].to_string(), r.start.to_string(), r.end.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// Column names of [`write_trace_csv`].
pub fn trace_header() -> Vec<String> {
    let mut h: Vec<String> = RobotState::CSV_HEADER.iter().map(|s| s.to_string()).collect();
    h.push("command".into());
    h.extend((0..8).map(|j| format!("target_{j}")));
    h.extend((0..8).map(|j| format!("torque_{j}")));
    h.extend(LEG_NAMES.iter().map(|l| format!("phase_{l}")));
    h.extend(LEG_NAMES.iter().map(|l| format!("contact_{l}")));
    for c in ["period", "gait", "amplitude", "reward", "energy_positive", "energy_absolute"] {
        h.push(c.into());
    }
    h
}

pub fn write_trace_csv(trace: &Trace, w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(trace_header())?;
    for r in &trace.rows {
        let mut rec = r.state.csv_record(r.time);
        rec.push(r.command.to_string());
        rec.extend(r.targets.iter().map(|x| x.to_string()));
        rec.extend(r.torques.iter().map(|x| x.to_string()));
        rec.extend(r.leg_phase.iter().map(|x| x.to_string()));
        rec.extend(r.state.contacts.iter().map(|c| u8::from(*c).to_string()));
        rec.push(r.period.to_string());
        rec.push(r.gait.map_or(String::new(), |g| g.to_string()));
        rec.push(r.amplitude.to_string());
        rec.push(r.reward.to_string());
        rec.push(r.energy_positive.to_string());
        rec.push(r.energy_absolute.to_string());
        csv.write_record(rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-tick columns recovered from a trace CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceTable {
    pub time: Vec<f64>,
    pub command: Vec<f64>,
    pub forward_velocity: Vec<f64>,
    pub contacts: Vec<[bool; NUM_LEGS]>,
    pub gait: Vec<Option<GaitKind>>,
    pub energy_positive: Vec<f64>,
    pub energy_absolute: Vec<f64>,
}

impl TraceTable {
    pub fn dt(&self) -> f64 {
        match self.time.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.01,
        }
    }
}

pub fn read_trace_csv(path: &Path) -> Result<TraceTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column '{name}'", path.display())))
    };
    let (t, c, vf) = (col("time")?, col("command")?, col("forward_velocity")?);
    let contact: Vec<usize> = LEG_NAMES.iter().map(|l| col(&format!("contact_{l}"))).collect::<Result<_>>()?;
    let (g, ep, ea) = (col("gait")?, col("energy_positive")?, col("energy_absolute")?);
    let mut table = TraceTable::default();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad number '{}'", path.display(), &rec[i])))
        };
        table.time.push(num(t)?);
        table.command.push(num(c)?);
        table.forward_velocity.push(num(vf)?);
        table.contacts.push(std::array::from_fn(|l| &rec[contact[l]] == "1"));
        table.gait.push(rec[g].parse().ok());
        table.energy_positive.push(num(ep)?);
        table.energy_absolute.push(num(ea)?);
    }
    Ok(table)
}

/// One-second energy windows recomputed from a trace table.
pub fn table_windows(table: &TraceTable, warmup: f64) -> Vec<EnergyWindow> {
    let dt = table.dt();
    let per = (1.0 / dt).round().max(1.0) as usize;
    let idx: Vec<usize> = (0..table.time.len()).filter(|&i| table.time[i] > warmup + 1e-9).collect();
    idx.chunks_exact(per)
        .map(|w| {
            let k = w.len() as f64;
            EnergyWindow {
                velocity: w.iter().map(|&i| table.forward_velocity[i]).sum::<f64>() / k,
                power_positive: w.iter().map(|&i| table.energy_positive[i]).sum::<f64>() / (k * dt),
                power_absolute: w.iter().map(|&i| table.energy_absolute[i]).sum::<f64>() / (k * dt),
            }
        })
        .collect()
}

/// Tracking error per distinct command in a trace table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandTracking {
    pub command: f64,
    pub samples: usize,
    pub mean_forward_velocity: f64,
    pub tracking_error: f64,
}

/// Groups post-warm-up ticks by command, in order of first appearance.
pub fn table_tracking(table: &TraceTable, warmup: f64) -> Vec<CommandTracking> {
    let mut out: Vec<CommandTracking> = Vec::new();
    for i in (0..table.time.len()).filter(|&i| table.time[i] > warmup + 1e-9) {
        let (c, v) = (table.command[i], table.forward_velocity[i]);
        let k = match out.iter().position(|t| t.command == c) {
            Some(k) => k,
            None => {
                out.push(CommandTracking {
                    command: c,
                    samples: 0,
                    mean_forward_velocity: 0.0,
                    tracking_error: 0.0,
                });
                out.len() - 1
            }
        };
        out[k].samples += 1;
        out[k].mean_forward_velocity += v;
        out[k].tracking_error += (c - v).abs();
    }
    for t in &mut out {
        t.mean_forward_velocity /= t.samples as f64;
        t.tracking_error /= t.samples as f64;
    }
    out
}

pub fn write_command_tracking_csv(rows: &[CommandTracking], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["command", "samples", "mean_forward_velocity", "tracking_error"])?;
    for r in rows {
        csv.write_record([
            r.command.to_string(),
            r.samples.to_string(),
            r.mean_forward_velocity.to_string(),
            r.tracking_error.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Summary of a run with a piecewise-constant command profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchReport {
    pub segments: Vec<f64>,
    pub switches: Vec<SwitchEvent>,
    pub fell: bool,
    pub max_discontinuity: f64,
    /// Mean tracking error over each segment after its first second.
    pub segment_errors: Vec<f64>,
}

/// Holds each command of `segments` for `segment_duration` seconds.
pub fn step_profile(segments: &[f64], segment_duration: f64) -> impl Fn(f64) -> f64 + '_ {
    move |t| {
        let k = ((t / segment_duration).floor() as usize).min(segments.len() - 1);
        segments[k]
    }
}

pub fn run_switch_eval(ck: &Checkpoint, segments: &[f64], segment_duration: f64, seed: u64) -> Result<SwitchReport> {
    if segments.is_empty() {
        return Err(Error::Config("empty command profile".into()));
    }
    for &v in segments {
        CommandSpec::Fixed(v).validate()?;
    }
    let duration = segment_duration * segments.len() as f64;
    let trace = run_trace(ck, step_profile(segments, segment_duration), duration, seed)?;
    let segment_errors = (0..segments.len())
        .map(|k| {
            let lo = k as f64 * segment_duration + 1.0;
            let hi = (k + 1) as f64 * segment_duration;
            let rows: Vec<&TraceRow> = trace.rows.iter().filter(|r| r.time > lo && r.time <= hi).collect();
            if rows.is_empty() {
                f64::NAN
            } else {
                rows.iter().map(|r| (r.command - r.state.forward_velocity()).abs()).sum::<f64>() / rows.len() as f64
            }
        })
        .collect();
    Ok(SwitchReport {
        segments: segments.to_vec(),
        max_discontinuity: trace.switches.iter().map(|s| s.discontinuity).fold(0.0, f64::max),
        switches: trace.switches,
        fell: trace.termination.is_some(),
        segment_errors,
    })
}

pub fn write_metrics_csv(metrics: &[IterationMetrics], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(IterationMetrics::csv_header())?;
    for m in metrics {
        csv.write_record(m.csv_record())?;
    }
    csv.flush()?;
    Ok(())
}

/// Record of one training run, stored next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub iterations: u32,
    pub total_steps: u64,
    pub wall_seconds: f64,
    pub final_mean_reward: f64,
    pub final_cost_scale: f64,
    pub checkpoint: String,
    pub metrics: String,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
