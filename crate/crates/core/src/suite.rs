//! Training runs with their artifacts on disk, and the multi-run suites that
//! compare gaits, controllers and curriculum settings.
//!
//! Every run directory holds `checkpoint.bin`, `metrics.csv`, `config.toml`
//! and `manifest.toml`. Suites add evaluation CSVs and a comparison table.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::{
    contact_runs, energy_bins, run_switch_eval, run_trace, summarize, write_contact_csv, write_energy_csv,
    write_metrics_csv, write_trace_csv, EvalConfig, EvalReport, RunManifest, SwitchReport, ENERGY_BIN_WIDTH,
};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::cpg::GaitKind;
use crate::error::{Error, Result};
use crate::ppo::{IterationMetrics, TrainMode, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Command profile crossing both schedule breakpoints, up and back down.
pub const SWITCH_PROFILE: [f64; 5] = [0.3, 0.8, 1.3, 0.8, 0.3];
pub const SWITCH_SEGMENT: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
    pub manifest: RunManifest,
}

/// Trains one controller and writes its run directory.
pub fn train_run(
    cfg: &ExperimentConfig,
    mode: TrainMode,
    out: &Path,
    mut on_iteration: impl FnMut(&IterationMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    let env = cfg.env_config(mode)?;
    let mut trainer = Trainer::new(cfg.train.clone(), mode, env)?;
    let start = Instant::now();
    let mut metrics = Vec::new();
    let result = trainer.train(|m| {
        metrics.push(*m);
        on_iteration(m);
    });
    // keep whatever was learned when an iteration fails
    write_metrics_csv(&metrics, BufWriter::new(File::create(out.join(METRICS_FILE))?))?;
    let checkpoint = Checkpoint::from_agents(mode, cfg, trainer.low(), trainer.high());
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    result?;
    let last = metrics.last().copied().unwrap_or_default();
    let manifest = RunManifest {
        mode: mode.to_string(),
        seed: cfg.train.seed,
        config_hash: cfg.hash()?,
        iterations: trainer.iteration(),
        total_steps: trainer.total_steps(),
        wall_seconds: start.elapsed().as_secs_f64(),
        final_mean_reward: last.mean_reward,
        final_cost_scale: last.cost_scale,
        checkpoint: CHECKPOINT_FILE.into(),
        metrics: METRICS_FILE.into(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(TrainOutcome {
        dir: out.to_path_buf(),
        checkpoint,
        metrics,
        manifest,
    })
}

/// Which set of runs a suite trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuiteMode {
    /// Trot, pace and bound, each with its fixed gait.
    Single,
    /// The velocity-scheduled controller.
    Multi,
    /// The direct joint-target policy.
    Baseline,
    /// Single trot with and without the cost curriculum.
    Curriculum,
}

impl fmt::Display for SuiteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteMode::Single => "single",
            SuiteMode::Multi => "multi",
            SuiteMode::Baseline => "baseline",
            SuiteMode::Curriculum => "curriculum",
        })
    }
}

impl FromStr for SuiteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(SuiteMode::Single),
            "multi" => Ok(SuiteMode::Multi),
            "baseline" => Ok(SuiteMode::Baseline),
            "curriculum" => Ok(SuiteMode::Curriculum),
            _ => Err(Error::Config(format!(
                "unknown suite '{s}' (expected single, multi, baseline or curriculum)"
            ))),
        }
    }
}

/// One training run of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub label: String,
    pub mode: TrainMode,
    pub config: ExperimentConfig,
}

impl SuiteMode {
    /// Runs for one seed.
    pub fn runs(self, base: &ExperimentConfig, seed: u64) -> Vec<RunSpec> {
        let with_seed = |label: String, mode: TrainMode, mut config: ExperimentConfig| {
            config.train.seed = seed;
            RunSpec {
                label: format!("{label}-seed{seed}"),
                mode,
                config,
            }
        };
        match self {
            SuiteMode::Single => GaitKind::ALL
                .iter()
                .map(|&g| with_seed(g.to_string(), TrainMode::Single(g), base.clone()))
                .collect(),
            SuiteMode::Multi => vec![with_seed("multi".into(), TrainMode::Multi, base.clone())],
            SuiteMode::Baseline => vec![with_seed("baseline".into(), TrainMode::Baseline, base.clone())],
            SuiteMode::Curriculum => {
                let mut off = base.clone();
                off.train.initial_cost_scale = 1.0;
                vec![
                    with_seed("curriculum_on".into(), TrainMode::Single(GaitKind::Trot), base.clone()),
                    with_seed("curriculum_off".into(), TrainMode::Single(GaitKind::Trot), off),
                ]
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub spec: RunSpec,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    pub switching: Option<SwitchReport>,
}

/// Column names of the suite comparison table.
pub const SUMMARY_HEADER: [&str; 12] = [
    "label",
    "mode",
    "seed",
    "command",
    "tracking_error",
    "mean_forward_velocity",
    "fell",
    "mean_period",
    "pair_overlap",
    "power_positive",
    "energy_per_meter",
    "final_mean_reward",
];

/// Trains every run of `mode` for each seed, evaluates it and writes the
/// comparison tables under `out`.
pub fn run_gait_suite(
    mode: SuiteMode,
    base: &ExperimentConfig,
    seeds: &[u64],
    eval: &EvalConfig,
    out: &Path,
    mut on_iteration: impl FnMut(&str, &IterationMetrics),
) -> Result<Vec<SuiteRun>> {
    eval.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("suite needs at least one seed".into()));
    }
    fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for &seed in seeds {
        for spec in mode.runs(base, seed) {
            let dir = out.join(&spec.label);
            let outcome = train_run(&spec.config, spec.mode, &dir, |m| on_iteration(&spec.label, m))?;
            let report = evaluate_to_dir(&outcome.checkpoint, eval, &spec.label, &dir.join("eval"))?;
            let switching = if spec.mode == TrainMode::Multi {
                let s = run_switch_eval(&outcome.checkpoint, &SWITCH_PROFILE, SWITCH_SEGMENT, eval.seed)?;
                write_switch_csv(&s, BufWriter::new(File::create(dir.join("switching.csv"))?))?;
                Some(s)
            } else {
                None
            };
            runs.push(SuiteRun {
                spec,
                outcome,
                report,
                switching,
            });
        }
    }
    write_summary_csv(&runs, BufWriter::new(File::create(out.join("summary.csv"))?))?;
    Ok(runs)
}

pub fn write_summary_csv(runs: &[SuiteRun], w: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SUMMARY_HEADER)?;
    for run in runs {
        for r in &run.report.results {
            csv.write_record([
                run.spec.label.clone(),
                run.spec.mode.to_string(),
                run.spec.config.train.seed.to_string(),
                r.command.to_string(),
                r.tracking_error.to_string(),
                r.mean_forward_velocity.to_string(),
                r.fell.to_string(),
                r.mean_period.to_string(),
                r.overlap.map_or(String::new(), |o| o.ratio.to_string()),
                r.power_positive.to_string(),
                r.energy_per_meter.to_string(),
                run.outcome.manifest.final_mean_reward.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn write_switch_csv(report: &SwitchReport, w: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["kind", "time", "command", "from", "to", "value"])?;
    for (k, (v, e)) in report.segments.iter().zip(&report.segment_errors).enumerate() {
        csv.write_record([
            "segment_error".into(),
            (k as f64 * SWITCH_SEGMENT).to_string(),
            v.to_string(),
            String::new(),
            String::new(),
            e.to_string(),
        ])?;
    }
    for s in &report.switches {
        csv.write_record([
            "switch".into(),
            s.time.to_string(),
            String::new(),
            s.from.to_string(),
            s.to.to_string(),
            s.discontinuity.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Record of one evaluation, stored beside its CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub mode: String,
    pub checkpoint_config_hash: String,
    pub training_seed: u64,
    pub eval_seed: u64,
    pub velocities: Vec<f64>,
    pub duration: f64,
    pub warmup: f64,
    pub traces: Vec<String>,
}

impl EvalManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// File name of the raw trace recorded at command `v`.
pub fn trace_file_name(v: f64) -> String {
    format!("trace_v{v:.2}.csv")
}

/// Evaluates a checkpoint at each velocity and writes `tracking.csv`,
/// `energy.csv`, one trace and one contact table per velocity, and
/// `manifest.toml` under `out`.
pub fn evaluate_to_dir(ck: &Checkpoint, eval: &EvalConfig, label: &str, out: &Path) -> Result<EvalReport> {
    eval.validate()?;
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    let mut traces = Vec::new();
    for &v in &eval.velocities {
        let trace = run_trace(ck, |_| v, eval.duration, eval.seed)?;
        let name = trace_file_name(v);
        write_trace_csv(&trace, BufWriter::new(File::create(out.join(&name))?))?;
        let times: Vec<f64> = trace.rows.iter().map(|r| r.time).collect();
        let contacts: Vec<_> = trace.rows.iter().map(|r| r.state.contacts).collect();
        let runs = contact_runs(&times, &contacts, trace.dt);
        write_contact_csv(&runs, BufWriter::new(File::create(out.join(format!("contacts_v{v:.2}.csv")))?))?;
        results.push(summarize(&trace, v, eval.warmup));
        traces.push(name);
    }
    let report = EvalReport { mode: ck.mode, results };
    report.write_csv(BufWriter::new(File::create(out.join("tracking.csv"))?))?;
    let windows: Vec<_> = report.results.iter().flat_map(|r| r.windows.iter().copied()).collect();
    let bins = energy_bins(&windows, ENERGY_BIN_WIDTH);
    write_energy_csv(label, &bins, BufWriter::new(File::create(out.join("energy.csv"))?))?;
    EvalManifest {
        mode: ck.mode.to_string(),
        checkpoint_config_hash: ck.config_hash()?,
        training_seed: ck.config.train.seed,
        eval_seed: eval.seed,
        velocities: eval.velocities.clone(),
        duration: eval.duration,
        warmup: eval.warmup,
        traces,
    }
    .save(&out.join(MANIFEST_FILE))?;
    Ok(report)
}
