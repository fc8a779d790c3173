//! `cpgait`: train, evaluate and compare CPG gait controllers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cpgait_core::bench::{
    contact_runs, energy_bins, read_trace_csv, table_tracking, table_windows, write_command_tracking_csv,
    write_contact_csv, write_energy_csv, EvalConfig, DEFAULT_WARMUP, ENERGY_BIN_WIDTH,
};
use cpgait_core::checkpoint::Checkpoint;
use cpgait_core::config::ExperimentConfig;
use cpgait_core::ppo::IterationMetrics;
use cpgait_core::suite::{evaluate_to_dir, run_gait_suite, train_run, CHECKPOINT_FILE};
use cpgait_core::{SuiteMode, TrainMode};

#[derive(Parser)]
#[command(name = "cpgait", version, about = "CPG-based quadruped gait controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one controller.
    Train {
        /// single:trot, single:pace, single:bound, multi or baseline
        #[arg(long)]
        mode: TrainMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure tracking error and energy of a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated commands, m/s.
        #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.6, 0.9, 1.2, 1.5])]
        velocities: Vec<f64>,
        /// Seconds per command, including the warm-up.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to an `eval` directory beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a set of controllers.
    Suite {
        /// single, multi, baseline or curriculum
        #[arg(long)]
        mode: SuiteMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive plot data from a recorded trace.
    Export {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        kind: ExportKind,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: f64,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Contact,
    Tracking,
    Energy,
}

fn load_config(path: Option<&Path>, seed: Option<u64>, iterations: Option<u32>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(label: &str, m: &IterationMetrics) {
    eprintln!(
        "{label} iter {:4} steps {:9} reward {:9.3} len {:6.1} v {:6.3} err {:6.3} k_c {:.3}",
        m.iteration,
        m.total_steps,
        m.mean_reward,
        m.mean_episode_length,
        m.mean_forward_velocity,
        m.mean_abs_velocity_error,
        m.cost_scale
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            mode,
            config,
            seed,
            iterations,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed, iterations)?;
            let label = mode.to_string();
            let outcome = train_run(&cfg, mode, &out, |m| progress(&label, m))?;
            println!("{}", out.join(CHECKPOINT_FILE).display());
            eprintln!("{} steps in {:.0} s", outcome.manifest.total_steps, outcome.manifest.wall_seconds);
        }
        Command::Eval {
            checkpoint,
            velocities,
            duration,
            warmup,
            seed,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let eval = EvalConfig {
                velocities,
                duration,
                warmup,
                seed,
            };
            let out = out.unwrap_or_else(|| checkpoint.with_file_name("eval"));
            let report = evaluate_to_dir(&ck, &eval, &ck.mode.to_string(), &out)?;
            report.write_csv(std::io::stdout().lock())?;
        }
        Command::Suite {
            mode,
            config,
            seeds,
            iterations,
            duration,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None, iterations)?;
            let eval = EvalConfig {
                duration,
                ..EvalConfig::default()
            };
            let runs = run_gait_suite(mode, &cfg, &seeds, &eval, &out, progress)?;
            eprintln!("{} runs written to {}", runs.len(), out.display());
            print!("{}", fs::read_to_string(out.join("summary.csv"))?);
        }
        Command::Export {
            trace,
            kind,
            warmup,
            out,
        } => {
            let table = read_trace_csv(&trace)?;
            let sink: Box<dyn std::io::Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            match kind {
                ExportKind::Contact => {
                    write_contact_csv(&contact_runs(&table.time, &table.contacts, table.dt()), sink)?;
                }
                ExportKind::Tracking => {
                    let rows = table_tracking(&table, warmup);
                    if rows.is_empty() {
                        bail!("trace has no samples after the {warmup} s warm-up");
                    }
                    write_command_tracking_csv(&rows, sink)?;
                }
                ExportKind::Energy => {
                    let label = trace.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                    let bins = energy_bins(&table_windows(&table, warmup), ENERGY_BIN_WIDTH);
                    write_energy_csv(&label, &bins, sink)?;
                }
            }
        }
    }
    Ok(())
}
