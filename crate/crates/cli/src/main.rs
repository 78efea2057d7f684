//! `segstack`: synthetic data, training, prediction, evaluation and
//! reporting for two-layer stacked segmentation ensembles.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use segstack::metrics::EvalOptions;
use segstack::solver::SolverMode;
use segstack::synth::SynthConfig;
use segstack::ErrorKind;

use crate::commands::{EvaluateArgs, PredictArgs};
use crate::config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Core(segstack::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "segstack", version, about = "Two-layer stacked segmentation ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images/ and masks/).
    Synth(SynthArgs),
    /// Train an ensemble and write the model directory.
    Train(TrainArgs),
    /// Segment every image in a directory with a trained model.
    Predict(PredictCli),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateCli),
    /// Render saved reports as one comparison table.
    Report(ReportCli),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Per-pixel noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    /// Cross-validation folds (default 5).
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// bvls | nnls | unconstrained | sum1
    #[arg(long, value_parser = parse_solver)]
    solver: Option<SolverMode>,
    /// Fit weights on first-layer maps and skip the second layer.
    #[arg(long)]
    ole: bool,
}

#[derive(Args)]
struct PredictCli {
    #[arg(long)]
    model: PathBuf,
    /// Directory of images, or a dataset root with images/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-image class-membership maps under maps/.
    #[arg(long)]
    dump_maps: bool,
    /// Also write each first-layer model's own masks under baselines/.
    #[arg(long)]
    baselines: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvaluateCli {
    /// Prediction directory (masks/ and optional baselines/ inside).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory, or a dataset root with masks/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    classes: usize,
    /// Score one-sided empty contours as distance 0.
    #[arg(long)]
    legacy_empty_zero: bool,
    #[arg(long)]
    name: Option<String>,
    /// Write the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportCli {
    /// Report files written by `evaluate --out`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_solver(s: &str) -> Result<SolverMode, String> {
    SolverMode::parse(s).ok_or_else(|| format!("unknown solver `{s}`"))
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = SynthConfig::new(a.count, a.width, a.height, a.classes, a.seed);
            if let Some(n) = a.noise {
                cfg.noise = n;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            commands::synth(&cfg, &a.out)
        }
        Command::Train(a) => {
            let cfg = RunConfig::resolve(
                a.config.as_deref(),
                Overrides {
                    data: a.data,
                    out: a.out,
                    classes: a.classes,
                    folds: a.folds,
                    seed: a.seed,
                    workers: a.workers,
                    solver: a.solver,
                    ole: a.ole,
                    legacy_empty_zero: false,
                },
            )?;
            commands::train(&cfg)
        }
        Command::Predict(a) => {
            if a.workers == Some(0) {
                return Err(Failure::Config("workers must be at least 1".into()));
            }
            commands::predict(&PredictArgs {
                model: &a.model,
                data: &a.data,
                out: &a.out,
                dump_maps: a.dump_maps,
                baselines: a.baselines,
                workers: a.workers,
            })
        }
        Command::Evaluate(a) => {
            if !(2..=256).contains(&a.classes) {
                return Err(Failure::Config(format!("classes must be in 2..=256, got {}", a.classes)));
            }
            commands::evaluate_cmd(&EvaluateArgs {
                pred: &a.pred,
                truth: &a.data,
                classes: a.classes,
                options: EvalOptions {
                    legacy_empty_zero: a.legacy_empty_zero,
                },
                name: a.name.as_deref(),
                out: a.out.as_deref(),
                workers: a.workers,
            })
        }
        Command::Report(a) => commands::report(&a.reports, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
