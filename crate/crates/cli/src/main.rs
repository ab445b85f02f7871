//! `tgtlab` — experiment harness for teacher-guided training on synthetic
//! manifold tasks: data generation, the three training stages, the
//! low-data method sweep, and bound-term reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tgtlab::commands::{self, Ctx};
use tgtlab::config::ExperimentConfig;
use tgtlab_core::error::Error;

/// Exit codes: 0 success, 2 usage/config errors, 3 runtime numeric
/// failures.
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "tgtlab",
    about = "Teacher-guided training laboratory on synthetic manifold tasks",
    version
)]
struct Cli {
    /// Flat `key = value` config file (unknown keys are errors).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the command's primary seed (data.seed, <stage>.seed,
    /// task.seed for sweep, bounds.seed for bounds).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker pool size for sweep runs (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory (falls back to the config `out` key, then the
    /// TGTLAB_OUT environment variable, then ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Repeatable config override, e.g. --set explore.sigma=0.01
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Draw a sample set from the synthetic task and write samples.csv.
    GenData,
    /// Train the encoder/decoder pair on an unlabeled pool.
    TrainGenerator,
    /// Train the labeler on a large labeled pool.
    TrainTeacher,
    /// Train a student with the configured method.
    TrainStudent,
    /// Run the methods x n-grid x seeds sweep and write sweep.csv.
    Sweep,
    /// Evaluate every bound estimator and write bounds.csv / bounds.txt.
    Bounds,
    /// Run fast internal consistency checks.
    Selftest,
}

fn build_ctx(cli: &Cli) -> Result<Ctx, Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::GenData => cfg.data_seed = seed,
            Command::TrainGenerator => cfg.generator.seed = seed,
            Command::TrainTeacher => cfg.teacher.seed = seed,
            Command::TrainStudent => cfg.student.seed = seed,
            Command::Sweep => cfg.task_seed = seed,
            Command::Bounds => cfg.bounds_seed = seed,
            Command::Selftest => {}
        }
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("TGTLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok(Ctx { cfg, out_dir, jobs: cli.jobs })
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse(_)
        | Error::InvalidArgument(_)
        | Error::Io(_)
        | Error::MissingLabels
        | Error::MissingLatents => EXIT_CONFIG,
        Error::NumericFailure(_)
        | Error::ShapeMismatch { .. }
        | Error::SizeMismatch { .. }
        | Error::NonScalarRoot { .. } => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match build_ctx(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("tgtlab: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::GenData => commands::cmd_gen_data(&ctx),
        Command::TrainGenerator => commands::cmd_train_generator(&ctx),
        Command::TrainTeacher => commands::cmd_train_teacher(&ctx),
        Command::TrainStudent => commands::cmd_train_student(&ctx),
        Command::Sweep => commands::cmd_sweep(&ctx),
        Command::Bounds => commands::cmd_bounds(&ctx),
        Command::Selftest => commands::cmd_selftest(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tgtlab: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
