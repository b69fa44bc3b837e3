//! Command-line front end. Thin orchestration only: parse arguments, load
//! the run configuration, cap the worker pool, dispatch, and map errors to
//! exit codes (0 success, 1 failed check, 2 bad config, 3 numeric abort,
//! 4 I/O trouble).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fctsbn_core::error::{Error, Result};

use commands::Context;

#[derive(Parser)]
#[command(
    name = "fctsbn",
    version,
    about = "Conditional temporal sigmoid belief networks: train, generate, predict, classify, audit"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for this invocation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run single-threaded so repeated invocations produce byte-identical
    /// artifacts.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Directory for artifacts (checkpoint, logs, CSVs).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a dataset directory; writes model.ckpt plus a
    /// metrics (or accuracy) log.
    Train {
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample observations from a checkpoint under a style schedule;
    /// writes generated_v.csv and generated_y.csv.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One-step-ahead prediction error on a dataset directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Monte Carlo samples per predicted frame.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Label-window classification accuracy on a dataset directory.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference audit of every analytic gradient.
    Gradcheck {
        /// Test fixture: shift this tensor's analytic gradient and expect
        /// the report to flag exactly it.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Exact-enumeration audit of the bound machinery on small instances.
    AuditEnum {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        /// Monte Carlo samples per instance.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
}

/// `FCTSBN_THREADS` caps the worker pool; `--deterministic` forces one
/// worker regardless.
fn init_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("FCTSBN_THREADS") {
            Ok(raw) => Some(raw.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::config(format!("FCTSBN_THREADS must be a positive integer, got '{raw}'"))
            })?),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    init_threads(cli.deterministic)?;
    let config = match &cli.config {
        Some(path) => Some(config::load_config(path)?),
        None => None,
    };
    let ctx = Context { config, seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Train { epochs } => commands::cmd_train(&ctx, epochs),
        Command::Generate { checkpoint } => commands::cmd_generate(&ctx, &checkpoint),
        Command::Predict { checkpoint, data, samples } => {
            commands::cmd_predict(&ctx, &checkpoint, &data, samples)
        }
        Command::Classify { checkpoint, data } => commands::cmd_classify(&ctx, &checkpoint, &data),
        Command::Gradcheck { corrupt } => commands::cmd_gradcheck(&ctx, corrupt),
        Command::AuditEnum { instances, samples } => {
            commands::cmd_audit_enum(&ctx, instances, samples)
        }
    }
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
