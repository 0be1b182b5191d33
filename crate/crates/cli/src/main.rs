//! `mclnn`: generate datasets, train pairwise and baseline models, and
//! evaluate them.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure, 4 file or format error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mclnn::Error;

#[derive(Debug, Parser)]
#[command(name = "mclnn", version, about = "Momentum-conserving Lagrangian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Output {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the true system: trajectories for the pairwise model or
    /// acceleration samples for the baseline.
    Generate {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_particles: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Train on a generated dataset.
    Train {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint's parameters and optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Roll a trained model and the true system out from the same held-out
    /// start.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        n_particles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Tabulate the learned pair potential against the analytic one.
    Potential {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        r_min: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Train one pairwise model per hidden-layer configuration.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Layer configurations such as "2,2;4,4;8,8;16,16".
        #[arg(long)]
        widths: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Run a pairwise and a baseline checkpoint side by side.
    Compare {
        #[arg(long)]
        mclnn: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure { .. } | Error::Singular { .. } => 3,
        Error::Trajectory { source, .. } => exit_code(source),
        Error::Io { .. } | Error::Format { .. } => 4,
        Error::Contract(_) | Error::Config(_) | Error::Unsupported(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
