//! `bitgeo`: run the library's experiments from the command line.
//!
//! Exit codes: 0 on success, 1 when a run or a `--check` fails, 2 for
//! usage and configuration errors.

mod angles;
mod bench;
mod data;
mod diagnose;
mod dynamics;
mod manifest;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Lib(#[from] bitgeo::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(bitgeo::Error::Arch(_) | bitgeo::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "bitgeo", version = manifest::VERSION, about = "Binary network geometry experiments")]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true, env = "BITGEO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo check of binarization angle statistics.
    Angles(angles::AnglesArgs),
    /// Simulate the binary regression weight dynamics.
    Dynamics(dynamics::DynamicsArgs),
    /// Train a binary network.
    Train(train::TrainArgs),
    /// Diagnostic reports on a trained checkpoint.
    Diagnose(diagnose::DiagnoseArgs),
    /// Time packed ±1 dot products against float ones.
    Bench(bench::BenchArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Angles(a) => angles::run(a),
        Command::Dynamics(a) => dynamics::run(a),
        Command::Train(a) => train::run(a),
        Command::Diagnose(a) => diagnose::run(a),
        Command::Bench(a) => bench::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if matches!(e, CliError::Check(_)) { "check failed" } else { "error" };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
