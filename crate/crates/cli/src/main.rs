mod commands;
mod config;
mod error;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{ConvergenceArgs, Context, GenDataArgs, SimulateArgs, SteadyArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Radial calcium-wave simulation with Markov or neural-network RyR channels.
#[derive(Debug, Parser)]
#[command(name = "cawave", version)]
struct Cli {
    /// TOML run configuration (unknown keys are rejected).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for dataset generation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the ODE-labelled or an artificial training set.
    GenData(GenDataArgs),
    /// Train the open-probability network on a dataset file.
    Train(TrainArgs),
    /// Run the coupled cytosol/ER simulation.
    Simulate(SimulateArgs),
    /// Manufactured-solution convergence table for the ER diffusion solver.
    Convergence(ConvergenceArgs),
    /// Tabulate Markov steady states over calcium levels.
    Steady(SteadyArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let ctx = Context {
        config: RunConfig::load(cli.config.as_deref())?,
        seed: cli.seed,
        out: cli.out,
    };
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::Train(a) => commands::train_cmd(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Convergence(a) => commands::convergence(&ctx, a),
        Command::Steady(a) => commands::steady(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
