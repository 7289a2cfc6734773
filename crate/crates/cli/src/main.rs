mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BaselineArgs, CheckFailed, EvalArgs, TrainArgs, UsageError};
use mast_core::MastError;

#[derive(Parser)]
#[command(name = "mast", version, about = "Multi-agent spatial transformer: training, evaluation and baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy by imitation of the expert.
    DanTrain {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the weights, training log and resolved config.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out trained weights and write per-step metrics.
    DanEval {
        #[arg(long)]
        weights: PathBuf,
        /// Defaults to the config.toml written next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Team size; the world grows to keep the trained density.
        #[arg(long)]
        agents: Option<usize>,
        /// Communication delay as a multiple of the time step.
        #[arg(long)]
        delay: Option<f64>,
        /// central | decentralized
        #[arg(long, default_value = "decentralized")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a classical policy: lsap, dhba, static, or a CVT variant.
    Baseline {
        /// dan | coverage
        #[arg(long)]
        task: String,
        #[arg(long)]
        policy: String,
        /// Neighborhood depth for dhba.
        #[arg(long, default_value_t = 1)]
        hops: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Numerical self-checks: equivariance, gradients, oracles, or all.
    Check {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::DanTrain { config, out } => commands::dan_train(&TrainArgs { config, out }),
        Command::DanEval { weights, config, scenario, agents, delay, mode, episodes, steps, csv, jobs } => {
            commands::dan_eval(&EvalArgs { weights, config, scenario, agents, delay, mode, episodes, steps, csv, jobs })
        }
        Command::Baseline { task, policy, hops, config, scenario, agents, episodes, steps, csv, jobs } => {
            commands::baseline(&BaselineArgs { task, policy, hops, config, scenario, agents, episodes, steps, csv, jobs })
        }
        Command::Check { suite, seed } => commands::check(&suite, seed),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match err.downcast_ref::<MastError>() {
        Some(MastError::Config(_) | MastError::Parse(_) | MastError::Weights(_) | MastError::TensorShape { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
