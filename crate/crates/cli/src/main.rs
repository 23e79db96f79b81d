//! `dualsched`: solve, learn, sweep, simulate and report on the dual-interface
//! scheduling experiments.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::ConfigProblem;

#[derive(Parser, Debug)]
#[command(name = "dualsched", version, about = "Delay-optimal scheduling over mmWave/sub-6 GHz dual interfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment configuration (JSON). Defaults to the bundled experiment
    /// A for `solve` and experiment B otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the simulation and learning seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the number of simulation replications.
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Overrides the slot length in seconds.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact solution by relative value iteration and the occupation LP.
    Solve,
    /// Q-learning at one sub-6 rate.
    Learn {
        /// Sub-6 departure rate, packets per second (defaults to the config's).
        #[arg(long)]
        rate: Option<f64>,
        /// Overrides the number of training steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Learned policy against the best queue-length threshold per sub-6 rate.
    Sweep {
        /// Comma-separated sub-6 rates (defaults to the config's).
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Overrides the number of training steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Simulates one policy.
    Simulate {
        /// `optimal`, `threshold:N`, `sub6-only` or `qtable:PATH`.
        #[arg(long, default_value = "optimal")]
        policy: String,
        /// Slots per replication, warmup included.
        #[arg(long)]
        horizon: Option<u64>,
        /// Record the first N slots of replication 0.
        #[arg(long)]
        trace: Option<usize>,
    },
    /// Markdown summary of the checks found in the output directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve => commands::solve(&cli.common),
        Command::Learn { rate, steps } => commands::learn(&cli.common, *rate, *steps),
        Command::Sweep { rates, steps } => commands::sweep(&cli.common, rates.clone(), *steps),
        Command::Simulate { policy, horizon, trace } => commands::simulate(&cli.common, policy, *horizon, *trace),
        Command::Report => commands::report(&cli.common),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigProblem>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
