//! `astopo`: staged AS topology inference over a work directory.

mod artifacts;
mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "astopo", version, about = "Infer AS-level edge probabilities from route collector paths")]
struct Cli {
    /// Work directory holding stage inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    /// `key=value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count observations from path files into pair and class tables.
    Count {
        /// Path files or glob patterns.
        inputs: Vec<String>,
    },
    /// Fit collector error rates and the edge prior by EM.
    Fit {
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Normalized, per-node and per-group entropy plus connectivity.
    Entropy {
        /// `as_number<TAB>label` file.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        min_group_size: Option<usize>,
    },
    /// Posterior predictive check on positive-observation counts.
    Ppc {
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Score edge lists against the fitted posteriors.
    Eval {
        /// Edge lists (`as1 as2` or `as1|as2|...`).
        reconstructions: Vec<PathBuf>,
        /// Also score the union of positive observations.
        #[arg(long)]
        naive: bool,
        /// Planted edge list; adds a ranking AUC line.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Edge lists of pairs whose posterior exceeds each threshold.
    Threshold {
        #[arg(long = "tau", value_delimiter = ',')]
        taus: Vec<f64>,
    },
    /// Normalized entropy as collectors are added in random orders.
    Ablate {
        #[arg(long)]
        orderings: Option<usize>,
    },
    /// Generate a synthetic topology with noisy collector paths.
    Simulate(commands::SimulateArgs),
    /// Posterior histogram and summary statistics.
    Report {
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
