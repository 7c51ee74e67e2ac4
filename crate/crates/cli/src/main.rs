//! `edgelab`: run QoS-aware load-balancing simulations and emit plot-ready data.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "edgelab", version, about = "Decentralized QoS-aware load balancing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write the per-run outputs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite the outputs of a previous run in `--out`.
        #[arg(long)]
        force: bool,
    },
    /// Run every strategy on several topologies and write aggregate.csv.
    Compare {
        #[arg(long)]
        template: PathBuf,
        /// Comma-separated ids: qedgeproxy, dec_sarsa, proxymity:<alpha>.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        /// Number of topologies; topology k uses seed k.
        #[arg(long, default_value_t = 5)]
        topologies: u64,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent simulations; defaults to the available cores.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Like `run`, plus events.csv for a scenario with timed events.
    Events {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Parse, validate and resolve a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, force } => commands::run(&scenario, &out, seed, force),
        Command::Compare { template, strategies, topologies, out, workers, force } => {
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            commands::compare(&template, &strategies, topologies, &out, workers, force)
        }
        Command::Events { scenario, out, seed, force } => commands::events(&scenario, &out, seed, force),
        Command::Validate { scenario } => commands::validate(&scenario).map(|()| println!("ok")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
