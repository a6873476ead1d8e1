//! Experiment front end for the pruning engine.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 aborted run (a layer
//! was pruned empty), 1 anything else.

mod calibrate;
mod compare;
mod config;
mod csvio;
mod gendata;
mod inspect;
mod manifest;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "incop", version, about = "Iterative magnitude pruning experiments with flow-based stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured trials and write CSV telemetry.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for trial files, summary and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Worker pool size for independent trials.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write a checkpoint after every K-th pruning iteration.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Replace the config's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Merge completed runs into plot-ready comparison tables.
    Compare {
        /// Directories produced by `run` (at least two).
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the flow snapshots stored in a checkpoint.
    InspectFlows { checkpoint: PathBuf },
    /// Run iteration 1 at the full budget and suggest epsilon values.
    CalibrateEpsilon {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Write the configured synthetic dataset as IDX files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            checkpoint_every,
            seed_override,
        } => runner::cmd_run(
            &config,
            &out,
            &runner::RunOptions {
                jobs,
                checkpoint_every,
                seed_override,
            },
        ),
        Command::Compare { run_dirs, out } => compare::cmd_compare(&run_dirs, &out),
        Command::InspectFlows { checkpoint } => inspect::cmd_inspect_flows(&checkpoint).map(|_| ()),
        Command::CalibrateEpsilon {
            config,
            out,
            seed_override,
        } => calibrate::cmd_calibrate(&config, &out, seed_override).map(|_| ()),
        Command::GenData { config, out } => gendata::cmd_gen_data(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.downcast_ref::<incop::Error>() {
                Some(incop::Error::DeadLayer { .. }) => 3,
                Some(incop::Error::Config(_)) => 2,
                _ if err.to_string().starts_with("config") => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
