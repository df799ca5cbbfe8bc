//! `wmdlab` command-line interface.

mod commands;
mod config;
mod inputs;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::{Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "wmdlab", version, about = "Word Mover's Distance versus normalized bag-of-words")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Compute (or reuse) distance matrices for every fold and method.
    Dists,
    /// Tune and evaluate kNN/wkNN; writes eval.csv and eval_summary.json.
    Eval,
    /// Report duplicate documents and write a deduplicated corpus.
    Dedup,
    /// Transport histograms, WMD vs BOW scatter, per-dimension correlations.
    Analyze,
    /// Project an embedding file with PCA to each of --dims.
    Project,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Dists => "dists",
            Command::Eval => "eval",
            Command::Dedup => "dedup",
            Command::Analyze => "analyze",
            Command::Project => "project",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = RunConfig::resolve(&cli.flags)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global()
        .context("starting the worker pool")?;
    let mut run = Run::new(config);
    match cli.command {
        Command::Dists => run.dists()?,
        Command::Eval => run.eval()?,
        Command::Dedup => run.dedup()?,
        Command::Analyze => run.analyze()?,
        Command::Project => run.project()?,
    }
    run.finish(cli.command.name())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
