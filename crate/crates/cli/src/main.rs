//! `prx`: simulate, train, reconstruct and sweep phase-retrieval receiver
//! experiments from a TOML configuration.

mod commands;
mod config;
mod rundir;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "prx", version, about = "Phase-retrieval receiver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the Tx waveform and both photodetected traces.
    Simulate(Common),
    /// Estimate the channel from the training section of simulated traces.
    Train(Common),
    /// Reconstruct the payload field and score it.
    Reconstruct(Common),
    /// Run the configured parameter sweep end to end.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Skip (point, seed) runs already recorded as successful.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize the runs found in an output directory.
    Report {
        /// Output directory to summarize.
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the configuration, then `prx-out`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Comma-separated seeds overriding the configuration.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

struct Resolved {
    cfg: prx_core::pipeline::ExperimentConfig,
    root: PathBuf,
    seeds: Vec<u64>,
}

impl Common {
    fn resolve(&self) -> Result<Resolved> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let cfg = config::load(&self.config)?;
        let root = self
            .output
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("prx-out"));
        let seeds = match &self.seeds {
            Some(s) => config::parse_seeds(s)?,
            None => cfg.seeds.clone(),
        };
        Ok(Resolved { cfg, root, seeds })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let r = c.resolve()?;
            commands::simulate(&r.cfg, &r.root, &r.seeds)
        }
        Command::Train(c) => {
            let r = c.resolve()?;
            commands::train(&r.cfg, &r.root, &r.seeds)
        }
        Command::Reconstruct(c) => {
            let r = c.resolve()?;
            commands::reconstruct(&r.cfg, &r.root, &r.seeds)
        }
        Command::Sweep { common, resume } => {
            let r = common.resolve()?;
            commands::sweep(&r.cfg, &r.root, &r.seeds, resume)
        }
        Command::Report { output } => commands::report(&output),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
