use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sigred_cli::{report, Pipeline, PipelineConfig};

/// Balanced truncation of signature SDEs for option pricing.
#[derive(Parser)]
#[command(name = "sigred", version)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "sigred.toml")]
    config: PathBuf,
    /// Overrides `io.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `io.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute current artifacts and accept stale inputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate market paths for the fit.
    Simulate,
    /// Regress spot on signature features.
    Fit,
    /// Assemble the signature SDE.
    Build,
    /// Gramians, balanced spectrum and rank.
    Gramians,
    /// Reduced systems and their L² errors.
    Reduce,
    /// Smiles of the full and reduced systems.
    Price,
    /// Figures, figure data and summary.
    Report,
    /// Every stage in order.
    Run,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    let cfg = PipelineConfig::load(&cli.config)?;
    let p = Pipeline::new(cfg, cli.out, cli.seed, cli.force);
    match cli.command {
        Command::Simulate => p.simulate(),
        Command::Fit => p.fit(),
        Command::Build => p.build(),
        Command::Gramians => p.gramians(),
        Command::Reduce => p.reduce(),
        Command::Price => p.price(),
        Command::Report => report::write_report(&p.out, &p.cfg),
        Command::Run => p.run_all(),
    }
}
