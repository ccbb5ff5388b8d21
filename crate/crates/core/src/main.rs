use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use mmwlab::config::load_config;
use mmwlab::pipeline::{run_pipeline, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Simulate,
    BuildDataset,
    Train,
    Evaluate,
    Bench,
    SweepS,
    /// Every stage in order.
    All,
}

/// Simulate, build datasets, train and evaluate 60 GHz received-power
/// predictors driven by depth-camera imagery.
#[derive(Debug, Parser)]
#[command(name = "mmwlab", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn stages(cmd: Command) -> Vec<Stage> {
    match cmd {
        Command::Simulate => vec![Stage::Simulate],
        Command::BuildDataset => vec![Stage::BuildDataset],
        Command::Train => vec![Stage::Train],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Bench => vec![Stage::Bench],
        Command::SweepS => vec![Stage::SweepS],
        Command::All => Stage::ALL.to_vec(),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    for done in run_pipeline(&cfg, &out, &stages(cli.stage)).context("pipeline failed")? {
        for f in &done.files {
            println!("{}: wrote {}", done.stage, out.join(f).display());
        }
    }
    Ok(())
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
