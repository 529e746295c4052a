//! `doorns` — dataset generation, pretraining, latent probes, finetuning
//! and report tables for the door-world study.
//!
//! Exit codes: 0 success, 2 config/schema error, 3 runtime or training
//! error, 4 I/O error.

mod config;
mod eval_latent;
mod finetune;
mod generate;
mod plot;
mod pretrain;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::SchemaError;

#[derive(Parser)]
#[command(name = "doorns", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing; existing files are overwritten).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed(s) in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a pretraining or interaction dataset.
    Generate(Common),
    /// Train a statistician or VAE and keep the best-validation checkpoint.
    Pretrain(Common),
    /// Reconstructions, samples, conditional samples and z-sweeps.
    EvalLatent(Common),
    /// Parameter-inference or reward finetuning over several seeds.
    Finetune(Common),
    /// Comparison tables and recall curves from stored metrics.
    Report(Common),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(c) => generate::run(&load(&c)?, &c.out),
        Command::Pretrain(c) => pretrain::run(&load(&c)?, &c.out),
        Command::EvalLatent(c) => eval_latent::run(&load(&c)?, &c.out),
        Command::Finetune(c) => finetune::run(&load(&c)?, &c.out),
        Command::Report(c) => report::run(&load(&c)?, &c.out),
    }
}

fn load<C: config::RunConfig>(c: &Common) -> anyhow::Result<C> {
    let cfg = config::load(&c.config, c.seed)?;
    config::save(&cfg, &c.out)?;
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<SchemaError>() {
            return 2;
        }
        if cause.is::<std::io::Error>() || cause.is::<report::MissingInputs>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<doorns::Error>() {
            return match e {
                doorns::Error::Io { .. } | doorns::Error::Format { .. } => 4,
                _ => 3,
            };
        }
    }
    3
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
