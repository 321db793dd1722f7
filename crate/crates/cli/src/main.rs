//! `irnorm`: train, compare, diagnose and stress-test normalization schemes.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "irnorm",
    version,
    about = "Normalization studies for image-restoration Transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override one key, e.g. `--set norm.kind=iLN`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory that receives one sub-directory per invocation.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, trace and report.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train every (norm kind, seed) cell and tabulate the results.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated norm kinds (at least two).
        #[arg(long, value_delimiter = ',', required = true)]
        kinds: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Trace a checkpoint on the held-out set and export its RPE tables.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint under reduced-precision policies.
    QuantEval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `<weights>:<features>`, weights in {none,int8,int4} and features
        /// in {f32,f16}. Repeatable; defaults to a full sweep.
        #[arg(long = "policy", value_name = "W:F")]
        policies: Vec<String>,
    },
    /// Train the same config under several seeds and aggregate.
    Multirun {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds (at least two).
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { cfg } => commands::train(&cfg),
        Command::Compare { cfg, kinds, seeds } => commands::compare(&cfg, &kinds, &seeds),
        Command::Diagnose { cfg, checkpoint } => commands::diagnose(&cfg, &checkpoint),
        Command::QuantEval {
            cfg,
            checkpoint,
            policies,
        } => commands::quant_eval(&cfg, &checkpoint, &policies),
        Command::Multirun { cfg, seeds } => commands::multirun(&cfg, &seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
