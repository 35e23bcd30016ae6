//! `ldsb` — reproducible experiments on low-dimensional simplicity bias.
//!
//! Subcommands: `gen`, `train`, `analyze`, `orthop`, `robustness`, `ntk`,
//! `pipeline`. Every command is deterministic given its config and seed,
//! writes outputs atomically under `--out`, and prints a one-line summary.
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod commands;
mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "invalid request: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime failure: {msg}"),
        }
    }
}

impl From<ldsb::Error> for CliError {
    fn from(e: ldsb::Error) -> Self {
        use ldsb::Error::*;
        match e {
            InvalidInput(_) | InvalidSpec(_) | Shape(_) | InvalidRank { .. } | Parse { .. }
            | Domain(_) | TooLarge(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "ldsb", version, about = "Simplicity-bias experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by dataset- and training-driven commands.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Master seed; every stream derives from it.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Named preset: ifm-basic, collage-xor, collage-sphere.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// JSON experiment config; command-line flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Initialization regime for training stages.
    #[arg(long, value_name = "rich|lazy")]
    regime: Option<String>,
    /// Training steps override.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Hidden width override.
    #[arg(long, value_name = "M")]
    hidden: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits of a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train a network on a dataset CSV.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Training dataset CSV.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Validation dataset CSV (defaults to a sibling val.csv if present).
        #[arg(long, value_name = "FILE")]
        val: Option<PathBuf>,
    },
    /// Discover the bias subspace of a trained model and score the mixing
    /// metrics.
    Analyze {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Model checkpoint to analyze.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Projector rank: an integer or `auto`.
        #[arg(long, value_name = "K|auto")]
        rank: Option<String>,
        /// Complement-uniformity weight for the projector optimization.
        #[arg(long, value_name = "F")]
        lambda: Option<f64>,
    },
    /// Train a second model on inputs projected off the first model's
    /// dominant subspace.
    Orthop {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        val: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "K|auto")]
        rank: Option<String>,
    },
    /// Gaussian-noise robustness sweep over models and their ensembles.
    Robustness {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long = "model-ind", value_name = "FILE")]
        model_ind: PathBuf,
        #[arg(long = "model-proj", value_name = "FILE")]
        model_proj: PathBuf,
        #[arg(long, value_name = "FILE")]
        projector: PathBuf,
        /// Noise levels, comma separated.
        #[arg(long, value_name = "CSV-list")]
        sigmas: Option<String>,
        #[arg(long, value_name = "N")]
        trials: Option<usize>,
    },
    /// Closed-form kernel max-margin report for the point-mass dataset.
    Ntk {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        d: usize,
        #[arg(long, value_name = "F")]
        gamma: f64,
    },
    /// Full experiment: generate, train, analyze, orthop, retrain
    /// independently, diversity, robustness; with a manifest.
    Pipeline {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen { common } => commands::gen(&common),
        Command::Train { common, data, val } => commands::train(&common, &data, val.as_deref()),
        Command::Analyze { common, data, model, rank, lambda } => {
            commands::analyze(&common, &data, &model, rank.as_deref(), lambda)
        }
        Command::Orthop { common, data, val, model, rank } => {
            commands::orthop(&common, &data, val.as_deref(), &model, rank.as_deref())
        }
        Command::Robustness {
            common,
            data,
            model,
            model_ind,
            model_proj,
            projector,
            sigmas,
            trials,
        } => commands::robustness(
            &common,
            &data,
            &model,
            &model_ind,
            &model_proj,
            &projector,
            sigmas.as_deref(),
            trials,
        ),
        Command::Ntk { out, d, gamma } => commands::ntk(&out, d, gamma),
        Command::Pipeline { common } => commands::pipeline(&common),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e @ CliError::Validation(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
