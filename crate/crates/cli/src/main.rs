//! `objdecode`: synthesize, preprocess, train, evaluate and compare EEG
//! object-category decoders.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 training divergence, 4 gradient check failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use objdecode::evaluation::EvalError;
use objdecode::models::ModelError;

use config::{ConfigError, Precision};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "objdecode", version, about = "EEG object-category decoding with a dual-branch attention CNN")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. They override the `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (output file for `synth` and `preprocess`)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Label granularity: 6 categories or 72 exemplars
    #[arg(long, global = true, value_parser = ["6", "72"])]
    pub classes: Option<String>,
    /// Channel mask JSON for the attention branch
    #[arg(long, global = true)]
    pub mask: Option<PathBuf>,
    /// Worker threads; 1 is the bitwise-reproducible path
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Training epochs for every model
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (or raw recording with --continuous)
    Synth(commands::SynthArgs),
    /// Filter, decimate and epoch a raw continuous recording
    Preprocess(commands::PreprocessArgs),
    /// Train one model on every trial and save a checkpoint
    Train(commands::ModelArgs),
    /// k-fold cross-validation of one model
    Evaluate(commands::ModelArgs),
    /// Cross-validate several methods on shared folds and test the differences
    Compare(commands::ModelArgs),
    /// Category-to-exemplar transfer versus training from scratch
    Transfer(commands::ModelArgs),
    /// Finite-difference check of every differentiable op
    Gradcheck(commands::GradcheckArgs),
    /// Summarize a dataset, raw recording or checkpoint
    Inspect(commands::InspectArgs),
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct GradcheckFailed(String);

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<GradcheckFailed>().is_some() {
            return 4;
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            match m {
                ModelError::Divergence { .. } => return 3,
                ModelError::Spec(_) | ModelError::Architecture(_) | ModelError::Mask(_) => return 2,
                _ => {}
            }
        }
        if matches!(cause.downcast_ref::<EvalError>(), Some(EvalError::Mismatch(_) | EvalError::Folds(_))) {
            return 2;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match cli.command {
        Command::Synth(a) => commands::synth(c, &a),
        Command::Preprocess(a) => commands::preprocess(c, &a),
        Command::Train(a) => commands::train(c, &a),
        Command::Evaluate(a) => commands::evaluate(c, &a),
        Command::Compare(a) => commands::compare(c, &a),
        Command::Transfer(a) => commands::transfer(c, &a),
        Command::Gradcheck(a) => commands::gradcheck(c, &a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
