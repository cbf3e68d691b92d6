//! `smgarn` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing or unreadable inputs, checkpoint mismatch), 3 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smgarn::Error;

#[derive(Parser, Debug)]
#[command(
    name = "smgarn",
    version,
    about = "Snow removal with mask-guided attentive residual networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset.
    Synth(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Score a checkpoint (or the identity map) on a dataset with gt/.
    Eval(EvalArgs),
    /// Desnow one image or every image in a directory.
    Infer(InferArgs),
    /// Train and score every variant of an ablation grid.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub size: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Key-value file overriding the default synthesis parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "identity", conflicts_with = "identity")]
    pub ckpt: Option<PathBuf>,
    /// Score the snowy inputs unchanged.
    #[arg(long)]
    pub identity: bool,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `report.csv` and `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the predicted snow mask as `<name>_mask.png`.
    #[arg(long)]
    pub save_mask: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Scored after training; defaults to the training data.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::ConfigLine { .. } | Error::Registry { .. } | Error::Parameter(_) => 1,
            Error::Dataset(_)
            | Error::Pairing { .. }
            | Error::Size(_)
            | Error::Dimension(_)
            | Error::Checkpoint(_)
            | Error::Format(_)
            | Error::Io { .. }
            | Error::Image { .. } => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
