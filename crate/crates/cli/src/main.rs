//! `uld`: synthetic data, preprocessing, training, inference and FROC evaluation.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "uld", version, about = "Anchor-free universal lesion detection on CT")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic CT dataset.
    Synth(SynthArgs),
    /// Resample, clip and window volumes into network-ready tensors.
    Preprocess(PreprocessArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Write a detections table from a checkpoint.
    Infer(InferArgs),
    /// FROC tables from detections and annotations.
    Eval(EvalArgs),
    /// SVG plot of a FROC table.
    Plot(PlotArgs),
}

/// Options shared by commands that read an experiment config.
#[derive(Args, Debug, Clone)]
pub struct ExperimentArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of HU windows: 1, 3 or 5.
    #[arg(long, value_parser = ["1", "3", "5"])]
    pub windows: Option<String>,
    /// Attention fusion on or off.
    #[arg(long, value_parser = ["on", "off"])]
    pub attention: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub images: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Dataset directory with `volumes/` and `annotations.csv`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Dataset directory; the synthetic split of the config is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint whose backbone and pyramid weights initialize the model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; the synthetic split of the config is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which synthetic split to run on.
    #[arg(long, default_value = "val", value_parser = ["train", "val"])]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gts: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    pub fp_points: Vec<f64>,
    /// IoU needed for a hit.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `froc.csv` written by `eval`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    pub fp_points: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plot(a) => commands::plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
