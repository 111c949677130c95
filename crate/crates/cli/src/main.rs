//! `tfsynth` — phantom generation, penalized autoencoder training,
//! coefficient thresholding experiments and variational reconstruction.
//!
//! Every subcommand that takes `--out` writes only inside that directory
//! and leaves a `resolved-config.txt` snapshot there. Runtime failures
//! print one machine-readable JSON line on stderr and exit 1; usage errors
//! exit 2 (clap).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod opspec;

#[derive(Parser)]
#[command(name = "tfsynth", version, about = "Tight-frame sparse synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of phantoms.
    #[arg(long, default_value_t = 1500)]
    count: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (PGM + raw-f64 per image).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value config file; see FORMATS.md for the key set.
    #[arg(long)]
    config: PathBuf,
    /// Inline overrides, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (metrics.csv, checkpoints/, snapshot).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Weights directory (manifest.json + weights.bin).
    #[arg(long)]
    weights: PathBuf,
    /// Input image (.pgm or .f64).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Fraction of smallest-magnitude coefficients to zero per channel.
    #[arg(long)]
    p: f64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Exempt the coarse low-pass stack from thresholding.
    #[arg(long)]
    skip_coarse: bool,
    /// Exempt the bypass stacks from thresholding.
    #[arg(long)]
    skip_bypass: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Directory of validation images (.f64).
    #[arg(long)]
    val: PathBuf,
    /// Grid as start:end:step or a comma list; default 0.5:0.95:0.05.
    #[arg(long = "p-grid")]
    p_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-image detail CSV.
    #[arg(long)]
    per_image: bool,
    #[arg(long)]
    skip_coarse: bool,
    #[arg(long)]
    skip_bypass: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Weights of the bypass model.
    #[arg(long = "weights-a")]
    weights_a: PathBuf,
    /// Weights of the no-bypass model.
    #[arg(long = "weights-b")]
    weights_b: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long = "p-grid")]
    p_grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Forward operator: identity | mask | blur.
    #[arg(long)]
    operator: String,
    /// Comma-separated operator parameters, e.g.
    /// "fraction=0.5,seed=7" (mask) or "ksize=5,sigma=1.0" (blur).
    #[arg(long = "operator-args", default_value = "")]
    operator_args: String,
    /// Measurement data (.f64 / .pgm); see FORMATS.md for shapes.
    #[arg(long)]
    data: PathBuf,
    /// Penalty weight μ.
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Disable momentum acceleration.
    #[arg(long)]
    no_accel: bool,
    /// Initialization: encode-adjoint | zero.
    #[arg(long, default_value = "encode-adjoint")]
    init: String,
}

#[derive(Args)]
struct FrameCheckArgs {
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random-phantom corpus.
    Generate(GenerateArgs),
    /// Train an autoencoder from a config file.
    Train(TrainArgs),
    /// Encode one image into its coefficient pyramid.
    Encode(EncodeArgs),
    /// Threshold one image's coefficients and reconstruct.
    Threshold(ThresholdArgs),
    /// Sweep thresholding levels over a validation set (ratio CSV).
    Evaluate(EvaluateArgs),
    /// Compare two trained models across a thresholding grid.
    Experiment(ExperimentArgs),
    /// Reconstruct from measurements by proximal gradient descent.
    Solve(SolveArgs),
    /// Probe the filter-bank tight-frame identity.
    FrameCheck(FrameCheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Threshold(a) => commands::threshold(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Solve(a) => commands::solve(a),
        Command::FrameCheck(a) => commands::frame_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
