use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod parse;

#[derive(Parser)]
#[command(
    name = "fitv",
    version,
    about = "Two-stage video denoising: synthesize, noise, train, denoise and score"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Render a clean synthetic sequence and record it in a manifest
    Synth(SynthArgs),
    /// Corrupt a sequence with seeded noise
    AddNoise(AddNoiseArgs),
    /// Train a network over the sequences of a manifest
    Train(TrainArgs),
    /// Denoise every frame of a sequence with a checkpoint
    Denoise(DenoiseArgs),
    /// PSNR, SSIM and AD of predicted frames against clean ones
    Evaluate(EvaluateArgs),
    /// AD statistics with patch-box overlays and Sobel maps
    AdReport(AdReportArgs),
    /// Finite-difference check of every operation and both networks
    GradCheck(GradCheckArgs),
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    /// Frame size as HxW
    #[arg(long, default_value = "64x64", value_parser = parse::size)]
    pub size: (usize, usize),
    /// Object size as HxW
    #[arg(long, default_value = "16x16", value_parser = parse::size)]
    pub object: (usize, usize),
    /// Pixels per frame as VX,VY
    #[arg(long, default_value = "2,1", value_parser = parse::pair, allow_hyphen_values = true)]
    pub velocity: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest to add the sequence to [default: OUT/manifest.jsonl]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Manifest id [default: name of OUT]
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Awgn,
    Mixed,
}

#[derive(Args, Serialize)]
pub struct AddNoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Awgn)]
    pub kind: KindArg,
    /// Gaussian sigma on the 0-255 scale [default: 25 for awgn, 25.5 for mixed]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fraction of pixels set to 0 or 1 [default: 0 for awgn, 0.10 for mixed]
    #[arg(long)]
    pub sp_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "base", value_parser = parse::variant)]
    #[serde(serialize_with = "parse::display")]
    pub variant: fitv::train::Variant,
    /// First-stage loss coefficient [default: 10 for unsupervised, else 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 40)]
    pub epochs: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 96)]
    pub patch: usize,
    /// Training sigma range LO,HI on the 0-255 scale
    #[arg(long, default_value = "5,80", value_parser = parse::pair, conflicts_with = "mixed")]
    pub sigma_range: (f64, f64),
    /// Train on the Gaussian plus salt-and-pepper mixture instead
    #[arg(long)]
    pub mixed: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint, rewritten after every epoch
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log, one line per iteration [default: OUT with .loss.txt appended]
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Noise level for the noise map, on the 0-255 scale
    #[arg(long)]
    pub sigma: f64,
    /// Also write the five stage-1 outputs behind every output frame
    #[arg(long)]
    pub dump_stage1: bool,
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    /// JSON report path
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Serialize)]
pub struct AdReportArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    /// Directory for overlays, Sobel maps and ad_report.json
    #[arg(long)]
    pub boxes_out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flip the sign of one backward rule to confirm the check catches it
    #[arg(long, value_parser = parse::op_kind)]
    #[serde(serialize_with = "parse::display_opt")]
    pub inject_fault: Option<fitv::tensor::OpKind>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FITV_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match serde_json::to_string(&cli.command) {
        Ok(json) => println!("config {json}"),
        Err(e) => log::warn!("could not serialize the configuration: {e}"),
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::AddNoise(a) => commands::add_noise(a),
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AdReport(a) => commands::ad_report(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
