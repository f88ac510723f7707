//! `ubp`: reproducible jobs over the blur-prior engine.
//!
//! Exit codes: 0 on success, 1 for data and IO problems, 2 for bad
//! configuration or arguments.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ubp_core::eval::GalleryBlur;
use ubp_core::train::Mode;

#[derive(Debug, Parser)]
#[command(name = "ubp", version, about = "Contrastive brain-to-image decoding with an uncertainty-aware blur prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with images, epoch files, a toy feature
    /// cache and a manifest of content hashes.
    Synth(SynthArgs),
    /// Select channels, baseline-correct, crop, decimate and average an
    /// epoch file.
    Preprocess(PreprocessArgs),
    /// Encode a directory of images with the toy encoder at the three blur
    /// levels and write a feature cache.
    ExtractFeatures(ExtractArgs),
    /// Train the brain encoder and write checkpoints plus a JSON-lines log.
    Train(TrainArgs),
    /// Zero-shot retrieval of test samples against the test images.
    Eval(EvalArgs),
    /// Summarize evaluation reports into one CSV table with a mean row.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON job config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "UBP_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `visual` for the 17 occipital/parietal channels, or a comma list of
    /// names or indices.
    #[arg(long)]
    channels: Option<String>,
    /// Pre-stimulus milliseconds at the start of each epoch. They are used
    /// as the baseline and `--window-ms` is measured from stimulus onset.
    #[arg(long, default_value_t = 0.0)]
    prestim_ms: f64,
    /// Window `start,end` in ms after onset.
    #[arg(long, value_parser = parse_window)]
    window_ms: Option<(f64, f64)>,
    /// Keep every n-th sample.
    #[arg(long)]
    factor: Option<usize>,
    /// Average each group of `factor` samples instead of picking one.
    #[arg(long)]
    antialias: bool,
    /// Average repetitions of each image into one sample.
    #[arg(long)]
    average: bool,
    /// Visual channels, 0-1000 ms and decimation by 4 unless overridden.
    #[arg(long)]
    visual_defaults: bool,
    /// Store the output as f16 instead of f32.
    #[arg(long)]
    f16: bool,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Directory of `<id>.ubpi`, `<id>.ppm` or `<id>.pgm` images.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    encoder_seed: u64,
    /// Training config whose r0, c and blur_lambda set the three levels.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON training config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training epoch file. Repeat once per subject in inter mode.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subject left out in inter mode.
    #[arg(long)]
    heldout: Option<String>,
    /// Overrides the config seed.
    #[arg(long, env = "UBP_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Train every pair at the base level.
    #[arg(long)]
    no_blur_prior: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Intra,
    Inter,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Intra => Mode::Intra,
            ModeArg::Inter => Mode::Inter,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test epoch file, usually repetition-averaged.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Directory for `report.json` and `ranks.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Gallery level: base, none, low or high.
    #[arg(long, default_value = "base")]
    gallery_blur: GalleryBlur,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `report.json` files written by `eval`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected start,end")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::ExtractFeatures(a) => commands::extract_features(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
