//! `h4vdm` command-line tool.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use h4vdm::model::FrameWeights;

use failure::{EXIT_CONFIG, EXIT_OK};

/// Video device matching from H.264 codec information.
///
/// Exit codes: 0 ok, 1 unexpected error, 2 bitstream parse error, 3 model/record
/// mismatch, 4 configuration error, 5 data error.
#[derive(Debug, Parser)]
#[command(name = "h4vdm", version, about, long_about = None, after_help = EXIT_CODES)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Serial execution with fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// JSON config file; flags take precedence over it, and it over the preset.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

const EXIT_CODES: &str =
    "Exit codes: 0 ok, 1 unexpected, 2 parse error, 3 model/record mismatch, 4 config error, 5 data error";

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an Annex-B H.264 stream and print NAL, frame and GOP structure as JSON.
    Parse(ParseArgs),
    /// Check GOP records (one record directory or a whole store).
    Validate(ValidateArgs),
    /// Generate a store of synthetic-device GOP records.
    Synth(SynthArgs),
    /// Build train/validation/test pair manifests from a record store.
    Pairs(PairsArgs),
    /// Train a model on pair manifests.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a pair manifest and write metric reports.
    Eval(EvalArgs),
    /// Score two GOP records with a checkpoint.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Annex-B elementary stream.
    pub stream: PathBuf,
    /// Start a GOP at every I frame, not only at IDR frames.
    #[arg(long)]
    pub open_gop: bool,
    /// Write the JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// A record directory or a store root.
    pub path: PathBuf,
    /// Stream the record was decoded from; frame types must agree.
    #[arg(long, value_name = "FILE")]
    pub stream: Option<PathBuf>,
    /// Also check the records are large enough for this preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Segment the stream into GOPs at every I frame.
    #[arg(long)]
    pub open_gop: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Store root to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub devices: usize,
    #[arg(long, default_value_t = 3)]
    pub videos: usize,
    /// GOPs per video.
    #[arg(long, default_value_t = 4)]
    pub gops: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Device ID prefix; IDs are the prefix plus a two-digit index.
    #[arg(long, default_value = "S")]
    pub prefix: String,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long, value_name = "DIR")]
    pub store: PathBuf,
    /// Output directory for train.jsonl, val.jsonl and test.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Shipped split (D1..D7) or a JSON split file with s1 and s2.
    #[arg(long, conflicts_with = "test_devices")]
    pub split: Option<String>,
    /// Comma-separated held-out devices; every other device in the store trains.
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub test_devices: Option<Vec<String>>,
    /// Label-0 pairs per ordered device pair.
    #[arg(long, default_value_t = h4vdm::dataset::DEFAULT_N0)]
    pub n0: usize,
    /// Label-1 pairs per device.
    #[arg(long, default_value_t = h4vdm::dataset::DEFAULT_N1)]
    pub n1: usize,
    /// Fraction of test-device pairs kept.
    #[arg(long, default_value_t = h4vdm::dataset::DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    /// Fraction of training pairs moved to validation.
    #[arg(long, default_value_t = h4vdm::dataset::DEFAULT_VALIDATION_FRACTION)]
    pub validation_fraction: f64,
    /// Subsample without stratifying by label.
    #[arg(long)]
    pub unstratified: bool,
    /// Use at most this many GOPs per video.
    #[arg(long, value_name = "K")]
    pub gops_per_video: Option<usize>,
    /// Preset whose GOP length decides which records are long enough.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameWeightsArg {
    Shared,
    PerFrame,
}

impl From<FrameWeightsArg> for FrameWeights {
    fn from(a: FrameWeightsArg) -> Self {
        match a {
            FrameWeightsArg::Shared => FrameWeights::Shared,
            FrameWeightsArg::PerFrame => FrameWeights::PerFrame,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub store: PathBuf,
    /// Directory holding train.jsonl and val.jsonl.
    #[arg(long, value_name = "DIR")]
    pub pairs: PathBuf,
    /// Output directory for checkpoints and history.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Model preset: s, b, l or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub frame_weights: Option<FrameWeightsArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate reached after warmup.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Per-epoch learning-rate decay factor.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Non-improving epochs before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub store: PathBuf,
    /// Pair manifest to evaluate (usually test.jsonl).
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Output directory for the report files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Select the threshold on these pairs instead of using the checkpoint's.
    #[arg(long, conflicts_with = "threshold")]
    pub select_on_eval: bool,
    /// Fixed decision threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub record_a: PathBuf,
    pub record_b: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
