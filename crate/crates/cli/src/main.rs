//! `attnae` command line: synthetic data, training, calibration, detection
//! and evaluation for the dual-attention LSTM autoencoder.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use attnae::Error;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "attnae",
    version,
    about = "Dual-attention LSTM autoencoder for sensor anomaly localization"
)]
pub struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream. Falls back to the config file, then ATTNAE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the effective configuration (after flag overrides) to FILE.
    #[arg(long, global = true, value_name = "FILE")]
    pub save_config: Option<PathBuf>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate normal synthetic telemetry: frame.csv, bounds.json, mask.csv.
    Generate(GenerateArgs),
    /// Falsify a frame with reference or custom injections.
    Inject(InjectArgs),
    /// Train a model and write a checkpoint plus its loss curve.
    Train(TrainArgs),
    /// Random hyperparameter search.
    Tune(TuneArgs),
    /// Estimate baseline attention statistics on normal data.
    Calibrate(CalibrateArgs),
    /// Score a frame and write the report bundle.
    Detect(DetectArgs),
    /// Compare detected events with a ground-truth mask.
    Eval(EvalArgs),
    /// Render a markdown summary of a report bundle.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Preset name (default, test, calibration, training, training-full) or an OperationProfile JSON file.
    #[arg(long)]
    pub profile: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Frame CSV to falsify.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Existing ground-truth mask to extend.
    #[arg(long, value_name = "CSV")]
    pub mask: Option<PathBuf>,
    /// Reference layout: drift, spike or concurrent.
    #[arg(long, conflicts_with = "spec")]
    pub scenario: Option<String>,
    /// JSON array of injection specs.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Output directory for frame.csv, mask.csv and injections.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Window length in seconds.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Normal training frame CSV.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Scaler bounds JSON.
    #[arg(long, value_name = "FILE")]
    pub bounds: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Per-epoch loss CSV (default: next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    pub loss_csv: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub bounds: Option<PathBuf>,
    /// Number of sampled combinations.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Epochs per trial.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory for best_hyperparams.json and trials.csv.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Normal frame CSV.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Baseline JSON output path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Fewest windows accepted for the estimate.
    #[arg(long)]
    pub min_windows: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PolicyArgs {
    #[arg(long)]
    pub k_feature: Option<f64>,
    #[arg(long)]
    pub k_temporal: Option<f64>,
    /// Merge runs separated by at most this many seconds.
    #[arg(long)]
    pub hysteresis: Option<usize>,
    /// Drop events shorter than this many seconds.
    #[arg(long)]
    pub min_length: Option<usize>,
    /// Fraction of covering windows needed to flag a second.
    #[arg(long)]
    pub vote: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub baseline: Option<PathBuf>,
    /// Frame CSV to score.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Heatmaps for windows starting at multiples of N; 0 disables.
    #[arg(long, value_name = "N")]
    pub heatmap_stride: Option<usize>,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Report directory holding events.csv and summary.json.
    #[arg(long, value_name = "DIR")]
    pub report: Option<PathBuf>,
    /// Ground-truth mask CSV.
    #[arg(long, value_name = "CSV")]
    pub mask: Option<PathBuf>,
    /// Evaluation interval START:END in seconds (end exclusive).
    #[arg(long, value_parser = parse_interval)]
    pub interval: Option<(usize, usize)>,
    /// Metrics JSON output (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report directory written by `detect`.
    #[arg(long, value_name = "DIR")]
    pub report: Option<PathBuf>,
}

fn parse_interval(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a = a.trim().parse().map_err(|_| format!("bad start `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad end `{b}`"))?;
    Ok((a, b))
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = cli
        .config
        .as_deref()
        .map(RunConfig::load)
        .unwrap_or_else(|| Ok(RunConfig::default()))
        .and_then(|cfg| commands::run(&cli, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
