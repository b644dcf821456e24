use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "gta", version, about = "Ground-truth test analysis for ultrasonic parking-space detections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze drives and write per-drive decisions and a report.
    Analyze(AnalyzeArgs),
    /// Vary the low-confidence threshold and tabulate f1 against review effort.
    Sweep(SweepArgs),
    /// Interactive console guide.
    Guide(GuideArgs),
    /// Analyze drives and serve them for human review.
    Serve(ServeArgs),
    /// Generate synthetic drives with ground truth.
    Gen(GenArgs),
    /// Convert trace files into bundle directories.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// Recorded scores when the bundle has them, synthetic otherwise.
    Auto,
    Recorded,
    Synthetic,
}

/// Settings shared by every command that runs the pipeline. Each one can
/// also be set in the config file; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Confidence at or below which a decision is flagged for review.
    #[arg(long, value_name = "X")]
    pub lc_threshold: Option<f64>,
    /// Weight frames by the street length they cover when averaging.
    #[arg(long)]
    pub length_weighted: bool,
    #[arg(long, value_enum)]
    pub provider: Option<Provider>,
    /// Seed of the synthetic score provider.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drives analyzed concurrently.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Fixed `generated_at` (Unix seconds) for reproducible reports.
    #[arg(long, value_name = "SECS")]
    pub pin_timestamp: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Bundle directories or trace files.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: Options,
    /// Score decisions against each bundle's truth.csv.
    #[arg(long)]
    pub truth: bool,
    #[arg(long, default_value = "gta-report")]
    pub out: PathBuf,
    /// Start the review service after the analysis.
    #[arg(long)]
    pub serve: bool,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: Options,
    #[arg(long, default_value = "gta-report")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub from: f64,
    #[arg(long, default_value_t = 1.0)]
    pub to: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GuideArgs {
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: Options,
    #[arg(long, default_value = "gta-report")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Layout spec files (JSON).
    #[arg(long, value_name = "FILE")]
    pub spec: Vec<PathBuf>,
    /// Number of random layouts, seeded from --seed upwards.
    #[arg(long, value_name = "N")]
    pub random: Option<u64>,
    /// The stalled-at-a-traffic-light drive.
    #[arg(long)]
    pub traffic_light: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frame period of random and traffic-light drives.
    #[arg(long, default_value_t = 100.0)]
    pub frame_period_ms: f64,
    #[arg(long, default_value = "gta-drives")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Trace files, optionally gzip-compressed.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value = "gta-drives")]
    pub out: PathBuf,
}
