//! Command line arguments. Every argument struct is serializable so a run can
//! be written out as a resolved configuration and replayed with `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "microiqa", version, about = "No-reference image quality assessment for optical microscopy")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory that receives every output.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for per-image stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file mirroring the flags; flags given on the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "snake_case")]
pub enum Command {
    /// Render clean synthetic structures.
    Simulate(SimulateArgs),
    /// Build a degraded corpus and its manifest.
    Degrade(DegradeArgs),
    /// Estimate single-image FRC resolution.
    Frc(FrcArgs),
    /// Attach FRC or external labels to a manifest.
    Label(LabelArgs),
    /// Train a model on a labeled manifest.
    Train(TrainArgs),
    /// Predict quality scores and per-patch maps.
    Predict(PredictArgs),
    /// Rank images by predicted quality.
    Rank(RankArgs),
    /// Grouped rank correlation between predictions and artifact levels.
    Krcc(KrccArgs),
    /// Regression of predictions against labels.
    Report(ReportArgs),
    /// Compare direct FRC and model prediction wall-clock.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Degrade(_) => "degrade",
            Command::Frc(_) => "frc",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Rank(_) => "rank",
            Command::Krcc(_) => "krcc",
            Command::Report(_) => "report",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    F32,
    Png,
    Tif,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Structure classes to render (disks, filaments, blobs, rings, grid, mixed).
    #[arg(long = "kind", value_delimiter = ',', default_value = "mixed")]
    pub kind: Vec<String>,
    /// Fields of view per class.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    /// JSON list of structure specs, used instead of the presets.
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::F32)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
    Noisefree,
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DegradeArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Corpus the noisefree and graded presets derive from.
    #[arg(long, value_enum, default_value_t = Base::Desk)]
    pub base: Base,
    /// Directory of clean experimental images; one directory per sample.
    #[arg(long)]
    pub experimental: Vec<PathBuf>,
    /// Recipe JSON replacing the preset entirely.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Output subdirectory (default: the recipe name).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FrcArgs {
    /// Image files.
    pub inputs: Vec<PathBuf>,
    /// Manifest whose entries are measured.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "frc.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LabelArgs {
    /// Manifest to label; updated in place.
    #[arg(long)]
    pub manifest: PathBuf,
    /// `id,label` CSV of external scores; FRC labels are computed otherwise.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Name of the external target.
    #[arg(long, default_value = "external_score")]
    pub target_name: String,
    /// External scores grow with quality.
    #[arg(long)]
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    Final,
    BestValidation,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    /// Patches per optimizer step.
    #[arg(long, default_value_t = 128)]
    pub batch_patches: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value_t = Checkpoint::Final)]
    pub checkpoint: Checkpoint,
    /// Divide every layer width by this factor (1 = full model).
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    #[arg(long, default_value = "model.bin")]
    pub model_out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image files.
    pub inputs: Vec<PathBuf>,
    /// Manifest whose entries are predicted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict manifest entries to one split (train, val, test, predict).
    #[arg(long)]
    pub split: Option<String>,
    /// Also render heatmap overlays of both maps.
    #[arg(long)]
    pub heatmaps: bool,
    #[arg(long, default_value = "predictions.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankArgs {
    /// Predictions CSV written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Manifest supplying level and sample columns.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score direction (default: read from the predictions metadata).
    #[arg(long, value_enum)]
    pub order: Option<Order>,
    #[arg(long, default_value = "ranking.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KrccArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Manifest with artifact levels.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub order: Option<Order>,
    #[arg(long, default_value = "krcc.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Manifest with labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model whose label statistics normalize both axes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub output: PathBuf,
    #[arg(long, default_value = "scatter.csv")]
    pub scatter: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Synthetic images to time.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value = "bench.json")]
    pub output: PathBuf,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub global: GlobalArgs,
    #[serde(flatten)]
    pub command: Command,
}
