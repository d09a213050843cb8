// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use steerkit::runtime::Positions;
use steerkit::toy::ToyConfig;

#[derive(Debug, Parser)]
#[command(name = "steerkit", version, about = "Contrastive activation steering toolkit")]
pub struct Cli {
    /// Run manifest path. Defaults to `<out>.run.json`, or
    /// `steerkit-<command>.run.json` for commands without `--out`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a steer-sample corpus with the four-agent pipeline.
    GenSamples(GenSamplesArgs),
    /// Run a corpus through the toy transformer and store paired activations.
    ToyExtract(ToyExtractArgs),
    /// Select a layer and build strategy profiles from a dataset.
    Build(BuildArgs),
    /// Generate from the toy model with anchor-matched steering.
    Steer(SteerArgs),
    /// A/B accuracy of the toy model, optionally steered.
    Eval(EvalArgs),
    /// Accuracy over a grid of fixed α or β multipliers.
    SweepStrength(SweepStrengthArgs),
    /// Accuracy with profiles rebuilt at each listed layer.
    SweepLayers(SweepLayersArgs),
    /// Print bundles side by side: α per algorithm, layers, assigned counts.
    Inspect(InspectArgs),
    /// Write a synthetic dataset with known steering directions.
    Plant(PlantArgs),
    /// Re-run the command recorded in a run manifest and compare outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSamples(_) => "gen-samples",
            Command::ToyExtract(_) => "toy-extract",
            Command::Build(_) => "build",
            Command::Steer(_) => "steer",
            Command::Eval(_) => "eval",
            Command::SweepStrength(_) => "sweep-strength",
            Command::SweepLayers(_) => "sweep-layers",
            Command::Inspect(_) => "inspect",
            Command::Plant(_) => "plant",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub max_seq: usize,
    /// Weight seed of the toy model.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> ToyConfig {
        ToyConfig {
            vocab: self.vocab,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            max_seq: self.max_seq,
            seed: self.model_seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SteerOpts {
    /// Global strength multiplier. Defaults to the bundle's value.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Minimum anchor cosine for an intervention.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub match_threshold: f64,
    /// `all-positions` or `generated-only`.
    #[arg(long, default_value = "all-positions", value_parser = parse_positions)]
    pub positions: Positions,
}

fn parse_positions(s: &str) -> Result<Positions, String> {
    s.parse().map_err(|e: steerkit::runtime::RuntimeError| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[group(required = true, multiple = false)]
pub struct ItemSource {
    /// A/B items as JSON lines.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Corpus file; items are derived with a balanced seeded shuffle.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenSamplesArgs {
    /// `mock:<fixture-dir>`, `live:<endpoint-config>` (or bare `live` with
    /// MASTEER_CLIENT_CONFIG set) or `synthetic:<seed>`.
    #[arg(long)]
    pub client: String,
    #[arg(long, default_value = "truthfulness")]
    pub issue: String,
    #[arg(long, default_value_t = 10)]
    pub categories: usize,
    #[arg(long, default_value_t = 10)]
    pub scopes: usize,
    #[arg(long, default_value_t = 10)]
    pub refs: usize,
    #[arg(long, default_value_t = 3)]
    pub parse_retries: usize,
    #[arg(long, default_value_t = 3)]
    pub rewrite_cap: usize,
    #[arg(long, default_value_t = 3)]
    pub fetch_rounds: usize,
    /// Corpus output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Run report. Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Request log. Defaults to `<out>.transcript.jsonl`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Also store every reply as a replayable fixture in this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ToyExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Dataset output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BuildArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Bundle output file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = steerkit::builder::DEFAULT_TAU)]
    pub tau: f64,
    /// Use this layer instead of selecting one.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "md,lr,pca,kmeans")]
    pub algorithms: Vec<String>,
    /// Print the construction report.
    #[arg(long)]
    pub report: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SteerArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 16)]
    pub max_new: usize,
    #[command(flatten)]
    pub steer: SteerOpts,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON result file; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ItemSource,
    /// Seed for the A/B shuffle when reading a corpus.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Steer with this bundle; unsteered when absent.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub steer: SteerOpts,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Every profile's α replaced by the grid value.
    Alpha,
    /// Profiles keep α; β takes the grid value.
    Beta,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepStrengthArgs {
    #[command(flatten)]
    pub source: ItemSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepMode::Beta)]
    pub mode: SweepMode,
    /// Strictly increasing values, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub match_threshold: f64,
    #[arg(long, default_value = "all-positions", value_parser = parse_positions)]
    pub positions: Positions,
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepLayersArgs {
    #[command(flatten)]
    pub source: ItemSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory the profiles are rebuilt from.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = steerkit::builder::DEFAULT_TAU)]
    pub tau: f64,
    /// Layers to evaluate, comma separated; all layers when absent.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "md,lr,pca,kmeans")]
    pub algorithms: Vec<String>,
    #[command(flatten)]
    pub steer: SteerOpts,
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    /// One direction on one layer.
    Single,
    /// Two orthogonal concepts sharing a category.
    TwoConcepts,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlantArgs {
    #[arg(long, value_enum, default_value_t = PlantKind::Single)]
    pub kind: PlantKind,
    /// Signal layer for `single`.
    #[arg(long, default_value_t = 5)]
    pub layer: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
