use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use placerank::rerank::{CorrelationMode, ALPHA_512, DEFAULT_BETA};

#[derive(Debug, Parser)]
#[command(name = "placerank", version, about = "Region-based re-ranking for place recognition")]
pub struct Cli {
    /// Increase log output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bundle with planted landmark matches.
    GenSynthetic(GenSyntheticArgs),
    /// Build a bundle from spatial descriptor maps and region proposals.
    Encode(EncodeArgs),
    /// Score sliding-window boxes over edge groups and keep the best.
    ScoreBoxes(ScoreBoxesArgs),
    /// Retrieve the top-K database images for every query.
    Retrieve(RetrieveArgs),
    /// Train the match-probability model.
    TrainPdl(TrainPdlArgs),
    /// Re-rank candidate lists with a trained model.
    Rerank(RerankArgs),
    /// Compare recall@N of a baseline and a re-ranked ordering.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, default_value_t = 2000)]
    pub db: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub regions: usize,
    #[arg(long, default_value_t = 1.4)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub distractors: usize,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Image list: queries, database and optional ground truth.
    #[arg(long)]
    pub images: PathBuf,
    /// Directory holding `<id>.mqbl` spatial descriptor maps.
    #[arg(long)]
    pub maps: PathBuf,
    /// Cluster center matrix (with its `.json` sidecar).
    #[arg(long)]
    pub centers: PathBuf,
    /// Fit PCA whitening on database globals and reduce to this size.
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreBoxesArgs {
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = placerank::edgebox::DEFAULT_KAPPA)]
    pub kappa: f64,
    #[arg(long, default_value_t = placerank::edgebox::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = placerank::edgebox::DEFAULT_AFFINITY_THRESHOLD)]
    pub affinity_threshold: f64,
    #[arg(long, default_value_t = placerank::edgebox::DEFAULT_INNER_FRACTION)]
    pub inner_fraction: f64,
    /// Number of boxes to keep.
    #[arg(short = 'n', long = "n", default_value_t = placerank::bundle::DEFAULT_REGIONS)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0.65)]
    pub iou: f64,
    /// Window stride in pixels (default: 1/20 of the shorter side).
    #[arg(long)]
    pub step: Option<f64>,
    /// Window widths in pixels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Height / width ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub aspects: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = placerank::bundle::DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Bagged,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Literal,
    Distance,
}

impl From<Mode> for CorrelationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Literal => CorrelationMode::Literal,
            Mode::Distance => CorrelationMode::Distance,
        }
    }
}

/// Feature construction flags shared by training and re-ranking.
#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Candidate document (default: candidates stored in the bundle).
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Truncate candidate lists to the first K entries.
    #[arg(long)]
    pub k: Option<usize>,
    /// Query index range `start:end` into the bundle's query list.
    #[arg(long)]
    pub queries: Option<String>,
    /// Candidate regions per pair (default: min(10, fewest regions in the bundle)).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = Mode::Literal)]
    pub mode: Mode,
    /// Skip L2 normalization of descriptor rows before correlation.
    #[arg(long)]
    pub raw_rows: bool,
}

#[derive(Debug, Args)]
pub struct TrainPdlArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModelKind::Bagged)]
    pub kind: ModelKind,
    #[arg(long, default_value_t = placerank::pdl::DEFAULT_MIN_LEAF)]
    pub min_leaf: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = ALPHA_512)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Bundle providing ground truth (unless `--gt` is given).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Standalone ground-truth document.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Candidate document or re-rank output.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Candidate document or re-rank output.
    #[arg(long)]
    pub reranked: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = placerank::eval::DEFAULT_NS)]
    pub ns: Vec<usize>,
    /// Recall table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Recall curve CSV (one column per method).
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Per-N delta CSV.
    #[arg(long)]
    pub deltas: Option<PathBuf>,
    /// Comma-separated query ids to evaluate (default: queries present in both files).
    #[arg(long, value_delimiter = ',')]
    pub queries: Option<Vec<String>>,
}
