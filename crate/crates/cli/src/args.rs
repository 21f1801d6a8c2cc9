use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use llsh_core::baselines::CostMethod;
use llsh_core::{Metric, Variant};

#[derive(Debug, Parser)]
#[command(name = "llsh", version, about = "Learnable locality-sensitive hashing for video anomaly detection")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON settings file, layered over the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Only print results and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Where to write the JSON run record.
    #[arg(long, global = true, value_name = "PATH", default_value = "llsh-run.json")]
    pub run_record: PathBuf,

    /// Default hyperparameters: `desk` for the synthetic corpus, `paper` for full-size features.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus (train and test manifests).
    Synth(SynthArgs),
    /// Train hash layers contrastively and save the query encoder.
    Train(TrainArgs),
    /// Hash training features into an index.
    Index(IndexArgs),
    /// Score test videos and write one `frame_index,score` CSV per video.
    Score(ScoreArgs),
    /// Frame-level ROC-AUC of score CSVs against labels.
    Eval(EvalArgs),
    /// Exhaustive baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Multiplication counts of each method.
    Cost(CostArgs),
    /// Collision-probability curves and Monte-Carlo checks.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Bucket statistics of an index file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "default")]
    pub preset: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct EncoderShape {
    /// Bits per table (r).
    #[arg(long)]
    pub code_len: Option<usize>,
    /// Number of tables (b).
    #[arg(long)]
    pub tables: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairMode {
    /// Temporal neighbours when the features carry frame spans, jitter otherwise.
    Auto,
    Temporal,
    Jitter,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub train: PathBuf,
    /// Output encoder file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Start from this encoder instead of a seeded random one.
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub shape: EncoderShape,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub queue_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, value_enum, default_value = "auto")]
    pub pairs: PairMode,
    /// Write the per-step loss as `step,loss` CSV.
    #[arg(long, value_name = "PATH")]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub train: PathBuf,
    /// Encoder file; written first when `--init-random` is given.
    #[arg(long, value_name = "PATH")]
    pub encoder: PathBuf,
    /// Create a seeded random encoder (plain LSH) at `--encoder`.
    #[arg(long)]
    pub init_random: bool,
    #[command(flatten)]
    pub shape: EncoderShape,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct SeriesArgs {
    /// Gaussian smoothing sigma in frames (0 disables).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Min-max normalize each video's scores.
    #[arg(long)]
    pub minmax: bool,
    #[arg(long)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FingerprintMode {
    Strict,
    Warn,
    Skip,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub test: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub encoder: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub series: SeriesArgs,
    /// Distance used for tables without a matching bucket (default sqrt(r)).
    #[arg(long)]
    pub sentinel: Option<f64>,
    #[arg(long, value_enum, default_value = "strict")]
    pub fingerprint: FingerprintMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Micro,
    Macro,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub scores_dir: PathBuf,
    /// Directory of `<video>.csv` label files.
    #[arg(long, value_name = "DIR", conflicts_with = "test", required_unless_present = "test")]
    pub labels_dir: Option<PathBuf>,
    /// Test manifest whose label files are used instead of `--labels-dir`.
    #[arg(long, value_name = "MANIFEST")]
    pub test: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub protocol: Protocol,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Mean distance to the K nearest training features.
    Knn(KnnArgs),
    /// Distance to the nearest of K Lloyd centers.
    Kmeans(KmeansArgs),
}

#[derive(Debug, Args)]
pub struct BaselineData {
    #[arg(long, value_name = "MANIFEST")]
    pub train: PathBuf,
    #[arg(long, value_name = "MANIFEST")]
    pub test: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub series: SeriesArgs,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    #[command(flatten)]
    pub data: BaselineData,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KmeansArgs {
    #[command(flatten)]
    pub data: BaselineData,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    /// Maximum Lloyd iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, required_unless_present = "paper_table")]
    pub method: Option<CostMethod>,
    /// Comma-separated `key=value` list, e.g. `d=9216,N=792855,M=112422`.
    #[arg(long, requires = "method")]
    pub params: Option<String>,
    /// Print the efficiency comparison on the large benchmark.
    #[arg(long, conflicts_with = "method")]
    pub paper_table: bool,
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Collision probability against similarity for one (r, b).
    Curve(CurveArgs),
    /// Monte-Carlo collision rate of random encoders at a fixed angle.
    Mc(McArgs),
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, short = 'r')]
    pub r: u32,
    #[arg(long, short = 'b')]
    pub b: u32,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    /// Also write the curve as CSV.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Angle between the pair, in radians.
    #[arg(long, conflicts_with = "similarity", required_unless_present = "similarity")]
    pub alpha: Option<f64>,
    /// Angular similarity (pi - alpha) / pi.
    #[arg(long)]
    pub similarity: Option<f64>,
    #[arg(long, short = 'r')]
    pub r: u32,
    #[arg(long, short = 'b')]
    pub b: u32,
    #[arg(long, short = 'd', default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// Check the index against this encoder's fingerprint.
    #[arg(long, value_name = "PATH")]
    pub encoder: Option<PathBuf>,
}
