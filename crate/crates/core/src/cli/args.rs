use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::coding::Head;
use crate::propagation::Profile;

#[derive(Debug, Parser)]
#[command(
    name = "ncp",
    version,
    about = "Architecture search by network coding propagation"
)]
pub struct Cli {
    /// Where to write the run manifest (defaults to <primary output>.manifest.json).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark files: synthetic generation and summaries.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Predictor training.
    #[command(subcommand)]
    Predictor(PredictorCmd),
    /// Propagation searches.
    #[command(subcommand)]
    Search(SearchCmd),
    /// Warm-start propagation on a target task from another task's code.
    Transfer(TransferArgs),
    /// Reference search strategies.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// FLOPs and parameters of a code.
    Flops(FlopsArgs),
    /// Spearman correlation matrix across benchmark files.
    Corr(CorrArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Generate a synthetic benchmark.
    Gen(BenchGenArgs),
    /// Summarize a benchmark file.
    Stats(BenchStatsArgs),
}

#[derive(Debug, Args)]
pub struct BenchGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Task name stored in every record.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    /// Seed for code sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the task parameters (defaults to --seed).
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Derive the task from this task file, sharing its optimum on --shared dims.
    #[arg(long)]
    pub share_with: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub shared: usize,
    /// Also write the task definition (JSON) here.
    #[arg(long)]
    pub task_out: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct BenchStatsArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct GeometryArgs {
    /// Input size HxW for FLOPs.
    #[arg(long, default_value = "128x128")]
    pub input: String,
    #[arg(long, default_value = "seg", value_parser = parse_head)]
    pub head: Head,
    #[arg(long, default_value_t = 19)]
    pub classes: u32,
}

fn parse_head(s: &str) -> Result<Head, String> {
    s.parse::<Head>().map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum PredictorCmd {
    /// Train a predictor on a benchmark file.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics to learn, comma-separated (default: all metrics of the file).
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Validation report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Codes are option indices of a categorical space with these group sizes
    /// (e.g. 5,5,5,5,5,5); they are one-hot encoded.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Args, Clone)]
pub struct PropArgs {
    #[arg(long, conflicts_with = "profile")]
    pub lambda: Option<f64>,
    /// Trade-off preset: S (0.7), M (0.3) or L (0.1).
    #[arg(long)]
    pub profile: Option<Profile>,
    #[arg(long, default_value_t = 3.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 70)]
    pub iters: usize,
    /// Keep the initial targets instead of re-deriving them every iteration.
    #[arg(long)]
    pub fixed_targets: bool,
    #[arg(long, value_enum, default_value_t = StepSpaceArg::Grid)]
    pub step_space: StepSpaceArg,
    #[arg(long, default_value = "acc")]
    pub acc_metric: String,
    #[arg(long, default_value = "flops")]
    pub flops_metric: String,
    /// Trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Result JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepSpaceArg {
    Grid,
    Normalized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Continuous,
    Wta,
}

#[derive(Debug, Subcommand)]
pub enum SearchCmd {
    /// Continuous propagation.
    Continuous(SingleSearchArgs),
    /// Winner-takes-all propagation.
    Wta(SingleSearchArgs),
    /// Joint propagation over several predictors.
    Multi(MultiSearchArgs),
    /// One-hot propagation over a categorical space.
    Onehot(OnehotArgs),
}

#[derive(Debug, Args)]
pub struct SingleSearchArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    /// `default` or 27 comma-separated raw values.
    #[arg(long, default_value = "default")]
    pub init: String,
    #[command(flatten)]
    pub prop: PropArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct MultiSearchArgs {
    /// Comma-separated predictor files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub predictors: Vec<PathBuf>,
    /// Per-task gradient weights (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Continuous)]
    pub strategy: StrategyArg,
    #[arg(long, default_value = "default")]
    pub init: String,
    #[command(flatten)]
    pub prop: PropArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct OnehotArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    /// Group sizes, e.g. 5,5,5,5,5,5.
    #[arg(long, value_delimiter = ',', required = true)]
    pub groups: Vec<usize>,
    /// Initial option index per group (default: option 0 everywhere).
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    pub project_every: usize,
    #[command(flatten)]
    pub prop: PropArgs,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Predictor of the target task.
    #[arg(long)]
    pub predictor: PathBuf,
    /// Source-task optimum: 27 comma-separated raw values.
    #[arg(long)]
    pub source: String,
    #[command(flatten)]
    pub prop: PropArgs,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCmd {
    /// Best of uniformly sampled codes.
    Random(RandomArgs),
    /// Top-k of sampled codes ranked by the predictor.
    Topk(TopkArgs),
    /// Greedy single-edit adaptation.
    Netadapt(NetadaptArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ScoreArgs {
    /// Score with this predictor.
    #[arg(long, required_unless_present = "task")]
    pub predictor: Option<PathBuf>,
    /// Score with this synthetic task's oracle instead.
    #[arg(long, conflicts_with = "predictor")]
    pub task: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Ranked candidates CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, default_value_t = 10)]
    pub keep: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct TopkArgs {
    #[arg(long, default_value_t = 10000)]
    pub budget: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct NetadaptArgs {
    #[arg(long, default_value = "default")]
    pub init: String,
    #[arg(long, default_value_t = 70)]
    pub rounds: usize,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// 27 comma-separated raw values, or `default`.
    #[arg(long)]
    pub code: String,
    /// Per-layer CSV.
    #[arg(long)]
    pub layers: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// Comma-separated benchmark files, one per task.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value = "acc")]
    pub metric: String,
    /// Matrix CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
