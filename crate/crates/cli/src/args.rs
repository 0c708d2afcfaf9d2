use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbe_core::dataset::Split;
use gbe_core::worldgen::Granularity;

/// Synthetic house navigation: datasets, training, evaluation.
#[derive(Debug, Parser)]
#[command(name = "gbe", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a single house.
    GenWorld(GenWorldArgs),
    /// Generate houses and the four episode splits.
    GenDataset(GenDatasetArgs),
    /// Train a policy on the training split.
    Train(TrainArgs),
    /// Score a checkpoint (or the teacher) on one or more splits.
    Eval(EvalArgs),
    /// Score the uniform-random policy.
    BaselineRandom(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory. Defaults to `$GBE_OUT_DIR/<subcommand>`, or
    /// `runs/<subcommand>` when the variable is unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// JSON file with dataset settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seen (training) houses.
    #[arg(long)]
    pub worlds: Option<usize>,
    /// Houses reserved for the unseen-house split.
    #[arg(long)]
    pub unseen_worlds: Option<usize>,
    /// Training episodes per training object.
    #[arg(long)]
    pub episodes_per_object: Option<usize>,
    /// Instruction levels, e.g. `5` or `1,2,3`.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `gen-dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON file with training settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Drop the oracle-guided exploration term.
    #[arg(long)]
    pub no_ge: bool,
    /// Replace visual features with zeros.
    #[arg(long)]
    pub zero_vision: bool,
    /// Replace the instruction encoding with zeros.
    #[arg(long)]
    pub zero_language: bool,
    /// Rebuild instructions from these levels before training.
    #[arg(long)]
    pub granularity: Option<Granularity>,
    /// Evaluate on `--eval-split` every this many iterations.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value = "val_seen_instruction")]
    pub eval_split: Split,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalAgent {
    Greedy,
    Teacher,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint written by `train`; required for the greedy agent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training config of the checkpoint. Defaults to `train_config.json`
    /// next to it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalAgent::Greedy)]
    pub agent: EvalAgent,
    /// Splits to score; all validation splits when omitted.
    #[arg(long, value_delimiter = ',')]
    pub split: Vec<Split>,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub split: Vec<Split>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only episodes whose shortest path is at least this long.
    #[arg(long, default_value_t = 0.0)]
    pub min_path_length: f64,
    #[command(flatten)]
    pub out: OutArgs,
}
