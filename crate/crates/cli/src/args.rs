use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppi_affinity::ingest::Format;
use ppi_affinity::losses::{RankVariant, DEFAULT_DELTA, DEFAULT_LAMBDA};
use ppi_affinity::regressor::OptimizerKind;
use ppi_affinity::splitter::{DEFAULT_CAP_FACTOR, DEFAULT_TAU, DEFAULT_TEST_RATIO, DEFAULT_VAL_FRACTION};

#[derive(Debug, Parser)]
#[command(name = "ppi-affinity", version, about = "Leakage-aware splits and affinity-head training over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a connected-component split and audit it for leakage.
    Split(SplitCmd),
    /// Train an affinity head on one or more embedding tables.
    Train(TrainCmd),
    /// Score a checkpoint on one side of a split.
    Eval(EvalCmd),
    /// Train a concatenation-fusion model and compare it with single-source runs.
    Fuse(FuseCmd),
    /// Build the PMID batch plan for a split and report its coverage.
    BatchAudit(AuditCmd),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Fuse(_) => "fuse",
            Command::BatchAudit(_) => "batch-audit",
        }
    }
}

/// `name=path`, used for embedding tables and baseline reports.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

impl FromStr for NamedPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(NamedPath {
                name: name.to_string(),
                path: PathBuf::from(path),
            }),
            _ => Err(format!("expected name=path, got '{s}'")),
        }
    }
}

impl fmt::Display for NamedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.name, self.path.display())
    }
}

/// Comma-separated hidden widths; `none` for a direct linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden(pub Vec<usize>);

impl FromStr for Hidden {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Hidden(Vec::new()));
        }
        s.split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("invalid hidden width '{w}'")),
                Ok(v) => Ok(v),
            })
            .collect::<Result<_, _>>()
            .map(Hidden)
    }
}

impl fmt::Display for Hidden {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSide {
    Train,
    Validation,
    Test,
}

impl fmt::Display for EvalSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalSide::Train => "train",
            EvalSide::Validation => "validation",
            EvalSide::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataOpts {
    /// Complex table (CSV or JSONL).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Input format; inferred from the extension when absent.
    #[arg(long)]
    pub format: Option<Format>,
    /// File of ids to drop before anything else, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key = value file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SplitOpts {
    /// Existing split JSON; when absent the split is computed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Edge threshold on the mean per-chain edit distance.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_TEST_RATIO)]
    pub test_ratio: f64,
    /// Test set may grow to cap * test-ratio * n.
    #[arg(long = "cap", default_value_t = DEFAULT_CAP_FACTOR)]
    pub cap: f64,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    /// Directory for the pairwise distance cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// Embedding table as name=path; repeat for several sources.
    #[arg(long = "embeddings", value_name = "NAME=PATH")]
    pub embeddings: Vec<NamedPath>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = RankVariant::Surrogate)]
    pub rank_variant: RankVariant,
    #[arg(long, default_value_t = ppi_affinity::sampler::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Hidden widths, e.g. 64,64 or none.
    #[arg(long)]
    pub hidden: Option<Hidden>,
    /// Feed raw embeddings instead of train-fitted z-scores.
    #[arg(long)]
    pub no_standardize: bool,
    /// Also write the batch plan as JSON.
    #[arg(long)]
    pub dump_batch_plan: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SplitCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub split: SplitOpts,
}

#[derive(Debug, Clone, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub split: SplitOpts,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Clone, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub split: SplitOpts,
    /// Directory holding model.json and model.bin.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "embeddings", value_name = "NAME=PATH")]
    pub embeddings: Vec<NamedPath>,
    #[arg(long, value_enum, default_value_t = EvalSide::Test)]
    pub on: EvalSide,
    /// CSV file to append a result row to.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FuseCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub split: SplitOpts,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Route the concatenation through the hidden layers instead of a single linear map.
    #[arg(long)]
    pub through_mlp: bool,
    /// Prior eval.json for a single-source model, as name=path.
    #[arg(long = "baseline", value_name = "NAME=PATH")]
    pub baselines: Vec<NamedPath>,
    /// Train one single-source model per table with the same settings.
    #[arg(long)]
    pub train_baselines: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AuditCmd {
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub split: SplitOpts,
    #[arg(long, default_value_t = ppi_affinity::sampler::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
}
