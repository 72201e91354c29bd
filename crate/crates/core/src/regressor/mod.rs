//! He-initialized MLP affinity head over embedding vectors, concatenation
//! fusion of several embedding sources, and minibatch training on the
//! composite loss.

mod embedding;
mod mlp;
mod optim;
mod train;

use thiserror::Error;

pub use embedding::{fuse, EmbeddingTable, Standardizer};
pub use mlp::{Activation, ForwardCache, Gradients, MlpHead};
pub use optim::{Optimizer, OptimizerKind, OptimizerSettings};
pub use train::{
    metric_log_csv, plan_for, predict, train, write_metric_log, AffinityModel, EpochLog, SourceSpec,
    TrainConfig, TrainOutcome, CHECKPOINT_BLOB, CHECKPOINT_META, DEFAULT_HIDDEN,
};

use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::sampler::SamplerError;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("embedding table '{table}' has no entry for '{id}'")]
    Alignment { table: String, id: String },
    #[error("no embedding table named '{0}' was supplied")]
    MissingTable(String),
    #[error("id '{0}' is not in the dataset")]
    UnknownId(String),
    #[error("forward cache does not match this head")]
    StaleCache,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (pmid {pmid}): {detail}")]
    NanLoss {
        epoch: usize,
        batch: usize,
        pmid: String,
        detail: String,
    },
    #[error("batch plan does not match training set: {0}")]
    PlanMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}
