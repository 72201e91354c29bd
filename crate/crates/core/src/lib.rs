//! Protein-protein binding-affinity regression over precomputed complex
//! embeddings: dataset ingestion, similarity-graph splitting, PMID-grouped
//! batching, a Huber + pairwise-ranking objective, an MLP/fusion head, and
//! correlation metrics.

pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod regressor;
pub mod sampler;
pub mod seed;
pub mod splitter;
pub mod synthetic;

pub use ingest::{Complex, Dataset, Format};
pub use losses::{LossConfig, RankVariant};
pub use metrics::EvalReport;
pub use regressor::{AffinityModel, EmbeddingTable, MlpHead, TrainConfig};
pub use sampler::BatchPlan;
pub use splitter::{SplitAssignment, SplitConfig};
