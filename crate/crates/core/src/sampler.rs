//! Per-study minibatching: every batch holds complexes from a single PMID.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("id '{0}' has no pmid")]
    MissingPmid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub pmid: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: Vec<Vec<Batch>>,
}

impl BatchPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

/// Group by PMID, shuffle within and across groups, then chunk each group.
/// Trailing partial chunks are kept.
pub fn plan_batches(
    train_ids: &[String],
    pmid_of: &BTreeMap<String, String>,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<BatchPlan, SamplerError> {
    if batch_size == 0 {
        return Err(SamplerError::ZeroBatchSize);
    }
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for id in train_ids {
        let pmid = pmid_of
            .get(id)
            .ok_or_else(|| SamplerError::MissingPmid(id.clone()))?;
        groups.entry(pmid.as_str()).or_default().push(id.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut shuffled: Vec<(&str, Vec<String>)> = groups
            .iter()
            .map(|(pmid, ids)| {
                let mut ids = ids.clone();
                ids.shuffle(&mut rng);
                (*pmid, ids)
            })
            .collect();
        shuffled.shuffle(&mut rng);
        let batches = shuffled
            .iter()
            .flat_map(|(pmid, ids)| {
                ids.chunks(batch_size).map(move |chunk| Batch {
                    pmid: pmid.to_string(),
                    ids: chunk.to_vec(),
                })
            })
            .collect();
        plan.push(batches);
    }
    Ok(BatchPlan {
        seed,
        batch_size,
        epochs: plan,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochCoverage {
    pub epoch: usize,
    pub batches: usize,
    pub ids: usize,
    /// Fraction of batches with one member; those get no rank-loss signal.
    pub singleton_fraction: f64,
    /// Number of ids drawn from each PMID.
    pub pmid_histogram: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: Vec<EpochCoverage>,
}

pub fn batch_coverage_report(plan: &BatchPlan) -> CoverageReport {
    let epochs = plan
        .epochs
        .iter()
        .enumerate()
        .map(|(epoch, batches)| {
            let mut pmid_histogram = BTreeMap::new();
            for b in batches {
                *pmid_histogram.entry(b.pmid.clone()).or_insert(0) += b.ids.len();
            }
            let singletons = batches.iter().filter(|b| b.ids.len() == 1).count();
            EpochCoverage {
                epoch,
                batches: batches.len(),
                ids: batches.iter().map(|b| b.ids.len()).sum(),
                singleton_fraction: if batches.is_empty() {
                    0.0
                } else {
                    singletons as f64 / batches.len() as f64
                },
                pmid_histogram,
            }
        })
        .collect();
    CoverageReport {
        seed: plan.seed,
        batch_size: plan.batch_size,
        epochs,
    }
}
