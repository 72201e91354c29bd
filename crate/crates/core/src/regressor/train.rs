//! Minibatch training of the affinity head, prediction, and checkpoint I/O.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embedding::{fuse, EmbeddingTable, Standardizer};
use super::mlp::{Gradients, MlpHead};
use super::optim::{Optimizer, OptimizerKind, OptimizerSettings};
use super::RegressorError;
use crate::ingest::Dataset;
use crate::losses::{composite_loss, LossConfig};
use crate::metrics::EvalReport;
use crate::sampler::{plan_batches, BatchPlan};
use crate::seed::{derive_seed, BATCHING_STREAM, INIT_STREAM};
use crate::splitter::SplitAssignment;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Root seed; initialization and batching use derived sub-streams.
    pub seed: u64,
    pub loss: LossConfig,
    pub batch_size: usize,
    /// Hidden widths. Empty means a single affine map to the output.
    pub hidden: Vec<usize>,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            loss: LossConfig::default(),
            batch_size: crate::sampler::DEFAULT_BATCH_SIZE,
            hidden: DEFAULT_HIDDEN.to_vec(),
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(RegressorError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(RegressorError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(RegressorError::InvalidConfig("weight decay must be non-negative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(RegressorError::InvalidConfig("hidden widths must be positive".into()));
        }
        self.loss.validate()?;
        Ok(())
    }

    fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub dim: usize,
}

/// A trained predictor: which embedding sources it reads (in concatenation
/// order), the optional input scaling, and the head. With several sources the
/// head's first affine layer is the fusion projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityModel {
    pub sources: Vec<SourceSpec>,
    pub standardizer: Option<Standardizer>,
    pub head: MlpHead,
}

fn select_tables<'a>(
    sources: &[SourceSpec],
    tables: &[&'a EmbeddingTable],
) -> Result<Vec<&'a EmbeddingTable>, RegressorError> {
    sources
        .iter()
        .map(|s| {
            let t = tables
                .iter()
                .find(|t| t.name() == s.name)
                .ok_or_else(|| RegressorError::MissingTable(s.name.clone()))?;
            if t.dim() != s.dim {
                return Err(RegressorError::Shape(format!(
                    "table '{}' has dim {}, model expects {}",
                    s.name,
                    t.dim(),
                    s.dim
                )));
            }
            Ok(*t)
        })
        .collect()
}

impl AffinityModel {
    pub fn input_dim(&self) -> usize {
        self.sources.iter().map(|s| s.dim).sum()
    }

    fn features(&self, tables: &[&EmbeddingTable], id: &str) -> Result<Vec<f64>, RegressorError> {
        let raw = fuse(tables, id)?;
        Ok(match &self.standardizer {
            Some(s) => s.apply(&raw),
            None => raw,
        })
    }

    pub fn write_checkpoint(&self, dir: &Path) -> Result<(), RegressorError> {
        fs::create_dir_all(dir).map_err(|source| RegressorError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            sources: self.sources.clone(),
            layer_dims: self.head.layer_dims().to_vec(),
            activation: self.head.activation(),
            standardized: self.standardizer.is_some(),
            parameters: self.head.parameter_count(),
            blob: CHECKPOINT_BLOB.to_string(),
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        json.push('\n');
        let mut blob = Vec::new();
        let mut put = |values: &[f64]| {
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (w, b) in self.head.weights().iter().zip(self.head.biases()) {
            put(w);
            put(b);
        }
        if let Some(s) = &self.standardizer {
            put(&s.mean);
            put(&s.std);
        }
        write_file(&dir.join(CHECKPOINT_META), json.as_bytes())?;
        write_file(&dir.join(CHECKPOINT_BLOB), &blob)
    }

    pub fn read_checkpoint(dir: &Path) -> Result<Self, RegressorError> {
        let meta_path = dir.join(CHECKPOINT_META);
        let text = fs::read_to_string(&meta_path).map_err(|source| RegressorError::Io {
            path: meta_path.display().to_string(),
            source,
        })?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| RegressorError::Format(format!("{}: {e}", meta_path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(RegressorError::Format(format!("{}: not a checkpoint", meta_path.display())));
        }
        let blob_path = dir.join(&meta.blob);
        let blob = fs::read(&blob_path).map_err(|source| RegressorError::Io {
            path: blob_path.display().to_string(),
            source,
        })?;
        if blob.len() % 8 != 0 {
            return Err(RegressorError::Format(format!("{}: truncated", blob_path.display())));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let input_dim: usize = meta.sources.iter().map(|s| s.dim).sum();
        if meta.layer_dims.first() != Some(&input_dim) {
            return Err(RegressorError::Shape(format!(
                "checkpoint sources sum to {input_dim} but head input is {:?}",
                meta.layer_dims.first()
            )));
        }
        let mut cursor = values.into_iter();
        let mut take = |n: usize| -> Result<Vec<f64>, RegressorError> {
            let v: Vec<f64> = cursor.by_ref().take(n).collect();
            if v.len() != n {
                return Err(RegressorError::Format(format!("{}: too few parameters", blob_path.display())));
            }
            Ok(v)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in meta.layer_dims.windows(2) {
            weights.push(take(pair[0] * pair[1])?);
            biases.push(take(pair[1])?);
        }
        let standardizer = if meta.standardized {
            Some(Standardizer {
                mean: take(input_dim)?,
                std: take(input_dim)?,
            })
        } else {
            None
        };
        if cursor.next().is_some() {
            return Err(RegressorError::Format(format!("{}: trailing parameters", blob_path.display())));
        }
        Ok(AffinityModel {
            sources: meta.sources,
            standardizer,
            head: MlpHead::from_parts(meta.layer_dims, weights, biases)?,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "ppi-affinity-checkpoint";
pub const CHECKPOINT_META: &str = "model.json";
pub const CHECKPOINT_BLOB: &str = "model.bin";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    version: u32,
    sources: Vec<SourceSpec>,
    layer_dims: Vec<usize>,
    activation: super::mlp::Activation,
    standardized: bool,
    parameters: usize,
    blob: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RegressorError> {
    fs::write(path, bytes).map_err(|source| RegressorError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Objective over the whole training set, one PMID group per batch,
    /// measured after the epoch's updates.
    pub train_loss: f64,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AffinityModel,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept, if selection by validation happened.
    pub best_epoch: Option<usize>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metric_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_pearson,val_spearman,val_rmse\n");
    for e in log {
        let (p, s, r) = match &e.validation {
            Some(v) => (v.pearson, v.spearman, Some(v.rmse)),
            None => (None, None, None),
        };
        let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, fmt_opt(p), fmt_opt(s), fmt_opt(r));
    }
    out
}

pub fn write_metric_log(path: &Path, log: &[EpochLog]) -> Result<(), RegressorError> {
    write_file(path, metric_log_csv(log).as_bytes())
}

/// Batch plan for the training side of `split`, seeded from the config's batching stream.
pub fn plan_for(dataset: &Dataset, split: &SplitAssignment, config: &TrainConfig) -> Result<BatchPlan, RegressorError> {
    Ok(plan_batches(
        &split.train,
        &dataset.pmid_map(),
        config.batch_size,
        config.epochs,
        derive_seed(config.seed, BATCHING_STREAM),
    )?)
}

fn check_plan(plan: &BatchPlan, train: &[String], epochs: usize) -> Result<(), RegressorError> {
    if plan.epochs.len() < epochs {
        return Err(RegressorError::PlanMismatch(format!(
            "plan has {} epochs, config asks for {epochs}",
            plan.epochs.len()
        )));
    }
    let expected: HashSet<&str> = train.iter().map(String::as_str).collect();
    for (e, batches) in plan.epochs.iter().take(epochs).enumerate() {
        let mut seen = HashSet::new();
        for id in batches.iter().flat_map(|b| &b.ids) {
            if !expected.contains(id.as_str()) || !seen.insert(id.as_str()) {
                return Err(RegressorError::PlanMismatch(format!(
                    "epoch {e}: id '{id}' is not a unique training id"
                )));
            }
        }
        if seen.len() != expected.len() {
            return Err(RegressorError::PlanMismatch(format!(
                "epoch {e} covers {} of {} training ids",
                seen.len(),
                expected.len()
            )));
        }
    }
    Ok(())
}

struct Prepared<'a> {
    features: HashMap<&'a str, Vec<f64>>,
    labels: HashMap<&'a str, f64>,
}

fn batch_loss(
    head: &MlpHead,
    prepared: &Prepared,
    ids: &[String],
    loss: &LossConfig,
) -> Result<(crate::losses::LossOutput, Vec<super::mlp::ForwardCache>), RegressorError> {
    let mut preds = Vec::with_capacity(ids.len());
    let mut caches = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let (p, cache) = head.forward(&prepared.features[id.as_str()])?;
        preds.push(p);
        caches.push(cache);
        labels.push(prepared.labels[id.as_str()]);
    }
    Ok((composite_loss(&labels, &preds, loss)?, caches))
}

fn training_objective(
    head: &MlpHead,
    prepared: &Prepared,
    groups: &[Vec<String>],
    loss: &LossConfig,
) -> Result<f64, RegressorError> {
    let mut weighted = 0.0;
    let mut count = 0usize;
    for group in groups {
        let (out, _) = batch_loss(head, prepared, group, loss)?;
        weighted += out.total * group.len() as f64;
        count += group.len();
    }
    Ok(if count == 0 { 0.0 } else { weighted / count as f64 })
}

fn evaluate_ids(head: &MlpHead, prepared: &Prepared, ids: &[String]) -> Result<EvalReport, RegressorError> {
    let mut y = Vec::with_capacity(ids.len());
    let mut yhat = Vec::with_capacity(ids.len());
    for id in ids {
        yhat.push(head.forward(&prepared.features[id.as_str()])?.0);
        y.push(prepared.labels[id.as_str()]);
    }
    Ok(EvalReport::from_vectors(&y, &yhat)?)
}

/// Train a head on the split's training ids. `tables` are concatenated in the
/// given order. Returns the parameters from the epoch with the best validation
/// Spearman, or the final parameters when there is no validation signal.
pub fn train(
    dataset: &Dataset,
    split: &SplitAssignment,
    tables: &[&EmbeddingTable],
    config: &TrainConfig,
    plan: &BatchPlan,
) -> Result<TrainOutcome, RegressorError> {
    config.validate()?;
    if tables.is_empty() {
        return Err(RegressorError::InvalidConfig("at least one embedding table is required".into()));
    }
    if split.train.is_empty() {
        return Err(RegressorError::InvalidConfig("split has no training ids".into()));
    }
    check_plan(plan, &split.train, config.epochs)?;

    let index = dataset.index();
    let mut raw: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut labels = HashMap::new();
    for id in split.train.iter().chain(&split.validation) {
        let complex = index
            .get(id.as_str())
            .ok_or_else(|| RegressorError::UnknownId(id.clone()))?;
        raw.insert(id.as_str(), fuse(tables, id)?);
        labels.insert(id.as_str(), complex.pkd);
    }

    let sources: Vec<SourceSpec> = tables
        .iter()
        .map(|t| SourceSpec {
            name: t.name().to_string(),
            dim: t.dim(),
        })
        .collect();
    let input_dim: usize = sources.iter().map(|s| s.dim).sum();
    let standardizer = if config.standardize {
        let rows: Vec<Vec<f64>> = split.train.iter().map(|id| raw[id.as_str()].clone()).collect();
        Some(Standardizer::fit(&rows)?)
    } else {
        None
    };
    let features = raw
        .into_iter()
        .map(|(id, v)| {
            let v = match &standardizer {
                Some(s) => s.apply(&v),
                None => v,
            };
            (id, v)
        })
        .collect();
    let prepared = Prepared { features, labels };

    let mut dims = vec![input_dim];
    dims.extend(&config.hidden);
    dims.push(1);
    let mut head = MlpHead::he_init(&dims, derive_seed(config.seed, INIT_STREAM))?;

    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for id in &split.train {
        groups.entry(index[id.as_str()].pmid.as_str()).or_default().push(id.clone());
    }
    let groups: Vec<Vec<String>> = groups.into_values().collect();

    let mut optimizer = Optimizer::new(config.optimizer_settings());
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, MlpHead)> = None;

    for (epoch, batches) in plan.epochs.iter().take(config.epochs).enumerate() {
        for (b, batch) in batches.iter().enumerate() {
            let (out, caches) = match batch_loss(&head, &prepared, &batch.ids, &config.loss) {
                Ok(r) => r,
                Err(RegressorError::Loss(e)) => {
                    return Err(RegressorError::NanLoss {
                        epoch: epoch + 1,
                        batch: b,
                        pmid: batch.pmid.clone(),
                        detail: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            };
            if !out.total.is_finite() {
                return Err(RegressorError::NanLoss {
                    epoch: epoch + 1,
                    batch: b,
                    pmid: batch.pmid.clone(),
                    detail: format!("loss {}", out.total),
                });
            }
            let mut grads = Gradients::zeros_like(&head);
            for (cache, g) in caches.iter().zip(&out.grad) {
                grads.add_assign(&head.backward(cache, *g)?);
            }
            optimizer.step(head.param_slices_mut(), grads.slices());
        }

        let train_loss = training_objective(&head, &prepared, &groups, &config.loss)?;
        if !train_loss.is_finite() {
            return Err(RegressorError::NanLoss {
                epoch: epoch + 1,
                batch: batches.len(),
                pmid: "<training objective>".into(),
                detail: format!("loss {train_loss}"),
            });
        }
        let validation = if split.validation.is_empty() {
            None
        } else {
            Some(evaluate_ids(&head, &prepared, &split.validation)?)
        };
        if let Some(rho) = validation.as_ref().and_then(|v| v.spearman) {
            if best.as_ref().is_none_or(|(b, _, _)| rho > *b) {
                best = Some((rho, epoch + 1, head.clone()));
            }
        }
        log::debug!("epoch {}: train loss {train_loss}", epoch + 1);
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            validation,
        });
    }

    let (head, best_epoch) = match best {
        Some((_, e, h)) => (h, Some(e)),
        None => (head, None),
    };
    Ok(TrainOutcome {
        model: AffinityModel {
            sources,
            standardizer,
            head,
        },
        log,
        best_epoch,
    })
}

/// Predict every requested id. Tables are matched to the model's sources by name.
pub fn predict(
    model: &AffinityModel,
    tables: &[&EmbeddingTable],
    ids: &[String],
) -> Result<BTreeMap<String, f64>, RegressorError> {
    let ordered = select_tables(&model.sources, tables)?;
    ids.iter()
        .map(|id| {
            let x = model.features(&ordered, id)?;
            Ok((id.clone(), model.head.forward(&x)?.0))
        })
        .collect()
}
