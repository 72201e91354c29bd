//! Pearson r, Spearman rho (average ranks for ties) and RMSE.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation is undefined for a constant vector")]
    UndefinedCorrelation,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("predictions and labels share no ids")]
    EmptyIntersection,
}

fn check(y: &[f64], yhat: &[f64], min_len: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < min_len {
        return Err(MetricError::TooFew {
            needed: min_len,
            got: y.len(),
        });
    }
    if let Some(i) = y
        .iter()
        .zip(yhat)
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 2)?;
    let (my, mp) = (mean(y), mean(yhat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 2)?;
    pearson(&average_ranks(y), &average_ranks(yhat))
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 1)?;
    let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

/// Metrics over one evaluation set. Correlations are `None` when undefined
/// (fewer than two points or a constant vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub rmse: f64,
    pub n: usize,
}

impl EvalReport {
    pub fn from_vectors(y: &[f64], yhat: &[f64]) -> Result<Self, MetricError> {
        let rmse = rmse(y, yhat)?;
        let defined = |r: Result<f64, MetricError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(MetricError::UndefinedCorrelation) | Err(MetricError::TooFew { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(EvalReport {
            pearson: defined(pearson(y, yhat))?,
            spearman: defined(spearman(y, yhat))?,
            rmse,
            n: y.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub warnings: Vec<String>,
}

/// Align predictions with labels by id and score the intersection.
pub fn evaluate(
    predictions: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, f64>,
) -> Result<Evaluation, MetricError> {
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for (id, p) in predictions {
        if let Some(t) = labels.get(id) {
            y.push(*t);
            yhat.push(*p);
        }
    }
    if y.is_empty() {
        return Err(MetricError::EmptyIntersection);
    }
    let mut warnings = Vec::new();
    if y.len() != predictions.len() || y.len() != labels.len() {
        let msg = format!(
            "evaluating on {} shared ids ({} predictions, {} labels)",
            y.len(),
            predictions.len(),
            labels.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Evaluation {
        report: EvalReport::from_vectors(&y, &yhat)?,
        warnings,
    })
}
