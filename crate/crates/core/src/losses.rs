//! Composite training objective: a Huber regression term mixed with a
//! within-batch pairwise ranking term.
//!
//! Two readings of the ranking term are provided. [`rank_loss_verbatim`]
//! gates on predicted order and scores label gaps; its gradient with respect
//! to the predictions vanishes almost everywhere, so it is only useful as a
//! diagnostic. [`rank_loss_surrogate`] is the pairwise-logistic form (gate on
//! label order, logistic penalty on the prediction margin) and is what drives
//! training by default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {labels} labels vs {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("empty batch")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankVariant {
    Verbatim,
    #[default]
    Surrogate,
}

impl FromStr for RankVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "verbatim" => Ok(RankVariant::Verbatim),
            "surrogate" => Ok(RankVariant::Surrogate),
            other => Err(format!("unknown rank variant '{other}' (expected verbatim or surrogate)")),
        }
    }
}

impl fmt::Display for RankVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankVariant::Verbatim => "verbatim",
            RankVariant::Surrogate => "surrogate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the Huber term; the rank term gets `1 - lambda`.
    pub lambda: f64,
    /// Huber transition point, in pKd units.
    pub delta: f64,
    pub rank_variant: RankVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            delta: DEFAULT_DELTA,
            rank_variant: RankVariant::Surrogate,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LossError::InvalidConfig(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(LossError::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }

    /// True when no term of the objective carries gradient.
    pub fn has_zero_gradient(&self) -> bool {
        self.lambda == 0.0 && self.rank_variant == RankVariant::Verbatim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub huber: f64,
    pub rank: f64,
    /// d total / d prediction.
    pub grad: Vec<f64>,
}

fn check_inputs(y: &[f64], yhat: &[f64]) -> Result<usize, LossError> {
    if y.len() != yhat.len() {
        return Err(LossError::LengthMismatch {
            labels: y.len(),
            predictions: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(LossError::Empty);
    }
    if let Some(i) = y
        .iter()
        .zip(yhat)
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(LossError::NonFinite(i));
    }
    Ok(y.len())
}

/// log(1 + e^x) without overflow for large |x|.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// 1 / (1 + e^-x), evaluated on the stable side.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean Huber loss over residuals `y - yhat`, with its gradient in `yhat`.
pub fn huber_loss(y: &[f64], yhat: &[f64], delta: f64) -> Result<(f64, Vec<f64>), LossError> {
    let n = check_inputs(y, yhat)?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(LossError::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&t, &p) in y.iter().zip(yhat) {
        let e = t - p;
        value += if e.abs() <= delta {
            0.5 * e * e
        } else {
            delta * e.abs() - 0.5 * delta * delta
        };
        grad.push(scale * (p - t).clamp(-delta, delta));
    }
    Ok((value * scale, grad))
}

/// Indicator on predicted order, log term on labels; no useful gradient.
pub fn rank_loss_verbatim(y: &[f64], yhat: &[f64]) -> Result<f64, LossError> {
    let n = check_inputs(y, yhat)?;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if yhat[i] > yhat[j] {
                sum += softplus(y[i] - y[j]);
            }
        }
    }
    Ok(sum / n as f64)
}

/// Pairwise logistic loss over label-ordered pairs, with its gradient in `yhat`.
pub fn rank_loss_surrogate(y: &[f64], yhat: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    let n = check_inputs(y, yhat)?;
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if y[i] > y[j] {
                let margin = yhat[i] - yhat[j];
                value += softplus(-margin);
                // d/dm softplus(-m) = -sigmoid(-m)
                let g = scale * sigmoid(-margin);
                grad[i] -= g;
                grad[j] += g;
            }
        }
    }
    Ok((value * scale, grad))
}

pub fn composite_loss(y: &[f64], yhat: &[f64], config: &LossConfig) -> Result<LossOutput, LossError> {
    config.validate()?;
    let (huber, huber_grad) = huber_loss(y, yhat, config.delta)?;
    let lambda = config.lambda;
    let (rank, grad) = match config.rank_variant {
        RankVariant::Surrogate => {
            let (rank, rank_grad) = rank_loss_surrogate(y, yhat)?;
            let grad = huber_grad
                .iter()
                .zip(&rank_grad)
                .map(|(h, r)| lambda * h + (1.0 - lambda) * r)
                .collect();
            (rank, grad)
        }
        RankVariant::Verbatim => {
            let rank = rank_loss_verbatim(y, yhat)?;
            (rank, huber_grad.iter().map(|h| lambda * h).collect())
        }
    };
    Ok(LossOutput {
        total: lambda * huber + (1.0 - lambda) * rank,
        huber,
        rank,
        grad,
    })
}
