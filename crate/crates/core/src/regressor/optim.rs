use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}' (expected sgd or adam)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

/// Stateful first-order optimizer over a fixed list of parameter slices.
pub struct Optimizer {
    settings: OptimizerSettings,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        let s = self.settings;
        self.step += 1;
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        let t = self.step as i32;
        let bias1 = 1.0 - s.beta1.powi(t);
        let bias2 = 1.0 - s.beta2.powi(t);
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            for (k, (w, &gk)) in p.iter_mut().zip(g).enumerate() {
                let g = gk + s.weight_decay * *w;
                match s.kind {
                    OptimizerKind::Sgd => *w -= s.lr * g,
                    OptimizerKind::Adam => {
                        let m = &mut self.first_moment[slot][k];
                        let v = &mut self.second_moment[slot][k];
                        *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                        *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *w -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(kind: OptimizerKind) -> OptimizerSettings {
        OptimizerSettings {
            kind,
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, 2.0];
        let mut opt = Optimizer::new(settings(OptimizerKind::Sgd));
        opt.step(vec![&mut p], vec![&[0.5, -1.0]]);
        assert_eq!(p, vec![0.95, 2.1]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0];
        let mut opt = Optimizer::new(settings(OptimizerKind::Adam));
        opt.step(vec![&mut p], vec![&[3.0, -0.01]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3, -0.7];
        let mut opt = Optimizer::new(settings(OptimizerKind::Adam));
        for _ in 0..5 {
            opt.step(vec![&mut p], vec![&[0.0, 0.0]]);
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }
}
