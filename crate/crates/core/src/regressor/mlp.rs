use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RegressorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Fully connected regression head: affine layers with ReLU between them and
/// a single scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    layer_dims: Vec<usize>,
    /// Row-major `out x in` matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-layer inputs and pre-activations recorded by [`MlpHead::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    layer_dims: Vec<usize>,
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(head: &MlpHead) -> Self {
        Gradients {
            weights: head.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: head.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Weights then biases, layer by layer; same order as [`MlpHead::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<(), RegressorError> {
    if layer_dims.len() < 2 {
        return Err(RegressorError::Shape(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(RegressorError::Shape(format!("zero-width layer in {layer_dims:?}")));
    }
    if *layer_dims.last().unwrap() != 1 {
        return Err(RegressorError::Shape(format!(
            "output dim must be 1, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl MlpHead {
    /// He-normal weights (variance 2 / fan_in), zero biases.
    pub fn he_init(layer_dims: &[usize], seed: u64) -> Result<Self, RegressorError> {
        check_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            weights.push((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpHead {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, RegressorError> {
        check_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(RegressorError::Shape(format!(
                "{layers} layers but {} weight and {} bias blocks",
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in layer_dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(RegressorError::Shape(format!("layer {l} parameters do not match {pair:?}")));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFinite("head parameters".into()));
        }
        Ok(MlpHead {
            layer_dims,
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache), RegressorError> {
        if x.len() != self.input_dim() {
            return Err(RegressorError::Shape(format!(
                "input has {} features, head expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFinite("input vector".into()));
        }
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre_activations = Vec::with_capacity(layers);
        let mut current = x.to_vec();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    self.biases[l][o] + row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let next = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre_activations.push(z);
        }
        Ok((
            current[0],
            ForwardCache {
                layer_dims: self.layer_dims.clone(),
                inputs,
                pre_activations,
            },
        ))
    }

    /// Parameter gradients given d loss / d prediction. The ReLU subgradient at 0 is 0.
    pub fn backward(&self, cache: &ForwardCache, dl_dpred: f64) -> Result<Gradients, RegressorError> {
        if cache.layer_dims != self.layer_dims
            || cache.inputs.len() != self.weights.len()
            || cache.pre_activations.len() != self.weights.len()
        {
            return Err(RegressorError::StaleCache);
        }
        let layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = vec![dl_dpred];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let input = &cache.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                grads.biases[l][o] = d;
                let row = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g = d * x;
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let below = &cache.pre_activations[l - 1];
                delta = (0..fan_in)
                    .map(|i| {
                        if below[i] > 0.0 {
                            (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(grads)
    }
}
