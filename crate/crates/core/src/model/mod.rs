//! Small dense classifiers that emit raw class scores, with hand-written
//! backpropagation.

mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;

use crate::losses::LossError;
use crate::types::{DatasetError, Seed};

pub use train::{
    predict_log, resample_balanced, train, EpochStats, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("input has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter vector has length {found}, model has {expected} parameters")]
    ParameterCount { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    /// One hidden layer.
    Mlp1 { hidden: usize, activation: Activation },
}

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Linear or one-hidden-layer classifier mapping features to class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<Dense>,
}

impl Classifier {
    /// All weights and biases zero.
    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let layers = match arch {
            Architecture::Linear => vec![Dense::zeros(input_dim, num_classes)],
            Architecture::Mlp1 { hidden, .. } => vec![
                Dense::zeros(input_dim, hidden),
                Dense::zeros(hidden, num_classes),
            ],
        };
        Classifier {
            arch,
            input_dim,
            num_classes,
            layers,
        }
    }

    /// Weights uniform in `[-1/√fan_in, 1/√fan_in]`, biases zero.
    pub fn init(arch: Architecture, input_dim: usize, num_classes: usize, seed: Seed) -> Self {
        let mut model = Self::zeros(arch, input_dim, num_classes);
        let mut rng = seed.stream(0);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        model
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Scores for one sample.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        let mut out = Vec::with_capacity(self.num_classes);
        match self.arch {
            Architecture::Linear => self.layers[0].forward(x, &mut out),
            Architecture::Mlp1 { activation, .. } => {
                let mut h = Vec::new();
                self.layers[0].forward(x, &mut h);
                h.iter_mut().for_each(|v| *v = activation.apply(*v));
                self.layers[1].forward(&h, &mut out);
            }
        }
        Ok(out)
    }

    /// Scores for each sample of a batch, in order.
    pub fn forward(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        batch.iter().map(|x| self.forward_one(x)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.num_params() {
            return Err(ModelError::ParameterCount {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// `params -= lr * grad`, with `grad` in the [`Classifier::params`] layout.
    pub(crate) fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut g = grad.iter();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p -= lr * g.next().expect("gradient covers every parameter");
            }
        }
    }

    /// Adds the parameter gradient for one sample into `acc`, given the
    /// loss gradient with respect to that sample's scores.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        score_grad: &[f64],
        acc: &mut [f64],
    ) -> Result<(), ModelError> {
        self.check_dim(x)?;
        fn dense_backward(layer: &Dense, input: &[f64], g: &[f64], acc: &mut [f64]) {
            let (gw, gb) = acc.split_at_mut(layer.weights.len());
            for ((row, &go), b) in gw.chunks_exact_mut(layer.in_dim).zip(g).zip(gb.iter_mut()) {
                if go == 0.0 {
                    continue;
                }
                for (w, &v) in row.iter_mut().zip(input) {
                    *w += go * v;
                }
                *b += go;
            }
        }
        match self.arch {
            Architecture::Linear => dense_backward(&self.layers[0], x, score_grad, acc),
            Architecture::Mlp1 { activation, .. } => {
                let (l0, l1) = (&self.layers[0], &self.layers[1]);
                let mut pre = Vec::new();
                l0.forward(x, &mut pre);
                let h: Vec<f64> = pre.iter().map(|&v| activation.apply(v)).collect();
                let (acc0, acc1) = acc.split_at_mut(l0.num_params());
                dense_backward(l1, &h, score_grad, acc1);
                let mut dh = vec![0.0; l0.out_dim];
                for (row, &go) in l1.weights.chunks_exact(l1.in_dim).zip(score_grad) {
                    for (d, &w) in dh.iter_mut().zip(row) {
                        *d += go * w;
                    }
                }
                for ((d, &a), &y) in dh.iter_mut().zip(&pre).zip(&h) {
                    *d *= activation.derivative(a, y);
                }
                dense_backward(l0, x, &dh, acc0);
            }
        }
        Ok(())
    }

    /// Rows of the output layer's weight matrix, one vector per class.
    pub fn class_vectors(&self) -> Vec<Vec<f64>> {
        let last = self.layers.last().expect("at least one layer");
        last.weights
            .chunks_exact(last.in_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn to_checkpoint(&self, seed: Seed, config_digest: impl Into<String>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            architecture: self.arch,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    rows: l.out_dim,
                    cols: l.in_dim,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            seed: seed.0,
            config_digest: config_digest.into(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let mut model = Self::zeros(ck.architecture, ck.input_dim, ck.num_classes);
        if ck.layers.len() != model.layers.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} layers, found {}",
                model.layers.len(),
                ck.layers.len()
            )));
        }
        for (i, (dst, src)) in model.layers.iter_mut().zip(&ck.layers).enumerate() {
            if src.rows != dst.out_dim
                || src.cols != dst.in_dim
                || src.weights.len() != dst.weights.len()
                || src.bias.len() != dst.bias.len()
            {
                return Err(ModelError::Checkpoint(format!("layer {i} has the wrong shape")));
            }
            dst.weights.copy_from_slice(&src.weights);
            dst.bias.copy_from_slice(&src.bias);
        }
        Ok(model)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// JSON checkpoint of a [`Classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerDocument>,
    pub seed: u64,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoints always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
