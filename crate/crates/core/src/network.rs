//! Deepsets flight policy, floating-point reference path.
//!
//! The policy has three MLPs: a self encoder over the 18-dimensional self
//! observation, a shared neighbor MLP applied to every 6-dimensional
//! neighbor observation and mean-pooled, and a head over the concatenated
//! `[self_embedding, neighbor_embedding]` that emits a 4-dimensional action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{NeighborObservation, SelfObservation, NEIGHBOR_OBS_DIM, SELF_OBS_DIM};

pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("{mlp} layer {layer}: {reason}")]
    Shape {
        mlp: &'static str,
        layer: usize,
        reason: String,
    },
    #[error("{mlp}: {reason}")]
    Structure { mlp: &'static str, reason: String },
    #[error("input length {got} does not match input dimension {expected}")]
    InputDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[serde(rename = "none")]
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Dense layer `y = act(W x + b)` with a row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, String> {
        if rows == 0 || cols == 0 {
            return Err(format!("empty layer {rows}x{cols}"));
        }
        if weights.len() != rows * cols {
            return Err(format!(
                "weight count {} does not match {rows}x{cols}",
                weights.len()
            ));
        }
        if bias.len() != rows {
            return Err(format!(
                "bias length {} does not match {rows} rows",
                bias.len()
            ));
        }
        if let Some(bad) = weights.iter().chain(&bias).find(|v| !v.is_finite()) {
            return Err(format!("non-finite parameter {bad}"));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
            activation,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|r| {
            let dot = self
                .row(r)
                .iter()
                .zip(x)
                .fold(0.0, |acc, (w, xi)| acc + w * xi);
            self.activation.apply(dot + self.bias[r])
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Checks that consecutive layers chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self, (usize, String)> {
        if layers.is_empty() {
            return Err((0, "no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols != pair[0].rows {
                return Err((
                    i + 1,
                    format!(
                        "expects {} inputs but previous layer produces {}",
                        pair[1].cols, pair[0].rows
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Uniform `[-1, 1]` parameters; every layer but the last uses ReLU
    /// unless `final_activation` says otherwise.
    pub fn random<R: Rng>(sizes: &[usize], final_activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output size");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (cols, rows) = (w[0], w[1]);
                let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let weights = draw(rows * cols);
                let bias = draw(rows);
                let act = if i == last {
                    final_activation
                } else {
                    Activation::Relu
                };
                Layer::new(rows, cols, weights, bias, act).expect("valid random layer")
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Zero every parameter, keeping shapes and activations.
    pub fn zeroed(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                    ..l.clone()
                })
                .collect(),
        }
    }
}

pub fn mlp_forward_float(w: &Mlp, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
    w.forward(x)
}

/// Raw network output, before clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVec(pub [f64; ACTION_DIM]);

/// Normalized per-motor thrust in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorCommand(pub [f64; ACTION_DIM]);

/// `f = (clip(a, -1, 1) + 1) / 2`, component-wise.
pub fn action_to_motor(a: &ActionVec) -> MotorCommand {
    MotorCommand(a.0.map(|ai| 0.5 * (ai.clamp(-1.0, 1.0) + 1.0)))
}

/// Inverse of [`action_to_motor`] on `[0, 1]`.
pub fn motor_to_action(m: &MotorCommand) -> ActionVec {
    ActionVec(m.0.map(|f| 2.0 * f - 1.0))
}

pub const SELF_ENCODER: &str = "self_encoder";
pub const NEIGHBOR_MLP: &str = "neighbor_mlp";
pub const HEAD: &str = "head";

/// Hidden sizes of the reference architecture.
pub const SELF_HIDDEN: [usize; 2] = [16, 16];
pub const NEIGHBOR_HIDDEN: [usize; 2] = [8, 8];
pub const HEAD_HIDDEN: [usize; 1] = [32];

#[derive(Debug, Clone, PartialEq)]
pub struct DeepsetsPolicy {
    self_encoder: Mlp,
    neighbor_mlp: Mlp,
    head: Mlp,
}

impl DeepsetsPolicy {
    pub fn new(self_encoder: Mlp, neighbor_mlp: Mlp, head: Mlp) -> Result<Self, NetworkError> {
        let structure = |mlp, reason: String| NetworkError::Structure { mlp, reason };
        if self_encoder.input_dim() != SELF_OBS_DIM {
            return Err(structure(
                SELF_ENCODER,
                format!(
                    "input dimension {} != {SELF_OBS_DIM}",
                    self_encoder.input_dim()
                ),
            ));
        }
        if neighbor_mlp.input_dim() != NEIGHBOR_OBS_DIM {
            return Err(structure(
                NEIGHBOR_MLP,
                format!(
                    "input dimension {} != {NEIGHBOR_OBS_DIM}",
                    neighbor_mlp.input_dim()
                ),
            ));
        }
        let embed = self_encoder.output_dim() + neighbor_mlp.output_dim();
        if head.input_dim() != embed {
            return Err(structure(
                HEAD,
                format!(
                    "input dimension {} != {} + {}",
                    head.input_dim(),
                    self_encoder.output_dim(),
                    neighbor_mlp.output_dim()
                ),
            ));
        }
        if head.output_dim() != ACTION_DIM {
            return Err(structure(
                HEAD,
                format!("output dimension {} != {ACTION_DIM}", head.output_dim()),
            ));
        }
        if head.layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(structure(
                HEAD,
                "final layer must have no activation".into(),
            ));
        }
        Ok(Self {
            self_encoder,
            neighbor_mlp,
            head,
        })
    }

    /// Reference architecture with uniform `[-1, 1]` parameters.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let self_sizes = [SELF_OBS_DIM, SELF_HIDDEN[0], SELF_HIDDEN[1]];
        let nb_sizes = [NEIGHBOR_OBS_DIM, NEIGHBOR_HIDDEN[0], NEIGHBOR_HIDDEN[1]];
        let head_sizes = [
            SELF_HIDDEN[1] + NEIGHBOR_HIDDEN[1],
            HEAD_HIDDEN[0],
            ACTION_DIM,
        ];
        let self_encoder = Mlp::random(&self_sizes, Activation::Relu, &mut rng);
        let neighbor_mlp = Mlp::random(&nb_sizes, Activation::Relu, &mut rng);
        let head = Mlp::random(&head_sizes, Activation::Identity, &mut rng);
        Self::new(self_encoder, neighbor_mlp, head).expect("reference architecture is consistent")
    }

    pub fn self_encoder(&self) -> &Mlp {
        &self.self_encoder
    }

    pub fn neighbor_mlp(&self) -> &Mlp {
        &self.neighbor_mlp
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn mlps(&self) -> [(&'static str, &Mlp); 3] {
        [
            (SELF_ENCODER, &self.self_encoder),
            (NEIGHBOR_MLP, &self.neighbor_mlp),
            (HEAD, &self.head),
        ]
    }

    pub fn zeroed(&self) -> Self {
        Self {
            self_encoder: self.self_encoder.zeroed(),
            neighbor_mlp: self.neighbor_mlp.zeroed(),
            head: self.head.zeroed(),
        }
    }

    /// Mean of the neighbor embeddings, or zeros for an empty set.
    ///
    /// Embeddings are summed in a canonical (sorted) order so the result is
    /// bit-identical under any permutation of `neighbors`.
    pub fn neighbor_embedding(&self, neighbors: &[NeighborObservation]) -> Vec<f64> {
        let dim = self.neighbor_mlp.output_dim();
        if neighbors.is_empty() {
            return vec![0.0; dim];
        }
        let mut embeddings: Vec<Vec<f64>> = neighbors
            .iter()
            .map(|n| {
                self.neighbor_mlp
                    .forward(n.as_slice())
                    .expect("validated dims")
            })
            .collect();
        embeddings.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let k = embeddings.len() as f64;
        let mut sum = vec![0.0; dim];
        for e in &embeddings {
            for (s, v) in sum.iter_mut().zip(e) {
                *s += v;
            }
        }
        sum.into_iter().map(|s| s / k).collect()
    }

    pub fn forward(
        &self,
        self_obs: &SelfObservation,
        neighbors: &[NeighborObservation],
    ) -> ActionVec {
        let mut joint = self
            .self_encoder
            .forward(self_obs.as_slice())
            .expect("validated dims");
        joint.extend(self.neighbor_embedding(neighbors));
        let out = self.head.forward(&joint).expect("validated dims");
        ActionVec(out.try_into().expect("head emits four actions"))
    }
}

pub fn deepsets_forward_float(
    p: &DeepsetsPolicy,
    self_obs: &SelfObservation,
    neighbors: &[NeighborObservation],
) -> ActionVec {
    p.forward(self_obs, neighbors)
}
