//! Uniform fixed-point conversion of a [`DeepsetsPolicy`], the integer-only
//! forward pass, and the fractional-bit calibration sweep.
//!
//! One fractional-bit count `n` applies to every weight, bias, input and
//! intermediate activation. Each layer output is one [`q_dot_bias`]: the
//! bias joins the accumulator at product precision and the sum is rescaled
//! once.

use std::collections::BTreeMap;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::so3_exp;
use crate::fixedpoint::{dot_bias_raw, q_mean, FixedPointError, QFormat, QVector};
use crate::network::{
    ActionVec, Activation, DeepsetsPolicy, Layer, Mlp, ACTION_DIM, HEAD, NEIGHBOR_MLP, SELF_ENCODER,
};
use crate::observation::{NeighborObservation, SelfObservation, NEIGHBOR_OBS_DIM, SELF_OBS_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("{mlp} layer {layer}: {source}")]
    Layer {
        mlp: &'static str,
        layer: usize,
        #[source]
        source: FixedPointError,
    },
    #[error("observation: {0}")]
    Observation(#[source] FixedPointError),
    #[error("{0}")]
    Arithmetic(#[from] FixedPointError),
    #[error("input shape: {0}")]
    Shape(String),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("invalid sweep range {n_min}..={n_max}: {reason}")]
    SweepRange {
        n_min: u32,
        n_max: u32,
        reason: String,
    },
    #[error("every fractional-bit count in {n_min}..={n_max} overflowed")]
    NoFeasibleFraction { n_min: u32, n_max: u32 },
}

/// Integer copy of a dense layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLayer {
    rows: usize,
    cols: usize,
    weights: Vec<i64>,
    bias: Vec<i64>,
    activation: Activation,
}

impl QuantizedLayer {
    pub fn from_raw(
        rows: usize,
        cols: usize,
        weights: Vec<i64>,
        bias: Vec<i64>,
        activation: Activation,
        format: &QFormat,
    ) -> Result<Self, String> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols || bias.len() != rows {
            return Err(format!(
                "{rows}x{cols} layer with {} weights and {} biases",
                weights.len(),
                bias.len()
            ));
        }
        if weights
            .iter()
            .chain(&bias)
            .any(|&r| r < format.word_min() || r > format.word_max())
        {
            return Err(format!("raw value outside {}-bit word", format.word_bits()));
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

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn bias(&self) -> &[i64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward(&self, x: &QVector) -> Result<QVector, FixedPointError> {
        let format = x.format();
        let raw = (0..self.rows)
            .map(|r| {
                let row = &self.weights[r * self.cols..(r + 1) * self.cols];
                let y = dot_bias_raw(&format, row, x.raw(), Some(self.bias[r]))?;
                Ok(match self.activation {
                    Activation::Relu => y.max(0),
                    Activation::Identity => y,
                })
            })
            .collect::<Result<Vec<_>, FixedPointError>>()?;
        QVector::from_raw(raw, format)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedMlp {
    layers: Vec<QuantizedLayer>,
}

impl QuantizedMlp {
    pub fn new(layers: Vec<QuantizedLayer>) -> Result<Self, (usize, String)> {
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

    pub fn layers(&self) -> &[QuantizedLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn forward(&self, x: &QVector) -> Result<QVector, FixedPointError> {
        if x.len() != self.input_dim() {
            return Err(FixedPointError::LengthMismatch {
                op: "mlp_forward_fixed",
                left: self.input_dim(),
                right: x.len(),
            });
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    fn quantize(name: &'static str, mlp: &Mlp, format: QFormat) -> Result<Self, QuantizeError> {
        let layers = mlp
            .layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                quantize_layer(layer, format).map_err(|source| QuantizeError::Layer {
                    mlp: name,
                    layer: i,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { layers })
    }

    /// Back to floating point; exact on the `2^-n` grid.
    pub fn dequantize(&self, format: &QFormat) -> Mlp {
        let scale = f64::powi(2.0, -(format.frac_bits() as i32));
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Layer::new(
                    l.rows,
                    l.cols,
                    l.weights.iter().map(|&r| r as f64 * scale).collect(),
                    l.bias.iter().map(|&r| r as f64 * scale).collect(),
                    l.activation,
                )
                .expect("shape carried over from a valid layer")
            })
            .collect();
        Mlp::new(layers).expect("shape carried over from a valid MLP")
    }
}

fn quantize_layer(layer: &Layer, format: QFormat) -> Result<QuantizedLayer, FixedPointError> {
    Ok(QuantizedLayer {
        rows: layer.rows(),
        cols: layer.cols(),
        weights: QVector::quantize(layer.weights(), format)?.raw().to_vec(),
        bias: QVector::quantize(layer.bias(), format)?.raw().to_vec(),
        activation: layer.activation(),
    })
}

/// A [`DeepsetsPolicy`] with every parameter as a raw integer in one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedPolicy {
    self_encoder: QuantizedMlp,
    neighbor_mlp: QuantizedMlp,
    head: QuantizedMlp,
    format: QFormat,
}

impl QuantizedPolicy {
    /// Assemble from raw parts, checking the same structure rules as the
    /// float policy.
    pub fn from_parts(
        self_encoder: QuantizedMlp,
        neighbor_mlp: QuantizedMlp,
        head: QuantizedMlp,
        format: QFormat,
    ) -> Result<Self, QuantizeError> {
        let qp = Self {
            self_encoder,
            neighbor_mlp,
            head,
            format,
        };
        // Reuse the float-side structure checks.
        DeepsetsPolicy::new(
            qp.self_encoder.dequantize(&format),
            qp.neighbor_mlp.dequantize(&format),
            qp.head.dequantize(&format),
        )
        .map_err(|e| QuantizeError::Shape(e.to_string()))?;
        Ok(qp)
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn mlps(&self) -> [(&'static str, &QuantizedMlp); 3] {
        [
            (SELF_ENCODER, &self.self_encoder),
            (NEIGHBOR_MLP, &self.neighbor_mlp),
            (HEAD, &self.head),
        ]
    }

    /// Float policy holding exactly the quantized values.
    pub fn dequantize(&self) -> DeepsetsPolicy {
        DeepsetsPolicy::new(
            self.self_encoder.dequantize(&self.format),
            self.neighbor_mlp.dequantize(&self.format),
            self.head.dequantize(&self.format),
        )
        .expect("structure checked at construction")
    }

    /// Integer-only forward pass. Observations must already be in this
    /// policy's format.
    pub fn forward(
        &self,
        self_obs: &QVector,
        neighbors: &[QVector],
    ) -> Result<QVector, QuantizeError> {
        let check = |v: &QVector, dim: usize, what: &str| {
            if v.format() != self.format {
                return Err(QuantizeError::Shape(format!(
                    "{what} is in {} but the policy uses {}",
                    v.format(),
                    self.format
                )));
            }
            if v.len() != dim {
                return Err(QuantizeError::Shape(format!(
                    "{what} has length {} instead of {dim}",
                    v.len()
                )));
            }
            Ok(())
        };
        check(self_obs, SELF_OBS_DIM, "self observation")?;
        for n in neighbors {
            check(n, NEIGHBOR_OBS_DIM, "neighbor observation")?;
        }

        let self_embedding = self.self_encoder.forward(self_obs)?;
        let neighbor_embedding = if neighbors.is_empty() {
            QVector::zeros(self.neighbor_mlp.output_dim(), self.format)
        } else {
            let embeddings = neighbors
                .iter()
                .map(|n| self.neighbor_mlp.forward(n))
                .collect::<Result<Vec<_>, _>>()?;
            q_mean(&embeddings)?
        };
        Ok(self
            .head
            .forward(&self_embedding.concat(&neighbor_embedding)?)?)
    }

    /// Quantize float observations, run the integer path, dequantize the action.
    pub fn forward_observation(
        &self,
        self_obs: &SelfObservation,
        neighbors: &[NeighborObservation],
    ) -> Result<ActionVec, QuantizeError> {
        let (q_self, q_neighbors) = quantize_observation(self_obs, neighbors, self.format)?;
        let out = self.forward(&q_self, &q_neighbors)?.dequantize();
        Ok(ActionVec(out.try_into().expect("head emits four actions")))
    }
}

pub fn quantize_observation(
    self_obs: &SelfObservation,
    neighbors: &[NeighborObservation],
    format: QFormat,
) -> Result<(QVector, Vec<QVector>), QuantizeError> {
    let q_self =
        QVector::quantize(self_obs.as_slice(), format).map_err(QuantizeError::Observation)?;
    let q_neighbors = neighbors
        .iter()
        .map(|n| QVector::quantize(n.as_slice(), format))
        .collect::<Result<Vec<_>, _>>()
        .map_err(QuantizeError::Observation)?;
    Ok((q_self, q_neighbors))
}

pub fn quantize_policy(
    p: &DeepsetsPolicy,
    format: QFormat,
) -> Result<QuantizedPolicy, QuantizeError> {
    Ok(QuantizedPolicy {
        self_encoder: QuantizedMlp::quantize(SELF_ENCODER, p.self_encoder(), format)?,
        neighbor_mlp: QuantizedMlp::quantize(NEIGHBOR_MLP, p.neighbor_mlp(), format)?,
        head: QuantizedMlp::quantize(HEAD, p.head(), format)?,
        format,
    })
}

pub fn deepsets_forward_fixed(
    qp: &QuantizedPolicy,
    self_obs: &QVector,
    neighbors: &[QVector],
) -> Result<QVector, QuantizeError> {
    qp.forward(self_obs, neighbors)
}

/// Closed interval `[lo, hi]` for one sampled component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

/// Per-component sampling bounds for calibration inputs, also used as the
/// "in envelope" test for closed-loop comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRanges {
    pub rel_position: [Bounds; 3],
    pub velocity: [Bounds; 3],
    /// Rotation angle about a uniformly random axis, radians.
    pub rotation_angle: Bounds,
    pub angular_velocity: [Bounds; 3],
    pub neighbor_rel_position: [Bounds; 3],
    pub neighbor_rel_velocity: [Bounds; 3],
    /// Inclusive neighbor count range.
    pub neighbor_count: (usize, usize),
}

impl Default for ObservationRanges {
    /// Flight-area relative positions, +-3 m/s, any attitude, +-10 rad/s,
    /// and zero to two neighbors.
    fn default() -> Self {
        let area = [
            Bounds::symmetric(6.5),
            Bounds::symmetric(4.5),
            Bounds::symmetric(2.7),
        ];
        Self {
            rel_position: area,
            velocity: [Bounds::symmetric(3.0); 3],
            rotation_angle: Bounds::new(0.0, std::f64::consts::PI),
            angular_velocity: [Bounds::symmetric(10.0); 3],
            neighbor_rel_position: area,
            neighbor_rel_velocity: [Bounds::symmetric(6.0); 3],
            neighbor_count: (0, 2),
        }
    }
}

impl ObservationRanges {
    /// Every component at exactly zero and no neighbors.
    pub fn zero() -> Self {
        let z = Bounds::new(0.0, 0.0);
        Self {
            rel_position: [z; 3],
            velocity: [z; 3],
            rotation_angle: z,
            angular_velocity: [z; 3],
            neighbor_rel_position: [z; 3],
            neighbor_rel_velocity: [z; 3],
            neighbor_count: (0, 0),
        }
    }

    pub fn contains(&self, self_obs: &SelfObservation, neighbors: &[NeighborObservation]) -> bool {
        let within = |b: &[Bounds; 3], v: &[f64]| b.iter().zip(v).all(|(b, &x)| b.contains(x));
        let s = self_obs.as_slice();
        let r = self_obs.rotation();
        let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        within(&self.rel_position, &s[0..3])
            && within(&self.velocity, &s[3..6])
            && self.rotation_angle.contains(angle)
            && within(&self.angular_velocity, &s[15..18])
            && (self.neighbor_count.0..=self.neighbor_count.1).contains(&neighbors.len())
            && neighbors.iter().all(|n| {
                within(&self.neighbor_rel_position, &n.0[0..3])
                    && within(&self.neighbor_rel_velocity, &n.0[3..6])
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSample {
    pub self_obs: SelfObservation,
    pub neighbors: Vec<NeighborObservation>,
}

fn draw3<R: Rng>(b: &[Bounds; 3], rng: &mut R) -> Vector3<f64> {
    Vector3::new(b[0].sample(rng), b[1].sample(rng), b[2].sample(rng))
}

fn random_axis<R: Rng>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n2 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            return Unit::new_normalize(v);
        }
    }
}

/// Deterministic uniform samples inside `ranges`. The rotation block is a
/// proper rotation matrix, flattened row-major.
pub fn sample_observations(
    seed: u64,
    count: usize,
    ranges: &ObservationRanges,
) -> Result<Vec<ObservationSample>, QuantizeError> {
    if count == 0 {
        return Err(QuantizeError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k_lo, k_hi) = ranges.neighbor_count;
    Ok((0..count)
        .map(|_| {
            let rel = draw3(&ranges.rel_position, &mut rng);
            let vel = draw3(&ranges.velocity, &mut rng);
            let angle = ranges.rotation_angle.sample(&mut rng);
            let axis = random_axis(&mut rng);
            let rotation = so3_exp(&(axis.into_inner() * angle));
            let omega = draw3(&ranges.angular_velocity, &mut rng);
            let k = if k_hi > k_lo {
                rng.random_range(k_lo..=k_hi)
            } else {
                k_lo
            };
            let neighbors = (0..k)
                .map(|_| {
                    let p = draw3(&ranges.neighbor_rel_position, &mut rng);
                    let v = draw3(&ranges.neighbor_rel_velocity, &mut rng);
                    NeighborObservation::new(&p, &v)
                })
                .collect();
            ObservationSample {
                self_obs: SelfObservation::new(&rel, &vel, &rotation, &omega),
                neighbors,
            }
        })
        .collect())
}

/// Largest component-wise `|float - fixed|` over the four actions, or
/// `None` if the fixed path overflowed.
pub fn action_error(
    p: &DeepsetsPolicy,
    qp: &QuantizedPolicy,
    sample: &ObservationSample,
) -> Option<f64> {
    let float = p.forward(&sample.self_obs, &sample.neighbors);
    let fixed = qp
        .forward_observation(&sample.self_obs, &sample.neighbors)
        .ok()?;
    Some(max_component_error(&float, &fixed))
}

pub fn max_component_error(a: &ActionVec, b: &ActionVec) -> f64 {
    (0..ACTION_DIM)
        .map(|i| (a.0[i] - b.0[i]).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub seed: u64,
    pub sample_count: usize,
    pub n_min: u32,
    pub n_max: u32,
    /// Word/accumulator widths and overflow mode; its `n` is ignored.
    pub format: QFormat,
    pub ranges: ObservationRanges,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_count: 1000,
            n_min: 1,
            n_max: 14,
            format: QFormat::new(1).expect("n=1 is valid for 32-bit words"),
            ranges: ObservationRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Max absolute output error for each swept `n`; `+inf` marks overflow.
    pub per_n: BTreeMap<u32, f64>,
    pub selected_n: u32,
    pub sample_count: usize,
    pub seed: u64,
    pub word_bits: u32,
    pub accum_bits: u32,
}

impl CalibrationReport {
    pub fn selected_error(&self) -> f64 {
        self.per_n[&self.selected_n]
    }
}

/// Sample stream for a given `n`: every `n` gets its own draw.
pub fn calibration_seed(seed: u64, n: u32) -> u64 {
    // splitmix64 finalizer over (seed, n)
    let mut z = seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Max error of `p` at `n` over `samples`; `+inf` on any overflow.
pub fn max_error_at(p: &DeepsetsPolicy, format: QFormat, samples: &[ObservationSample]) -> f64 {
    let Ok(qp) = quantize_policy(p, format) else {
        return f64::INFINITY;
    };
    samples
        .par_iter()
        .map(|s| action_error(p, &qp, s).unwrap_or(f64::INFINITY))
        .reduce(|| 0.0, f64::max)
}

/// Sweep `n` over `n_min..=n_max` with caller-supplied samples per `n`.
pub fn calibrate_with<F>(
    p: &DeepsetsPolicy,
    format: QFormat,
    n_min: u32,
    n_max: u32,
    samples_for: F,
) -> Result<BTreeMap<u32, f64>, QuantizeError>
where
    F: Fn(u32) -> Result<Vec<ObservationSample>, QuantizeError> + Sync,
{
    let range_err = |reason: String| QuantizeError::SweepRange {
        n_min,
        n_max,
        reason,
    };
    if n_min < 1 || n_min > n_max {
        return Err(range_err("need 1 <= n_min <= n_max".into()));
    }
    if let Err(e) = format.with_frac_bits(n_max) {
        return Err(range_err(e.to_string()));
    }
    (n_min..=n_max)
        .into_par_iter()
        .map(|n| {
            let fmt = format.with_frac_bits(n)?;
            let samples = samples_for(n)?;
            Ok((n, max_error_at(p, fmt, &samples)))
        })
        .collect()
}

/// Smallest error wins; ties go to the smaller `n`.
pub fn select_fraction_bits(per_n: &BTreeMap<u32, f64>) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (&n, &err) in per_n {
        if !err.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((n, err));
        }
    }
    best.map(|(n, _)| n)
}

/// Quantize policy and inputs for each `n` in ascending order, measure the
/// worst float-vs-fixed action error on fresh random samples, and pick the
/// `n` with the smallest maximum error.
pub fn calibrate_fraction_bits(
    p: &DeepsetsPolicy,
    config: &CalibrationConfig,
) -> Result<CalibrationReport, QuantizeError> {
    if config.sample_count == 0 {
        return Err(QuantizeError::NoSamples);
    }
    let per_n = calibrate_with(p, config.format, config.n_min, config.n_max, |n| {
        sample_observations(
            calibration_seed(config.seed, n),
            config.sample_count,
            &config.ranges,
        )
    })?;
    let selected_n = select_fraction_bits(&per_n).ok_or(QuantizeError::NoFeasibleFraction {
        n_min: config.n_min,
        n_max: config.n_max,
    })?;
    Ok(CalibrationReport {
        per_n,
        selected_n,
        sample_count: config.sample_count,
        seed: config.seed,
        word_bits: config.format.word_bits(),
        accum_bits: config.format.accum_bits(),
    })
}
