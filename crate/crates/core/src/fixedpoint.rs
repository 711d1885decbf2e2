//! Integer-only fixed-point arithmetic.
//!
//! A value is stored as a signed integer `raw` with an implied scale of
//! `2^-n`, where `n` is the number of fractional bits carried by its
//! [`QFormat`]. Every conversion and rescale rounds toward negative infinity
//! (an arithmetic right shift), so results are bit-identical on every
//! platform. Products and dot products are accumulated in a wider register
//! (`accum_bits`) and rescaled once at the end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WORD_BITS: u32 = 32;
pub const DEFAULT_ACCUM_BITS: u32 = 64;

/// What happens when a result leaves the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverflowMode {
    /// Report [`FixedPointError::Overflow`].
    #[default]
    Error,
    /// Clamp to the nearest representable value.
    Saturate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FixedPointError {
    #[error("invalid format: {0}")]
    InvalidFormat(String),
    #[error("{op}: value does not fit in {bits} signed bits")]
    Overflow { op: &'static str, bits: u32 },
    #[error("{op}: operands use different formats ({left} vs {right})")]
    FormatMismatch {
        op: &'static str,
        left: QFormat,
        right: QFormat,
    },
    #[error("{op}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("cannot quantize non-finite value {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, FixedPointError>;

/// Fixed-point format: fractional bits, storage width and accumulator width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    frac_bits: u32,
    word_bits: u32,
    accum_bits: u32,
    overflow: OverflowMode,
}

impl std::fmt::Display for QFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Q(n={}, word={}, acc={})",
            self.frac_bits, self.word_bits, self.accum_bits
        )
    }
}

impl QFormat {
    /// `n` fractional bits with the default 32-bit words and 64-bit accumulator.
    pub fn new(frac_bits: u32) -> Result<Self> {
        Self::with_widths(frac_bits, DEFAULT_WORD_BITS, DEFAULT_ACCUM_BITS)
    }

    pub fn with_widths(frac_bits: u32, word_bits: u32, accum_bits: u32) -> Result<Self> {
        if !(2..=64).contains(&word_bits) {
            return Err(FixedPointError::InvalidFormat(format!(
                "word_bits {word_bits} outside 2..=64"
            )));
        }
        if frac_bits < 1 || frac_bits > word_bits - 2 {
            return Err(FixedPointError::InvalidFormat(format!(
                "frac_bits {frac_bits} outside 1..={} for {word_bits}-bit words",
                word_bits.saturating_sub(2)
            )));
        }
        if accum_bits < 2 * word_bits || accum_bits > 128 {
            return Err(FixedPointError::InvalidFormat(format!(
                "accum_bits {accum_bits} must be in {}..=128",
                2 * word_bits
            )));
        }
        Ok(Self {
            frac_bits,
            word_bits,
            accum_bits,
            overflow: OverflowMode::Error,
        })
    }

    pub fn with_overflow(mut self, mode: OverflowMode) -> Self {
        self.overflow = mode;
        self
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn accum_bits(&self) -> u32 {
        self.accum_bits
    }

    pub fn overflow(&self) -> OverflowMode {
        self.overflow
    }

    /// Same widths and overflow mode, different fractional-bit count.
    pub fn with_frac_bits(&self, frac_bits: u32) -> Result<Self> {
        Ok(
            Self::with_widths(frac_bits, self.word_bits, self.accum_bits)?
                .with_overflow(self.overflow),
        )
    }

    pub fn word_min(&self) -> i64 {
        (-1i128 << (self.word_bits - 1)) as i64
    }

    pub fn word_max(&self) -> i64 {
        ((1i128 << (self.word_bits - 1)) - 1) as i64
    }

    fn accum_min(&self) -> i128 {
        if self.accum_bits == 128 {
            i128::MIN
        } else {
            -1i128 << (self.accum_bits - 1)
        }
    }

    fn accum_max(&self) -> i128 {
        if self.accum_bits == 128 {
            i128::MAX
        } else {
            (1i128 << (self.accum_bits - 1)) - 1
        }
    }

    /// Fit a wide value into the word range, honoring the overflow mode.
    fn narrow(&self, op: &'static str, value: i128) -> Result<i64> {
        let (lo, hi) = (self.word_min() as i128, self.word_max() as i128);
        if (lo..=hi).contains(&value) {
            return Ok(value as i64);
        }
        match self.overflow {
            OverflowMode::Error => Err(FixedPointError::Overflow {
                op,
                bits: self.word_bits,
            }),
            OverflowMode::Saturate => Ok(value.clamp(lo, hi) as i64),
        }
    }

    /// Checked accumulator addition.
    fn accumulate(&self, op: &'static str, acc: i128, term: i128) -> Result<i128> {
        let (lo, hi) = (self.accum_min(), self.accum_max());
        match acc.checked_add(term) {
            Some(v) if (lo..=hi).contains(&v) => Ok(v),
            sum => match self.overflow {
                OverflowMode::Error => Err(FixedPointError::Overflow {
                    op,
                    bits: self.accum_bits,
                }),
                OverflowMode::Saturate => Ok(match sum {
                    Some(v) => v.clamp(lo, hi),
                    None if term > 0 => hi,
                    None => lo,
                }),
            },
        }
    }

    fn check_same(&self, op: &'static str, other: &QFormat) -> Result<()> {
        if self.frac_bits != other.frac_bits
            || self.word_bits != other.word_bits
            || self.accum_bits != other.accum_bits
        {
            return Err(FixedPointError::FormatMismatch {
                op,
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }
}

/// A single fixed-point number: `raw * 2^-n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QScalar {
    raw: i64,
    format: QFormat,
}

impl QScalar {
    /// Wrap an existing raw integer. Fails if it does not fit the word.
    pub fn from_raw(raw: i64, format: QFormat) -> Result<Self> {
        if raw < format.word_min() || raw > format.word_max() {
            return Err(FixedPointError::Overflow {
                op: "from_raw",
                bits: format.word_bits,
            });
        }
        Ok(Self { raw, format })
    }

    pub fn zero(format: QFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn to_f64(&self) -> f64 {
        dequantize_scalar(self)
    }
}

/// Elements sharing one format.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QVector {
    raw: Vec<i64>,
    format: QFormat,
}

impl QVector {
    pub fn from_raw(raw: Vec<i64>, format: QFormat) -> Result<Self> {
        if raw
            .iter()
            .any(|&r| r < format.word_min() || r > format.word_max())
        {
            return Err(FixedPointError::Overflow {
                op: "from_raw",
                bits: format.word_bits,
            });
        }
        Ok(Self { raw, format })
    }

    pub fn zeros(len: usize, format: QFormat) -> Self {
        Self {
            raw: vec![0; len],
            format,
        }
    }

    pub fn quantize(values: &[f64], format: QFormat) -> Result<Self> {
        let raw = values
            .iter()
            .map(|&w| quantize_raw(w, &format))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { raw, format })
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let scale = inv_scale(self.format.frac_bits);
        self.raw.iter().map(|&r| r as f64 * scale).collect()
    }

    pub fn raw(&self) -> &[i64] {
        &self.raw
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<QScalar> {
        self.raw.get(i).map(|&raw| QScalar {
            raw,
            format: self.format,
        })
    }

    /// Element-wise ReLU.
    pub fn relu(&self) -> Self {
        Self {
            raw: self.raw.iter().map(|&r| r.max(0)).collect(),
            format: self.format,
        }
    }

    /// Concatenate `other` after `self`.
    pub fn concat(&self, other: &QVector) -> Result<Self> {
        self.format.check_same("concat", &other.format)?;
        let mut raw = Vec::with_capacity(self.len() + other.len());
        raw.extend_from_slice(&self.raw);
        raw.extend_from_slice(&other.raw);
        Ok(Self {
            raw,
            format: self.format,
        })
    }
}

fn inv_scale(n: u32) -> f64 {
    // Exact: 2^-n is a normal f64 for every n <= 62.
    f64::powi(2.0, -(n as i32))
}

fn quantize_raw(w: f64, format: &QFormat) -> Result<i64> {
    if !w.is_finite() {
        return Err(FixedPointError::NonFinite(w));
    }
    // Scaling by a power of two is exact unless it leaves the f64 range,
    // which only happens far outside any word range.
    let scaled = (w * f64::powi(2.0, format.frac_bits as i32)).floor();
    let limit = 2f64.powi(format.word_bits as i32 - 1);
    if scaled >= limit || scaled < -limit {
        return match format.overflow {
            OverflowMode::Error => Err(FixedPointError::Overflow {
                op: "quantize",
                bits: format.word_bits,
            }),
            OverflowMode::Saturate => Ok(if scaled > 0.0 {
                format.word_max()
            } else {
                format.word_min()
            }),
        };
    }
    Ok(scaled as i64)
}

/// `raw = floor(w * 2^n)`.
pub fn quantize_scalar(w: f64, format: QFormat) -> Result<QScalar> {
    Ok(QScalar {
        raw: quantize_raw(w, &format)?,
        format,
    })
}

/// `raw * 2^-n`, exact for every word width up to 53 bits.
pub fn dequantize_scalar(q: &QScalar) -> f64 {
    q.raw as f64 * inv_scale(q.format.frac_bits)
}

pub fn q_add(a: QScalar, b: QScalar) -> Result<QScalar> {
    a.format.check_same("q_add", &b.format)?;
    let sum = a.format.accumulate("q_add", a.raw as i128, b.raw as i128)?;
    Ok(QScalar {
        raw: a.format.narrow("q_add", sum)?,
        format: a.format,
    })
}

/// `floor(a.raw * b.raw / 2^n)`.
pub fn q_mul(a: QScalar, b: QScalar) -> Result<QScalar> {
    a.format.check_same("q_mul", &b.format)?;
    let product = a.raw as i128 * b.raw as i128;
    let scaled = product >> a.format.frac_bits;
    Ok(QScalar {
        raw: a.format.narrow("q_mul", scaled)?,
        format: a.format,
    })
}

/// Dot product with one rescale at the end.
pub fn q_dot(a: &QVector, b: &QVector) -> Result<QScalar> {
    q_dot_bias(a, b, None)
}

/// `floor((sum a_i*b_i + bias*2^n) / 2^n)`, summed in ascending index
/// order in the accumulator. The bias enters at product precision so the
/// whole affine term is rounded exactly once.
pub fn q_dot_bias(a: &QVector, b: &QVector, bias: Option<QScalar>) -> Result<QScalar> {
    let format = a.format;
    format.check_same("q_dot", &b.format)?;
    if a.len() != b.len() {
        return Err(FixedPointError::LengthMismatch {
            op: "q_dot",
            left: a.len(),
            right: b.len(),
        });
    }
    if let Some(bias) = &bias {
        format.check_same("q_dot", &bias.format)?;
    }
    Ok(QScalar {
        raw: dot_bias_raw(&format, &a.raw, &b.raw, bias.map(|c| c.raw))?,
        format,
    })
}

/// Kernel of [`q_dot_bias`] on raw slices of equal length, all in `format`.
pub(crate) fn dot_bias_raw(
    format: &QFormat,
    a: &[i64],
    b: &[i64],
    bias: Option<i64>,
) -> Result<i64> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = match bias {
        Some(c) => format.accumulate("q_dot", 0, (c as i128) << format.frac_bits)?,
        None => 0,
    };
    for (&x, &y) in a.iter().zip(b) {
        acc = format.accumulate("q_dot", acc, x as i128 * y as i128)?;
    }
    format.narrow("q_dot", acc >> format.frac_bits)
}

pub fn q_relu(a: QScalar) -> QScalar {
    QScalar {
        raw: a.raw.max(0),
        format: a.format,
    }
}

/// Element-wise `floor(sum / k)` over `k = vectors.len()` vectors.
pub fn q_mean(vectors: &[QVector]) -> Result<QVector> {
    let first = vectors.first().ok_or(FixedPointError::Empty("q_mean"))?;
    let format = first.format;
    let len = first.len();
    for v in &vectors[1..] {
        format.check_same("q_mean", &v.format)?;
        if v.len() != len {
            return Err(FixedPointError::LengthMismatch {
                op: "q_mean",
                left: len,
                right: v.len(),
            });
        }
    }
    let k = vectors.len() as i128;
    let raw = (0..len)
        .map(|i| {
            let mut sum = 0i128;
            for v in vectors {
                sum = format.accumulate("q_mean", sum, v.raw[i] as i128)?;
            }
            format.narrow("q_mean", sum.div_euclid(k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QVector { raw, format })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(raw: i64, n: u32) -> QScalar {
        QScalar::from_raw(raw, QFormat::new(n).unwrap()).unwrap()
    }

    fn qv(raw: &[i64], n: u32) -> QVector {
        QVector::from_raw(raw.to_vec(), QFormat::new(n).unwrap()).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(QFormat::new(0).is_err());
        assert!(QFormat::new(30).is_ok());
        assert!(QFormat::new(31).is_err());
        assert!(QFormat::with_widths(8, 16, 31).is_err());
        assert!(QFormat::with_widths(8, 16, 32).is_ok());
        assert!(QFormat::with_widths(8, 64, 128).is_ok());
    }

    #[test]
    fn quantize_examples() {
        let f4 = QFormat::new(4).unwrap();
        assert_eq!(quantize_scalar(0.5, f4).unwrap().raw(), 8);
        assert_eq!(quantize_scalar(-0.3, f4).unwrap().raw(), -5);
        assert_eq!(
            quantize_scalar(0.0, QFormat::new(10).unwrap())
                .unwrap()
                .raw(),
            0
        );
        assert_eq!(quantize_scalar(-0.0, f4).unwrap().raw(), 0);
    }

    #[test]
    fn quantize_overflow_and_saturation() {
        let f = QFormat::with_widths(4, 8, 16).unwrap();
        // Range is [-128, 127] raw, i.e. [-8, 7.9375].
        assert_eq!(quantize_scalar(7.9375, f).unwrap().raw(), 127);
        assert_eq!(quantize_scalar(-8.0, f).unwrap().raw(), -128);
        assert!(matches!(
            quantize_scalar(8.0, f),
            Err(FixedPointError::Overflow { .. })
        ));
        assert!(quantize_scalar(-8.0001, f).is_err());
        assert!(quantize_scalar(f64::NAN, f).is_err());
        let sat = f.with_overflow(OverflowMode::Saturate);
        assert_eq!(quantize_scalar(100.0, sat).unwrap().raw(), 127);
        assert_eq!(quantize_scalar(-100.0, sat).unwrap().raw(), -128);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(q(8, 4).to_f64(), 0.5);
        assert_eq!(q(-5, 4).to_f64(), -0.3125);
        assert_eq!(q(0, 17).to_f64(), 0.0);
    }

    #[test]
    fn add_examples() {
        assert_eq!(q_add(q(8, 4), q(8, 4)).unwrap().raw(), 16);
        assert_eq!(q_add(q(-77, 4), q(0, 4)).unwrap().raw(), -77);
        assert_eq!(q_add(q(-5, 4), q(8, 4)).unwrap().raw(), 3);
        assert!(matches!(
            q_add(q(1, 4), q(1, 5)),
            Err(FixedPointError::FormatMismatch { .. })
        ));
        let f = QFormat::new(4).unwrap();
        let max = QScalar::from_raw(f.word_max(), f).unwrap();
        assert!(q_add(max, q(1, 4)).is_err());
    }

    #[test]
    fn mul_examples() {
        assert_eq!(q_mul(q(8, 4), q(8, 4)).unwrap().raw(), 4);
        assert_eq!(q_mul(q(-5, 4), q(8, 4)).unwrap().raw(), -3);
        assert_eq!(q_mul(q(-1234, 4), q(16, 4)).unwrap().raw(), -1234);
        let f = QFormat::new(4).unwrap();
        let big = QScalar::from_raw(f.word_max(), f).unwrap();
        assert!(q_mul(big, big).is_err());
        let sat = f.with_overflow(OverflowMode::Saturate);
        let big = QScalar::from_raw(sat.word_max(), sat).unwrap();
        assert_eq!(q_mul(big, big).unwrap().raw(), sat.word_max());
    }

    #[test]
    fn dot_examples() {
        assert_eq!(q_dot(&qv(&[8], 4), &qv(&[8], 4)).unwrap().raw(), 4);
        assert_eq!(
            q_dot(&qv(&[0, 0, 0], 4), &qv(&[9, -3, 7], 4))
                .unwrap()
                .raw(),
            0
        );
        assert_eq!(q_dot(&qv(&[8, 8], 4), &qv(&[8, -8], 4)).unwrap().raw(), 0);
        assert!(matches!(
            q_dot(&qv(&[1, 2], 4), &qv(&[1], 4)),
            Err(FixedPointError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dot_rounds_once() {
        // Per-term rescaling would give floor(1/16)+floor(1/16) = 0.
        let a = qv(&[1, 1], 4);
        let b = qv(&[8, 8], 4);
        assert_eq!(q_dot(&a, &b).unwrap().raw(), 1);
    }

    #[test]
    fn dot_bias_enters_accumulator() {
        let a = qv(&[3], 4);
        let b = qv(&[5], 4);
        // (15 + 2*16) >> 4 = 47 >> 4 = 2
        assert_eq!(q_dot_bias(&a, &b, Some(q(2, 4))).unwrap().raw(), 2);
        // (15 - 1*16) >> 4 = -1 >> 4 = -1
        assert_eq!(q_dot_bias(&a, &b, Some(q(-1, 4))).unwrap().raw(), -1);
    }

    #[test]
    fn dot_accumulator_overflow() {
        let f = QFormat::with_widths(2, 8, 16).unwrap();
        let v = QVector::from_raw(vec![127; 4], f).unwrap();
        // 4 * 127^2 = 64516 > 32767
        assert!(q_dot(&v, &v).is_err());
        let sat = f.with_overflow(OverflowMode::Saturate);
        let v = QVector::from_raw(vec![127; 4], sat).unwrap();
        assert_eq!(q_dot(&v, &v).unwrap().raw(), 127);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(q_relu(q(-5, 4)).raw(), 0);
        assert_eq!(q_relu(q(8, 4)).raw(), 8);
        assert_eq!(q_relu(q(0, 4)).raw(), 0);
    }

    #[test]
    fn mean_examples() {
        let v = qv(&[5, -3, 11], 6);
        assert_eq!(q_mean(std::slice::from_ref(&v)).unwrap(), v);
        assert_eq!(
            q_mean(&[qv(&[2, 4], 4), qv(&[4, 8], 4)]).unwrap().raw(),
            &[3, 6]
        );
        assert_eq!(q_mean(&[qv(&[1], 4), qv(&[2], 4)]).unwrap().raw(), &[1]);
        assert_eq!(q_mean(&[qv(&[-1], 4), qv(&[-2], 4)]).unwrap().raw(), &[-2]);
        assert!(matches!(q_mean(&[]), Err(FixedPointError::Empty(_))));
    }
}
