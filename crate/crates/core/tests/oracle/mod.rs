//! Arbitrary-precision reference for the fixed-point operations.
//!
//! Every value is a `BigInt`; rounding is `div_floor` by a power of two and
//! f64 inputs are decomposed exactly into mantissa and exponent, so nothing
//! here shares code or rounding behavior with the implementation under test.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Float, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setflight_core::fixedpoint::{
    dequantize_scalar, q_add, q_dot_bias, q_mean, q_mul, q_relu, quantize_scalar, FixedPointError,
    OverflowMode, QFormat, QScalar, QVector,
};

#[derive(Clone, Copy, Debug)]
pub struct RefFormat {
    pub n: u32,
    pub word: u32,
    pub accum: u32,
    pub saturate: bool,
}

impl RefFormat {
    pub fn to_qformat(self) -> QFormat {
        let mode = if self.saturate {
            OverflowMode::Saturate
        } else {
            OverflowMode::Error
        };
        QFormat::with_widths(self.n, self.word, self.accum)
            .unwrap()
            .with_overflow(mode)
    }
}

fn pow2(k: u32) -> BigInt {
    BigInt::one() << k
}

fn range(bits: u32) -> (BigInt, BigInt) {
    (-pow2(bits - 1), pow2(bits - 1) - 1)
}

/// `None` means the operation must fail with an overflow.
fn fit(v: BigInt, bits: u32, saturate: bool) -> Option<BigInt> {
    let (lo, hi) = range(bits);
    if v < lo {
        saturate.then_some(lo)
    } else if v > hi {
        saturate.then_some(hi)
    } else {
        Some(v)
    }
}

fn floor_shift(v: &BigInt, k: u32) -> BigInt {
    v.div_floor(&pow2(k))
}

pub fn ref_quantize(w: f64, f: RefFormat) -> Option<i64> {
    let (mantissa, exp, sign) = Float::integer_decode(w);
    let m = BigInt::from(mantissa) * BigInt::from(sign);
    let e = exp as i64 + f.n as i64;
    let scaled = if e >= 0 {
        m << (e as u32)
    } else {
        floor_shift(&m, (-e) as u32)
    };
    fit(scaled, f.word, f.saturate).map(|v| v.to_i64().unwrap())
}

pub fn ref_add(a: i64, b: i64, f: RefFormat) -> Option<i64> {
    let s = fit(BigInt::from(a) + b, f.accum, f.saturate)?;
    fit(s, f.word, f.saturate).map(|v| v.to_i64().unwrap())
}

pub fn ref_mul(a: i64, b: i64, f: RefFormat) -> Option<i64> {
    let p = BigInt::from(a) * BigInt::from(b);
    fit(floor_shift(&p, f.n), f.word, f.saturate).map(|v| v.to_i64().unwrap())
}

/// Products summed in index order, each partial sum held to the accumulator.
pub fn ref_dot(a: &[i64], b: &[i64], bias: Option<i64>, f: RefFormat) -> Option<i64> {
    let mut acc = match bias {
        Some(c) => fit(BigInt::from(c) * pow2(f.n), f.accum, f.saturate)?,
        None => BigInt::zero(),
    };
    for (x, y) in a.iter().zip(b) {
        acc = fit(
            acc + BigInt::from(*x) * BigInt::from(*y),
            f.accum,
            f.saturate,
        )?;
    }
    fit(floor_shift(&acc, f.n), f.word, f.saturate).map(|v| v.to_i64().unwrap())
}

pub fn ref_mean(vs: &[Vec<i64>], f: RefFormat) -> Option<Vec<i64>> {
    let k = BigInt::from(vs.len());
    (0..vs[0].len())
        .map(|i| {
            let mut s = BigInt::zero();
            for v in vs {
                s = fit(s + v[i], f.accum, f.saturate)?;
            }
            fit(s.div_floor(&k), f.word, f.saturate).map(|v| v.to_i64().unwrap())
        })
        .collect()
}

pub fn ref_relu(a: i64) -> i64 {
    a.max(0)
}

fn outcome(r: Result<QScalar, FixedPointError>) -> Result<Option<i64>, String> {
    match r {
        Ok(q) => Ok(Some(q.raw())),
        Err(FixedPointError::Overflow { .. }) => Ok(None),
        Err(e) => Err(e.to_string()),
    }
}

fn random_format(rng: &mut ChaCha8Rng) -> RefFormat {
    let word = [8u32, 12, 16, 24, 32][rng.random_range(0..5)];
    let accum = match rng.random_range(0..3) {
        0 => 2 * word,
        1 => (2 * word + 6).min(128),
        _ => 64.max(2 * word),
    };
    RefFormat {
        n: rng.random_range(1..=word - 2),
        word,
        accum,
        saturate: rng.random_bool(0.3),
    }
}

fn random_raw(rng: &mut ChaCha8Rng, f: RefFormat) -> i64 {
    let lo = -(1i64 << (f.word - 1));
    let hi = (1i64 << (f.word - 1)) - 1;
    match rng.random_range(0..6) {
        0 => lo,
        1 => hi,
        2 => rng.random_range(-4..=4),
        3 => rng.random_range(lo / 64..=hi / 64),
        _ => rng.random_range(lo..=hi),
    }
}

fn random_real(rng: &mut ChaCha8Rng, f: RefFormat) -> f64 {
    let span = 2f64.powi((f.word - 1 - f.n) as i32);
    match rng.random_range(0..6) {
        // Exactly representable, including the word boundaries.
        0 => random_raw(rng, f) as f64 * 2f64.powi(-(f.n as i32)),
        // Just outside the range.
        1 => span * rng.random_range(1.0..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        // Tiny magnitudes, below one ulp of the format.
        2 => rng.random_range(-1.0..1.0) * 2f64.powi(-(f.n as i32) - rng.random_range(0..40)),
        // A hair either side of a grid point.
        3 => {
            let g = random_raw(rng, f) as f64 * 2f64.powi(-(f.n as i32));
            let eps = g.abs().max(1.0) * f64::EPSILON;
            if rng.random_bool(0.5) {
                g + eps
            } else {
                g - eps
            }
        }
        _ => rng.random_range(-span..span),
    }
}

#[derive(Debug, Default)]
pub struct Campaign {
    /// Operations checked, counted per call.
    pub checked: usize,
    pub overflows: usize,
    pub mismatches: Vec<String>,
}

impl Campaign {
    fn record(&mut self, what: &str, got: Result<Option<i64>, String>, want: Option<i64>) {
        self.checked += 1;
        if want.is_none() {
            self.overflows += 1;
        }
        if got.as_ref() != Ok(&want) && self.mismatches.len() < 20 {
            self.mismatches
                .push(format!("{what}: got {got:?}, want {want:?}"));
        }
    }
}

/// Run `cases` random cases; each case exercises every operation once.
pub fn run_campaign(seed: u64, cases: usize) -> Campaign {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Campaign::default();
    for _ in 0..cases {
        let f = random_format(&mut rng);
        let qf = f.to_qformat();
        let scalar = |raw| QScalar::from_raw(raw, qf).unwrap();

        let w = random_real(&mut rng, f);
        let want = ref_quantize(w, f);
        let got = outcome(quantize_scalar(w, qf));
        if let (Ok(Some(raw)), false) = (&got, f.saturate) {
            // In range: dequantize is exact and floor puts it within one ulp below w.
            let back = dequantize_scalar(&scalar(*raw));
            let ulp = 2f64.powi(-(f.n as i32));
            if !(back <= w && w - back < ulp) {
                c.mismatches.push(format!("dequantize {w} {f:?}: {back}"));
            }
        }
        c.record(&format!("quantize({w:e}, {f:?})"), got, want);

        let (a, b) = (random_raw(&mut rng, f), random_raw(&mut rng, f));
        c.record(
            &format!("add({a}, {b}, {f:?})"),
            outcome(q_add(scalar(a), scalar(b))),
            ref_add(a, b, f),
        );
        c.record(
            &format!("mul({a}, {b}, {f:?})"),
            outcome(q_mul(scalar(a), scalar(b))),
            ref_mul(a, b, f),
        );
        c.record(
            &format!("relu({a})"),
            Ok(Some(q_relu(scalar(a)).raw())),
            Some(ref_relu(a)),
        );

        let len = rng.random_range(0..=24);
        let xs: Vec<i64> = (0..len).map(|_| random_raw(&mut rng, f)).collect();
        let ys: Vec<i64> = (0..len).map(|_| random_raw(&mut rng, f)).collect();
        let bias = rng.random_bool(0.7).then(|| random_raw(&mut rng, f));
        let got = outcome(q_dot_bias(
            &QVector::from_raw(xs.clone(), qf).unwrap(),
            &QVector::from_raw(ys.clone(), qf).unwrap(),
            bias.map(scalar),
        ));
        c.record(
            &format!("dot({xs:?}, {ys:?}, {bias:?}, {f:?})"),
            got,
            ref_dot(&xs, &ys, bias, f),
        );

        let k = rng.random_range(1..=8);
        let dim = rng.random_range(1..=8);
        let vs: Vec<Vec<i64>> = (0..k)
            .map(|_| (0..dim).map(|_| random_raw(&mut rng, f)).collect())
            .collect();
        let qs: Vec<QVector> = vs
            .iter()
            .map(|v| QVector::from_raw(v.clone(), qf).unwrap())
            .collect();
        let got = match q_mean(&qs) {
            Ok(m) => Ok(Some(m.raw().to_vec())),
            Err(FixedPointError::Overflow { .. }) => Ok(None),
            Err(e) => Err(e.to_string()),
        };
        let want = ref_mean(&vs, f);
        c.checked += 1;
        if got != Ok(want.clone()) && c.mismatches.len() < 20 {
            c.mismatches
                .push(format!("mean({vs:?}, {f:?}): got {got:?}, want {want:?}"));
        }
    }
    c
}
