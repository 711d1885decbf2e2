mod oracle;

use proptest::prelude::*;

use oracle::{ref_dot, ref_mean, ref_mul, ref_quantize, run_campaign, RefFormat};
use setflight_core::fixedpoint::{
    dequantize_scalar, q_dot, q_mean, q_mul, quantize_scalar, QFormat, QScalar, QVector,
};

#[test]
fn matches_reference_on_random_inputs() {
    let c = run_campaign(0x5eed, 100_000);
    assert!(c.mismatches.is_empty(), "{:#?}", c.mismatches);
    assert!(c.checked >= 600_000);
    // The campaign is only meaningful if it reaches the overflow paths.
    assert!(c.overflows > 1_000, "{} overflows", c.overflows);
}

#[test]
fn reference_agrees_with_worked_examples() {
    let f = RefFormat {
        n: 8,
        word: 32,
        accum: 64,
        saturate: false,
    };
    assert_eq!(ref_quantize(0.3, f), Some(76));
    assert_eq!(ref_quantize(-0.3, f), Some(-77));
    assert_eq!(ref_mul(384, 128, f), Some(192));
    assert_eq!(ref_mul(-3, 1, f), Some(-1));
    assert_eq!(ref_dot(&[1, 1], &[128, 128], None, f), Some(1));
    assert_eq!(ref_mean(&[vec![1], vec![2]], f), Some(vec![1]));
    assert_eq!(ref_mean(&[vec![-1], vec![-2]], f), Some(vec![-2]));
}

fn fmt(n: u32) -> QFormat {
    QFormat::new(n).unwrap()
}

proptest! {
    #[test]
    fn round_trip_error_below_resolution(w in -1000.0f64..1000.0, n in 1u32..=20) {
        let q = quantize_scalar(w, fmt(n)).unwrap();
        let back = dequantize_scalar(&q);
        prop_assert!(back <= w);
        prop_assert!(w - back < 2f64.powi(-(n as i32)));
    }

    #[test]
    fn quantize_is_monotone(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0, n in 1u32..=20) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ql = quantize_scalar(lo, fmt(n)).unwrap().raw();
        let qh = quantize_scalar(hi, fmt(n)).unwrap().raw();
        prop_assert!(ql <= qh);
    }

    #[test]
    fn product_error_bounded(a in -8.0f64..8.0, b in -8.0f64..8.0, n in 4u32..=12) {
        let f = fmt(n);
        let qa = quantize_scalar(a, f).unwrap();
        let qb = quantize_scalar(b, f).unwrap();
        let p = dequantize_scalar(&q_mul(qa, qb).unwrap());
        let ulp = 2f64.powi(-(n as i32));
        // Each factor is off by < 1 ulp, plus one floor on the product.
        let bound = ulp * (a.abs() + b.abs() + ulp) + ulp;
        prop_assert!((p - a * b).abs() <= bound, "{} vs {}", p, a * b);
    }

    #[test]
    fn mean_is_permutation_invariant(
        rows in prop::collection::vec(prop::collection::vec(-100_000i64..100_000, 5), 1..10),
        seed in any::<u64>(),
    ) {
        let f = fmt(10);
        let vs: Vec<QVector> = rows.iter().map(|r| QVector::from_raw(r.clone(), f).unwrap()).collect();
        let mut shuffled = vs.clone();
        // Deterministic Fisher-Yates from the proptest-drawn seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(q_mean(&vs).unwrap(), q_mean(&shuffled).unwrap());
    }

    #[test]
    fn dot_with_unit_vector_selects(raws in prop::collection::vec(-1_000_000i64..1_000_000, 1..12), pick in any::<prop::sample::Index>()) {
        let f = fmt(12);
        let i = pick.index(raws.len());
        let mut e = vec![0i64; raws.len()];
        e[i] = 1 << 12;
        let d = q_dot(
            &QVector::from_raw(raws.clone(), f).unwrap(),
            &QVector::from_raw(e, f).unwrap(),
        )
        .unwrap();
        prop_assert_eq!(d, QScalar::from_raw(raws[i], f).unwrap());
    }
}
