use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setflight_core::fixedpoint::{QFormat, QVector};
use setflight_core::network::{Activation, DeepsetsPolicy, Layer, Mlp};
use setflight_core::observation::{NeighborObservation, SelfObservation};
use setflight_core::quantizer::{
    calibrate_fraction_bits, quantize_observation, quantize_policy, select_fraction_bits,
    CalibrationConfig,
};

fn random_self(rng: &mut ChaCha8Rng) -> SelfObservation {
    SelfObservation(std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
}

fn random_neighbor(rng: &mut ChaCha8Rng) -> NeighborObservation {
    NeighborObservation(std::array::from_fn(|_| rng.random_range(-4.0..4.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbor_order_does_not_matter(seed in any::<u64>(), k in 0usize..7, n in 6u32..=14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = DeepsetsPolicy::random(seed);
        let qp = quantize_policy(&policy, QFormat::new(n).unwrap()).unwrap();
        let s = random_self(&mut rng);
        let neighbors: Vec<_> = (0..k).map(|_| random_neighbor(&mut rng)).collect();
        let (qs, qn) = quantize_observation(&s, &neighbors, qp.format()).unwrap();
        let fixed = qp.forward(&qs, &qn).unwrap();
        let float = policy.forward(&s, &neighbors);

        let mut order: Vec<usize> = (0..k).collect();
        for _ in 0..8 {
            order.shuffle(&mut rng);
            let qn_perm: Vec<QVector> = order.iter().map(|&i| qn[i].clone()).collect();
            let nb_perm: Vec<_> = order.iter().map(|&i| neighbors[i]).collect();
            prop_assert_eq!(&qp.forward(&qs, &qn_perm).unwrap(), &fixed);
            prop_assert_eq!(policy.forward(&s, &nb_perm), float);
        }
    }

    #[test]
    fn duplicating_every_neighbor_is_invisible(seed in any::<u64>(), k in 1usize..5, copies in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = DeepsetsPolicy::random(seed ^ 1);
        let qp = quantize_policy(&policy, QFormat::new(12).unwrap()).unwrap();
        let s = random_self(&mut rng);
        let neighbors: Vec<_> = (0..k).map(|_| random_neighbor(&mut rng)).collect();
        let repeated: Vec<_> = neighbors.iter().flat_map(|n| std::iter::repeat_n(*n, copies)).collect();

        // floor(c*s / (c*k)) == floor(s / k), so the integer path is exact.
        let (qs, qn) = quantize_observation(&s, &neighbors, qp.format()).unwrap();
        let (_, qr) = quantize_observation(&s, &repeated, qp.format()).unwrap();
        prop_assert_eq!(qp.forward(&qs, &qn).unwrap(), qp.forward(&qs, &qr).unwrap());

        let a = policy.forward(&s, &neighbors);
        let b = policy.forward(&s, &repeated);
        for i in 0..4 {
            prop_assert!((a.0[i] - b.0[i]).abs() <= 1e-9 * (1.0 + a.0[i].abs()));
        }
    }

    #[test]
    fn calibration_picks_the_lowest_minimum(seed in 0u64..1000) {
        let policy = DeepsetsPolicy::random(seed);
        let config = CalibrationConfig {
            seed,
            sample_count: 40,
            n_min: 2,
            n_max: 12,
            ..CalibrationConfig::default()
        };
        let report = calibrate_fraction_bits(&policy, &config).unwrap();
        let best = report.per_n[&report.selected_n];
        for (&n, &e) in &report.per_n {
            prop_assert!(best <= e);
            if e == best {
                prop_assert!(report.selected_n <= n);
            }
        }
        prop_assert_eq!(select_fraction_bits(&report.per_n), Some(report.selected_n));
    }
}

/// Integer weights in {-1, 0, 1}, integer biases.
fn integer_mlp(sizes: &[usize], last: Activation, rng: &mut ChaCha8Rng) -> Mlp {
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let weights = (0..w[0] * w[1])
                .map(|_| [-1.0, 0.0, 0.0, 1.0][rng.random_range(0..4)])
                .collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-2..=2) as f64).collect();
            let act = if i + 2 == sizes.len() {
                last
            } else {
                Activation::Relu
            };
            Layer::new(w[1], w[0], weights, bias, act).unwrap()
        })
        .collect();
    Mlp::new(layers).unwrap()
}

/// With integer weights and inputs on the 2^-n grid every intermediate value
/// is on the grid too, so flooring never discards anything and the two paths
/// must agree exactly.
#[test]
fn float_and_fixed_agree_on_representable_networks() {
    let n = 10;
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(-2048i64..2048) as f64 / 1024.0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = DeepsetsPolicy::new(
            integer_mlp(&[18, 16, 16], Activation::Relu, &mut rng),
            integer_mlp(&[6, 8, 8], Activation::Relu, &mut rng),
            integer_mlp(&[24, 32, 4], Activation::Identity, &mut rng),
        )
        .unwrap();
        let qp = quantize_policy(&policy, QFormat::new(n).unwrap()).unwrap();
        let s = SelfObservation(std::array::from_fn(|_| grid(&mut rng)));
        // k copies of one neighbor keep the mean on the grid.
        let one = NeighborObservation(std::array::from_fn(|_| grid(&mut rng)));
        let neighbors = vec![one; (seed % 4) as usize];
        let float = policy.forward(&s, &neighbors);
        let fixed = qp.forward_observation(&s, &neighbors).unwrap();
        assert_eq!(float, fixed, "seed {seed}");
    }
}

#[test]
fn quantized_policy_round_trips_through_dequantize() {
    let policy = DeepsetsPolicy::random(3);
    let qp = quantize_policy(&policy, QFormat::new(12).unwrap()).unwrap();
    let back = quantize_policy(&qp.dequantize(), qp.format()).unwrap();
    assert_eq!(qp, back);
}
