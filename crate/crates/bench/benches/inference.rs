use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use setflight_bench::fixture;
use setflight_core::quantizer::{calibrate_fraction_bits, quantize_observation, CalibrationConfig};
use setflight_core::DeepsetsPolicy;

fn forward(c: &mut Criterion) {
    let (policy, qp, samples) = fixture(12, 64);
    let mut group = c.benchmark_group("forward");
    group.bench_function("float", |b| {
        b.iter(|| {
            for s in &samples {
                black_box(policy.forward(&s.self_obs, &s.neighbors));
            }
        })
    });
    group.bench_function("fixed", |b| {
        b.iter(|| {
            for s in &samples {
                black_box(qp.forward_observation(&s.self_obs, &s.neighbors).unwrap());
            }
        })
    });
    let quantized: Vec<_> = samples
        .iter()
        .map(|s| quantize_observation(&s.self_obs, &s.neighbors, qp.format()).unwrap())
        .collect();
    group.bench_function("fixed_integer_only", |b| {
        b.iter(|| {
            for (q_self, q_nb) in &quantized {
                black_box(qp.forward(q_self, q_nb).unwrap());
            }
        })
    });
    group.finish();
}

fn calibration(c: &mut Criterion) {
    let policy = DeepsetsPolicy::random(7);
    let mut group = c.benchmark_group("calibrate");
    group.sample_size(10);
    for samples in [100, 1000] {
        let config = CalibrationConfig {
            sample_count: samples,
            ..CalibrationConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(samples), &config, |b, cfg| {
            b.iter(|| calibrate_fraction_bits(&policy, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, calibration);
criterion_main!(benches);
