//! Shared fixtures for the criterion benches.

use setflight_core::fixedpoint::QFormat;
use setflight_core::quantizer::{
    quantize_policy, sample_observations, ObservationRanges, ObservationSample,
};
use setflight_core::{DeepsetsPolicy, QuantizedPolicy};

/// A random policy, its quantized copy at `n`, and `count` observations.
pub fn fixture(n: u32, count: usize) -> (DeepsetsPolicy, QuantizedPolicy, Vec<ObservationSample>) {
    let policy = DeepsetsPolicy::random(42);
    let qp = quantize_policy(&policy, QFormat::new(n).expect("valid n")).expect("fits in 32 bits");
    let samples = sample_observations(42, count, &ObservationRanges::default()).expect("count > 0");
    (policy, qp, samples)
}
