//! Shared fixtures for the benchmark targets.

use dualseg_core::nn::Tensor;
use dualseg_core::phantom::PhantomConfig;

/// Deterministic, non-constant `[n, c, h, w]` input.
pub fn ramp(shape: &[usize]) -> Tensor<f32> {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|i| (i % 97) as f32 / 97.0 - 0.5).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// A small cohort that still contains lesions, implants and distractors.
pub fn small_phantom() -> PhantomConfig {
    PhantomConfig { n_patients: 4, dims: [24, 64, 64], lesions_per_patient: [1, 2], ..Default::default() }
}
