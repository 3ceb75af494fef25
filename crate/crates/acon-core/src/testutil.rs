//! Seeded randomness helpers shared by unit tests, integration tests, and
//! benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Deterministic RNG for a given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with elements drawn uniformly from `[-1, 1)`.
pub fn uniform_tensor<S: Scalar>(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::from_f64(r.gen_range(-1.0..1.0)))
}

/// Tensor with elements drawn uniformly from `[lo, hi)`.
pub fn uniform_tensor_in<S: Scalar>(
    shape: &[usize],
    lo: f64,
    hi: f64,
    r: &mut ChaCha8Rng,
) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::from_f64(r.gen_range(lo..hi)))
}
