//! Seeded, splittable random streams. Every consumer derives its own stream
//! from `(seed, stream)` so draws never depend on call order elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable stream id for a name, so init streams survive registry reordering.
pub fn stream_id(name: &str) -> u64 {
    crate::embeddings::fnv1a64(name.as_bytes())
}

pub fn uniform(shape: &[usize], bound: f64, seed: u64, stream: u64) -> Tensor {
    let mut rng = stream_rng(seed, stream);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::with_shape(shape.to_vec(), data)
}

pub fn normal(shape: &[usize], std: f64, seed: u64, stream: u64) -> Tensor {
    let mut rng = stream_rng(seed, stream);
    let dist = Normal::new(0.0, std).expect("finite positive std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Tensor::with_shape(shape.to_vec(), data)
}
