//! Seeded, stream-splittable randomness.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, stream)`, so independent workers (one stream each) reproduce the
//! same numbers regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// A fresh generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)`.
pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random::<f64>()
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` normal draws scaled by `std`, as f32.
pub fn normal_vec(rng: &mut impl Rng, n: usize, std: f32) -> alloc::vec::Vec<f32> {
    (0..n).map(|_| normal(rng) as f32 * std).collect()
}

/// Fisher–Yates shuffle of `0..n`.
pub fn permutation(rng: &mut impl Rng, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
