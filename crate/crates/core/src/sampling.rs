//! Seeded sampling helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` points uniform in the box `[lo, hi]^dim`.
pub fn sample_box(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

/// `count` points uniform in a box with per-coordinate bounds.
pub fn sample_bounds(rng: &mut impl Rng, bounds: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
        .collect()
}
