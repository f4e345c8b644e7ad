//! Seeded noise generators for synthetic data. Every function takes an
//! explicit seed and is deterministic for a given (input, seed) pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::POPULATION_HEADROOM;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Scales each value by (1 + fraction·N(0,1)), floored at zero so rates stay
/// physical.
pub fn apply_multiplicative_noise(values: &[f64], fraction: f64, seed: u64) -> Vec<f64> {
    values
        .iter()
        .zip(normals(values.len(), seed))
        .map(|(&v, n)| (v * (1.0 + fraction * n)).max(0.0))
        .collect()
}

/// Adds sigma·N(0,1) to each population sample, clamped to the valid
/// population range.
pub fn add_population_noise(values: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    values
        .iter()
        .zip(normals(values.len(), seed))
        .map(|(&v, n)| (v + sigma * n).clamp(0.0, 1.0 + POPULATION_HEADROOM))
        .collect()
}
