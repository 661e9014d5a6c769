//! Input generators shared by the benchmarks.

use rand::Rng;
use rtbf_core::{seed, UserTerms};

/// Pooling coefficients for `j` types.
pub fn pooling_instance(j: usize, key: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng_for(key, &[]);
    let a = (0..j).map(|_| rng.random_range(0.1..10.0)).collect();
    let b = (0..j).map(|_| rng.random_range(0.1..10.0)).collect();
    (a, b)
}

/// Per-user Stage-III/IV terms for `n` users.
pub fn user_terms(n: usize, key: u64) -> Vec<UserTerms> {
    let mut rng = seed::rng_for(key, &[]);
    (0..n)
        .map(|_| UserTerms {
            reward: rng.random_range(0.0..10.0),
            privacy: rng.random_range(0.0..8.0),
            unlearn_rate: rng.random_range(0.0..0.01),
            sunk: rng.random_range(0.0..1.0),
            sq_loss: rng.random_range(0.0..1.0),
            shapley: rng.random_range(-1.0..1.0),
        })
        .collect()
}
