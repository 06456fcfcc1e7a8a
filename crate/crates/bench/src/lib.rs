//! Fixtures shared by the criterion benchmarks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saacm::rank_svm::{n_training, KernelMetric};
use saacm::{CmaParams, CmaState};

/// `n_training(dim)` points sorted by sphere value, ready for training.
pub fn ranked_points(dim: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<DVector<f64>> = (0..n_training(dim))
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0)))
        .collect();
    pts.sort_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()));
    pts
}

pub fn identity_metric(dim: usize) -> KernelMetric {
    KernelMetric::identity(dim)
}

pub fn fresh_state(dim: usize) -> CmaState {
    let params = CmaParams::builder(dim).build().expect("default parameters");
    CmaState::new(params, DVector::from_element(dim, 1.0), 0.5).expect("valid state")
}
