//! Shared fixtures for the criterion benchmarks.

use mve_core::estimators::{fit_nle, ShapeModel};
use mve_core::lmve::{initial_params, MlpParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_vector(len: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(len, |_| rng.random_range(-1.0..1.0))
}

/// Random SPD matrix `A A' + 0.5 I`.
pub fn random_spd(n: usize, seed: u64) -> Array2<f64> {
    let a = random_matrix(n, n, seed);
    let mut c = a.dot(&a.t());
    for i in 0..n {
        c[[i, i]] += 0.5;
    }
    c
}

/// A fitted local-covariance model over `m` random training points.
pub fn random_nle(m: usize, d: usize, n: usize, seed: u64) -> ShapeModel {
    let x = random_matrix(m, d, seed);
    let resid = random_matrix(m, n, seed ^ 0xff);
    fit_nle(x.view(), resid.view(), 0.05, 0.95).expect("random training data is well formed")
}

pub fn random_params(d: usize, n: usize, seed: u64) -> MlpParams {
    initial_params(d, n, None, seed)
}
