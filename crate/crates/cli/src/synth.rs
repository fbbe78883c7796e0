//! The built-in synthetic benchmark: a jointly Gaussian feature/label pair
//! with identity feature covariance, a seeded random linear gain, and a
//! seeded random positive definite conditional covariance. The blocks are
//! assembled so the conditional covariance is known exactly, which gives
//! the oracle method and the analytic volume formulas something to stand
//! on.

use anyhow::{Context, Result};
use mve_core::gaussian::{condition, sample_joint, ConditionalGaussian, JointGaussianSpec};
use mve_core::Dataset;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SynthSpec;

/// Deterministically construct the joint law for a synthetic run.
pub fn build_spec(spec: &SynthSpec) -> Result<JointGaussianSpec> {
    let d = spec.d;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.data_seed);
    rng.set_stream(0xD47A);

    let gain = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    // Conditional covariance A A' + 0.3 I on the label block.
    let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
    let mut cond = a.dot(&a.t());
    for i in 0..n {
        cond[[i, i]] += 0.3;
    }

    let dim = d + n;
    let mut cov = Array2::<f64>::zeros((dim, dim));
    for i in 0..d {
        cov[[i, i]] = 1.0;
    }
    let ggt = gain.dot(&gain.t());
    for i in 0..n {
        for j in 0..d {
            cov[[d + i, j]] = gain[[i, j]];
            cov[[j, d + i]] = gain[[i, j]];
        }
        for j in 0..n {
            cov[[d + i, d + j]] = cond[[i, j]] + ggt[[i, j]];
        }
    }
    let mean = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
    JointGaussianSpec::new(mean, cov, d, n).context("synthetic covariance construction")
}

/// Dataset plus the analytic conditional law for the oracle method.
pub fn build_dataset(spec: &SynthSpec) -> Result<(Dataset, ConditionalGaussian)> {
    let joint = build_spec(spec)?;
    let cond = condition(&joint).context("conditioning the synthetic joint law")?;
    let data = sample_joint(&joint, spec.m, spec.data_seed).context("sampling synthetic data")?;
    Ok((data, cond))
}
