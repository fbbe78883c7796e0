//! Shared helpers for the integration tests.

use mve_core::gaussian::JointGaussianSpec;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Joint Gaussian over (x, y) with identity feature covariance, a random
/// linear gain of the given scale, and an exactly known conditional
/// covariance `cond`: the blocks are assembled so that
/// `Sigma_y|x = cond` holds in closed form.
pub fn joint_spec_with_conditional(
    d: usize,
    gain_scale: f64,
    cond: &Array2<f64>,
    seed: u64,
) -> (JointGaussianSpec, Array2<f64>) {
    let n = cond.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = Array2::from_shape_fn((n, d), |_| rng.random_range(-gain_scale..gain_scale));

    let dim = d + n;
    let mut cov = Array2::<f64>::zeros((dim, dim));
    for i in 0..d {
        cov[[i, i]] = 1.0;
    }
    // Sigma_yx = G, Sigma_yy = cond + G G'.
    let ggt = gain.dot(&gain.t());
    for a in 0..n {
        for j in 0..d {
            cov[[d + a, j]] = gain[[a, j]];
            cov[[j, d + a]] = gain[[a, j]];
        }
        for b in 0..n {
            cov[[d + a, d + b]] = cond[[a, b]] + ggt[[a, b]];
        }
    }
    let mean = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
    (
        JointGaussianSpec::new(mean, cov, d, n).expect("constructed covariance is PD"),
        gain,
    )
}
