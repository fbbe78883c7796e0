//! Closed-form Gaussian machinery used as ground truth: the chi-square
//! inverse CDF, the optimal single ellipsoid for a Gaussian vector, joint
//! Gaussian conditioning, seeded samplers, and Monte-Carlo coverage.
//!
//! For `y ~ N(mu, Sigma)` the smallest-volume region covering `y` with
//! probability `eta` is the ellipsoid with shape `kappa * Sigma`, where
//! `kappa` is the chi-square quantile at `eta` with `n` degrees of freedom.
//! Conditioning a joint Gaussian gives a linear mean map and an
//! x-independent conditional covariance, so that optimum extends pointwise.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::ellipsoid::{Ellipsoid, EllipsoidError};
use crate::linalg::{self, LinalgError, SpdFactor};
use crate::special::regularized_lower_gamma;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("probability must lie in [0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("degrees of freedom must be at least 1")]
    ZeroDof,
    #[error("coverage level must be positive; eta = 0 yields a degenerate ellipsoid")]
    DegenerateCoverage,
    #[error("mean has length {mean_len}, expected feature dim {d} + label dim {n}")]
    MeanLength { mean_len: usize, d: usize, n: usize },
    #[error("covariance is {rows}x{cols}, expected {expected}x{expected}")]
    CovarianceShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("joint covariance is not symmetric positive definite: {0}")]
    CovarianceNotPd(LinalgError),
    #[error("feature block of the covariance is singular: {0}")]
    SingularFeatureBlock(LinalgError),
    #[error("input has dimension {got}, expected {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Inverse CDF of the chi-square distribution with `n` degrees of freedom.
///
/// Solves `P(n/2, x/2) = p` for the regularized lower incomplete gamma `P`
/// by bisection; the bracket is expanded until it contains the root. The
/// result is exact to f64 bracket resolution, so `|P(n/2, x/2) - p|` is
/// bounded by the accuracy of `P` itself (well below 1e-10).
pub fn chi2_inv_cdf(p: f64, n: usize) -> Result<f64, GaussianError> {
    if !(0.0..1.0).contains(&p) || !p.is_finite() {
        return Err(GaussianError::InvalidProbability(p));
    }
    if n == 0 {
        return Err(GaussianError::ZeroDof);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let a = n as f64 / 2.0;
    let cdf = |x: f64| regularized_lower_gamma(a, x / 2.0);

    // Mean + a generous number of standard deviations, doubled until the
    // CDF exceeds p.
    let mut hi = n as f64 + 10.0 * (2.0 * n as f64).sqrt() + 10.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // f64 resolution reached
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimum-volume ellipsoid covering `y ~ N(mu, sigma)` with probability
/// `eta`: shape `kappa * sigma` with `kappa` the chi-square quantile at
/// `eta`.
pub fn optimal_single_ellipsoid(
    mu: Array1<f64>,
    sigma: ArrayView2<'_, f64>,
    eta: f64,
) -> Result<Ellipsoid, GaussianError> {
    if eta == 0.0 {
        return Err(GaussianError::DegenerateCoverage);
    }
    let kappa = chi2_inv_cdf(eta, mu.len())?;
    Ok(Ellipsoid::new(mu, &sigma * kappa)?)
}

/// A joint Gaussian over stacked `(x, y)` with `x` of dimension `d` and `y`
/// of dimension `n`.
#[derive(Debug, Clone)]
pub struct JointGaussianSpec {
    mean: Array1<f64>,
    cov: Array2<f64>,
    factor: SpdFactor,
    d: usize,
    n: usize,
}

impl JointGaussianSpec {
    pub fn new(
        mean: Array1<f64>,
        cov: Array2<f64>,
        d: usize,
        n: usize,
    ) -> Result<Self, GaussianError> {
        let dim = d + n;
        if mean.len() != dim {
            return Err(GaussianError::MeanLength {
                mean_len: mean.len(),
                d,
                n,
            });
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(GaussianError::CovarianceShape {
                rows: cov.nrows(),
                cols: cov.ncols(),
                expected: dim,
            });
        }
        let cov = linalg::symmetrize(cov.view());
        let factor = SpdFactor::new(cov.view()).map_err(GaussianError::CovarianceNotPd)?;
        Ok(Self {
            mean,
            cov,
            factor,
            d,
            n,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn label_dim(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn cov(&self) -> ArrayView2<'_, f64> {
        self.cov.view()
    }

    /// Marginal distribution of the label block: `(mu_y, Sigma_yy)`.
    pub fn label_marginal(&self) -> (Array1<f64>, Array2<f64>) {
        let d = self.d;
        (
            self.mean.slice(s![d..]).to_owned(),
            self.cov.slice(s![d.., d..]).to_owned(),
        )
    }
}

/// The conditional law of `y` given `x` for a joint Gaussian: a linear mean
/// map plus an x-independent conditional covariance.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    gain: Array2<f64>,
    offset: Array1<f64>,
    cond_cov: Array2<f64>,
}

impl ConditionalGaussian {
    pub fn gain(&self) -> ArrayView2<'_, f64> {
        self.gain.view()
    }

    pub fn offset(&self) -> ArrayView1<'_, f64> {
        self.offset.view()
    }

    pub fn cond_cov(&self) -> ArrayView2<'_, f64> {
        self.cond_cov.view()
    }

    pub fn feature_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn label_dim(&self) -> usize {
        self.gain.nrows()
    }

    /// Conditional mean and covariance at `x`. The covariance is the stored
    /// matrix, identical for every `x`.
    pub fn predict(
        &self,
        x: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>), GaussianError> {
        if x.len() != self.feature_dim() {
            return Err(GaussianError::InputDimension {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok((&self.offset + &self.gain.dot(&x), self.cond_cov.clone()))
    }
}

/// Condition a joint Gaussian on its feature block.
///
/// `gain = Sigma_yx Sigma_xx^-1`, `offset = mu_y - gain mu_x`, and
/// `cond_cov = Sigma_yy - Sigma_yx Sigma_xx^-1 Sigma_xy`.
pub fn condition(spec: &JointGaussianSpec) -> Result<ConditionalGaussian, GaussianError> {
    let d = spec.d;
    let cov = &spec.cov;
    let sigma_xx = cov.slice(s![..d, ..d]);
    let sigma_xy = cov.slice(s![..d, d..]);
    let sigma_yy = cov.slice(s![d.., d..]);

    let xx = SpdFactor::new(sigma_xx).map_err(GaussianError::SingularFeatureBlock)?;
    // Sigma_xx^-1 Sigma_xy, solved columnwise; gain is its transpose.
    let solved = xx.solve_matrix(sigma_xy);
    let gain = solved.t().to_owned();
    let cond_cov = linalg::symmetrize((&sigma_yy - &sigma_xy.t().dot(&solved)).view());
    let mu_x = spec.mean.slice(s![..d]);
    let mu_y = spec.mean.slice(s![d..]);
    let offset = &mu_y - &gain.dot(&mu_x);
    Ok(ConditionalGaussian {
        gain,
        offset,
        cond_cov,
    })
}

/// Draw one standard-normal vector into `buf`.
fn fill_standard_normal(rng: &mut ChaCha8Rng, buf: &mut Array1<f64>) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Draw `m` i.i.d. joint samples as a dataset. Deterministic given the seed:
/// each row is `mean + L z` with `L` the covariance factor and `z` standard
/// normal.
pub fn sample_joint(
    spec: &JointGaussianSpec,
    m: usize,
    seed: u64,
) -> Result<Dataset, GaussianError> {
    let dim = spec.d + spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Array1::<f64>::zeros(dim);
    let mut x = Array2::<f64>::zeros((m, spec.d));
    let mut y = Array2::<f64>::zeros((m, spec.n));
    for i in 0..m {
        fill_standard_normal(&mut rng, &mut z);
        let v = &spec.mean + &spec.factor.lower_dot(z.view());
        x.row_mut(i).assign(&v.slice(s![..spec.d]));
        y.row_mut(i).assign(&v.slice(s![spec.d..]));
    }
    let feature_names = (0..spec.d).map(|j| format!("x{j}")).collect();
    let label_names = (0..spec.n).map(|j| format!("y{j}")).collect();
    Ok(Dataset::new(
        "synthetic-gaussian",
        x,
        y,
        feature_names,
        label_names,
    )?)
}

/// Monte-Carlo estimate of `Pr[y in region(x)]` under the joint law, using
/// `n_draws` fresh samples. The standard error is at most `0.5 / sqrt(N)`.
pub fn mc_coverage<F>(
    mut region: F,
    spec: &JointGaussianSpec,
    n_draws: usize,
    seed: u64,
) -> f64
where
    F: FnMut(ArrayView1<'_, f64>) -> Ellipsoid,
{
    let dim = spec.d + spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Array1::<f64>::zeros(dim);
    let mut hits = 0usize;
    for _ in 0..n_draws {
        fill_standard_normal(&mut rng, &mut z);
        let v = &spec.mean + &spec.factor.lower_dot(z.view());
        let x = v.slice(s![..spec.d]);
        let y = v.slice(s![spec.d..]);
        let ellipsoid = region(x);
        if ellipsoid.contains(y).expect("region dimension matches labels") {
            hits += 1;
        }
    }
    hits as f64 / n_draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn chi2_lower_endpoint_is_zero() {
        for n in 1..=6 {
            assert_eq!(chi2_inv_cdf(0.0, n).unwrap(), 0.0);
        }
    }

    #[test]
    fn chi2_two_dof_closed_form() {
        // For n = 2 the CDF is 1 - exp(-x/2), so the quantile is -2 ln(1-p).
        for &p in &[0.1, 0.5, 0.9, 0.95, 0.99] {
            let expected = -2.0 * (1.0 - p as f64).ln();
            assert_relative_eq!(chi2_inv_cdf(p, 2).unwrap(), expected, epsilon = 1e-9);
        }
        assert_relative_eq!(
            chi2_inv_cdf(0.9, 2).unwrap(),
            4.605_170_185_988_091,
            epsilon = 1e-9
        );
    }

    #[test]
    fn chi2_three_dof_tabulated_value() {
        // 95th percentile of chi-square with 3 dof.
        assert_relative_eq!(
            chi2_inv_cdf(0.95, 3).unwrap(),
            7.814_727_903_251_179,
            epsilon = 1e-6
        );
    }

    #[test]
    fn chi2_is_a_functional_inverse() {
        for n in 1..=10usize {
            for i in 1..100usize {
                let p = i as f64 / 100.0;
                let x = chi2_inv_cdf(p, n).unwrap();
                let back = regularized_lower_gamma(n as f64 / 2.0, x / 2.0);
                assert!(
                    (back - p).abs() <= 1e-10,
                    "n={n} p={p}: round-trip error {}",
                    (back - p).abs()
                );
            }
        }
    }

    #[test]
    fn chi2_monotone_in_p() {
        for n in [1usize, 2, 5, 10] {
            let mut last = 0.0;
            for i in 0..100 {
                let x = chi2_inv_cdf(i as f64 / 100.0, n).unwrap();
                assert!(x >= last);
                last = x;
            }
        }
    }

    #[test]
    fn chi2_rejects_bad_arguments() {
        assert!(matches!(
            chi2_inv_cdf(-0.1, 2),
            Err(GaussianError::InvalidProbability(_))
        ));
        assert!(matches!(
            chi2_inv_cdf(1.0, 2),
            Err(GaussianError::InvalidProbability(_))
        ));
        assert!(matches!(chi2_inv_cdf(0.5, 0), Err(GaussianError::ZeroDof)));
    }

    #[test]
    fn optimal_ellipsoid_scales_identity_by_quantile() {
        let e = optimal_single_ellipsoid(Array1::zeros(2), Array2::eye(2).view(), 0.9).unwrap();
        let kappa = 4.605_170_185_988_091;
        assert_relative_eq!(e.shape()[[0, 0]], kappa, epsilon = 1e-8);
        assert_relative_eq!(e.shape()[[1, 1]], kappa, epsilon = 1e-8);
        assert_relative_eq!(e.shape()[[0, 1]], 0.0);
        // Volume pi * kappa for the 2-d identity base shape.
        assert_relative_eq!(
            e.volume(),
            std::f64::consts::PI * kappa,
            epsilon = 1e-7
        );
    }

    #[test]
    fn optimal_ellipsoid_rejects_zero_coverage() {
        assert!(matches!(
            optimal_single_ellipsoid(Array1::zeros(2), Array2::eye(2).view(), 0.0),
            Err(GaussianError::DegenerateCoverage)
        ));
    }

    fn scalar_spec() -> JointGaussianSpec {
        JointGaussianSpec::new(
            Array1::zeros(2),
            array![[1.0, 0.5], [0.5, 1.0]],
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn conditioning_scalar_case_by_hand() {
        // gain = 0.5, offset = 0, cond var = 1 - 0.25 = 0.75; at x = 2 the
        // conditional mean is 1.
        let cond = condition(&scalar_spec()).unwrap();
        let (mu, c) = cond.predict(array![2.0].view()).unwrap();
        assert_relative_eq!(mu[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(c[[0, 0]], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn conditioning_independent_blocks() {
        let spec = JointGaussianSpec::new(
            array![1.0, 2.0, 3.0],
            array![[2.0, 0.0, 0.0], [0.0, 1.5, 0.3], [0.0, 0.3, 1.0]],
            1,
            2,
        )
        .unwrap();
        let cond = condition(&spec).unwrap();
        let (mu_a, c_a) = cond.predict(array![-5.0].view()).unwrap();
        let (mu_b, c_b) = cond.predict(array![17.0].view()).unwrap();
        // Independence: mean is mu_y regardless of x, covariance is Sigma_yy.
        assert_relative_eq!(mu_a[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(mu_b[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(c_a[[0, 1]], 0.3, epsilon = 1e-12);
        // Shape independence is bit-exact.
        assert_eq!(c_a, c_b);
    }

    #[test]
    fn conditional_cov_matches_block_formula() {
        let spec = JointGaussianSpec::new(
            Array1::zeros(4),
            array![
                [2.0, 0.4, 0.3, 0.1],
                [0.4, 1.5, 0.2, 0.5],
                [0.3, 0.2, 1.0, 0.2],
                [0.1, 0.5, 0.2, 1.2]
            ],
            2,
            2,
        )
        .unwrap();
        let cond = condition(&spec).unwrap();
        // Recompute Sigma_yy - Sigma_yx Sigma_xx^-1 Sigma_xy with an
        // explicit 2x2 inverse.
        let sxx = array![[2.0, 0.4], [0.4, 1.5]];
        let det = sxx[[0, 0]] * sxx[[1, 1]] - sxx[[0, 1]] * sxx[[1, 0]];
        let sxx_inv = array![[1.5 / det, -0.4 / det], [-0.4 / det, 2.0 / det]];
        let sxy = array![[0.3, 0.1], [0.2, 0.5]];
        let syy = array![[1.0, 0.2], [0.2, 1.2]];
        let expected = &syy - &sxy.t().dot(&sxx_inv).dot(&sxy);
        let scale = linalg::max_abs(expected.view());
        for i in 0..2 {
            for j in 0..2 {
                assert!((cond.cond_cov()[[i, j]] - expected[[i, j]]).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn sampler_is_deterministic_and_shaped() {
        let spec = scalar_spec();
        let a = sample_joint(&spec, 5, 42).unwrap();
        let b = sample_joint(&spec, 5, 42).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        let single = sample_joint(&spec, 1, 7).unwrap();
        assert_eq!(single.x().dim(), (1, 1));
        assert_eq!(single.y().dim(), (1, 1));
        let c = sample_joint(&spec, 5, 43).unwrap();
        assert_ne!(a.x(), c.x());
    }

    #[test]
    fn huge_ball_covers_everything() {
        let spec = scalar_spec();
        let ball = Ellipsoid::new(Array1::zeros(1), Array2::eye(1) * 1e6).unwrap();
        let cov = mc_coverage(|_| ball.clone(), &spec, 2_000, 3);
        assert!(cov > 0.999);
    }

    #[test]
    fn spec_validation_errors() {
        assert!(matches!(
            JointGaussianSpec::new(Array1::zeros(3), Array2::eye(2), 1, 1),
            Err(GaussianError::MeanLength { .. })
        ));
        assert!(matches!(
            JointGaussianSpec::new(Array1::zeros(2), Array2::eye(3), 1, 1),
            Err(GaussianError::CovarianceShape { .. })
        ));
        // Indefinite joint covariance.
        assert!(matches!(
            JointGaussianSpec::new(Array1::zeros(2), array![[1.0, 2.0], [2.0, 1.0]], 1, 1),
            Err(GaussianError::CovarianceNotPd(_))
        ));
    }
}
