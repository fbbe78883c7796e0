//! Shape estimators, split-conformal calibration, and evaluation.
//!
//! Two covariance baselines are built in: the global residual second moment
//! (GE) and a nearest-neighbor local covariance shrunk toward it (NLE). The
//! learned network and the analytic Gaussian conditional covariance plug
//! into the same [`ShapeModel`] interface, so one calibration and
//! evaluation path serves every method.
//!
//! Calibration rescales shapes by the k-th smallest validation Mahalanobis
//! score with `k = ceil((m_c + 1) eta)`, which guarantees coverage at least
//! `eta` for exchangeable data.

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::center::{CenterError, CenterModel};
use crate::data::{DataError, Standardizer};
use crate::ellipsoid::{Ellipsoid, EllipsoidError};
use crate::gaussian::ConditionalGaussian;
use crate::linalg::{self, SpdFactor};
use crate::lmve::{self, LmveError, MlpParams};

pub const NLE_DEFAULT_FRACTION: f64 = 0.05;
pub const NLE_DEFAULT_MIX: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("residual matrix is empty")]
    EmptyResiduals,
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("feature matrix has {x_rows} rows but residuals/labels have {other}")]
    RowMismatch { x_rows: usize, other: usize },
    #[error("neighbor fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("mixing weight must lie in [0, 1], got {0}")]
    InvalidMix(f64),
    #[error("residual second moment is not positive definite even after ridging")]
    RankDeficient,
    #[error("coverage level must lie in [0, 1), got {0}")]
    InvalidEta(f64),
    #[error(
        "validation set of {size} points cannot calibrate at level {eta}; \
         need at least {required}"
    )]
    TooFewCalibrationPoints { size: usize, eta: f64, required: usize },
    #[error("calibration scores are all zero; centers interpolate the validation labels")]
    ZeroCalibrationScale,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Center(#[from] CenterError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Lmve(#[from] LmveError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A fitted map from features to symmetric positive definite shape
/// matrices.
#[derive(Debug, Clone)]
pub enum ShapeModel {
    /// Global residual second moment; ignores the features.
    Ge { cov: Array2<f64> },
    /// Local covariance over the nearest `neighbors` training points
    /// (Euclidean distance on standardized features), mixed with the global
    /// matrix: `mix * local + (1 - mix) * ge`.
    Nle {
        standardizer: Standardizer,
        train_x: Array2<f64>,
        residuals: Array2<f64>,
        fraction: f64,
        mix: f64,
        neighbors: usize,
        ge: Array2<f64>,
    },
    /// Learned network head; consumes standardized features.
    Lmve {
        params: MlpParams,
        eps: f64,
        standardizer: Standardizer,
    },
    /// Analytic conditional covariance of a joint Gaussian.
    Oracle { cond_cov: Array2<f64> },
}

impl ShapeModel {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeModel::Ge { .. } => "ge",
            ShapeModel::Nle { .. } => "nle",
            ShapeModel::Lmve { .. } => "lmve",
            ShapeModel::Oracle { .. } => "oracle",
        }
    }

    pub fn label_dim(&self) -> usize {
        match self {
            ShapeModel::Ge { cov } => cov.nrows(),
            ShapeModel::Nle { residuals, .. } => residuals.ncols(),
            ShapeModel::Lmve { params, .. } => params.label_dim(),
            ShapeModel::Oracle { cond_cov } => cond_cov.nrows(),
        }
    }

    /// Wrap an analytic conditional law as a shape model.
    pub fn oracle(cond: &ConditionalGaussian) -> Self {
        ShapeModel::Oracle {
            cond_cov: cond.cond_cov().to_owned(),
        }
    }

    /// The (uncalibrated) shape matrix at `x`.
    pub fn shape_at(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>, EstimatorError> {
        match self {
            ShapeModel::Ge { cov } => Ok(cov.clone()),
            ShapeModel::Oracle { cond_cov } => Ok(cond_cov.clone()),
            ShapeModel::Lmve {
                params,
                eps,
                standardizer,
            } => {
                let xs = standardizer.transform_vec(x);
                let (_, c) = lmve::forward_shape(params, xs.view(), *eps, None)?;
                Ok(c)
            }
            ShapeModel::Nle {
                standardizer,
                train_x,
                residuals,
                mix,
                neighbors,
                ge,
                ..
            } => {
                let xs = standardizer.transform_vec(x);
                let mut order: Vec<(f64, usize)> = train_x
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let mut dist = 0.0;
                        for (a, b) in row.iter().zip(xs.iter()) {
                            let delta = a - b;
                            dist += delta * delta;
                        }
                        (dist, i)
                    })
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let n = residuals.ncols();
                let mut local = Array2::<f64>::zeros((n, n));
                for &(_, i) in order.iter().take(*neighbors) {
                    let r = residuals.row(i);
                    for a in 0..n {
                        for b in 0..n {
                            local[[a, b]] += r[a] * r[b];
                        }
                    }
                }
                local /= *neighbors as f64;
                let shape = &local * *mix + &(ge * (1.0 - *mix));
                Ok(linalg::symmetrize(shape.view()))
            }
        }
    }
}

/// Residual second moment with a last-resort ridge.
fn ge_matrix(residuals: ArrayView2<'_, f64>) -> Result<Array2<f64>, EstimatorError> {
    if residuals.nrows() == 0 {
        return Err(EstimatorError::EmptyResiduals);
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let m = residuals.nrows() as f64;
    let n = residuals.ncols();
    let mut cov = linalg::symmetrize((residuals.t().dot(&residuals) / m).view());
    if SpdFactor::new(cov.view()).is_err() {
        let ridge = 1e-8 * cov.diag().sum() / n as f64;
        for i in 0..n {
            cov[[i, i]] += ridge;
        }
        if SpdFactor::new(cov.view()).is_err() {
            return Err(EstimatorError::RankDeficient);
        }
    }
    Ok(cov)
}

/// Fit the global shape: the average outer product of the residuals,
/// symmetrized, with a ridge of `1e-8 * trace / n` on the diagonal if the
/// raw second moment is not positive definite.
pub fn fit_ge(residuals: ArrayView2<'_, f64>) -> Result<ShapeModel, EstimatorError> {
    Ok(ShapeModel::Ge {
        cov: ge_matrix(residuals)?,
    })
}

/// Fit the local-covariance shape model.
///
/// The neighborhood holds `max(1, ceil(fraction * m))` training points; the
/// local matrix is the second moment of their residuals about the shared
/// (global) centers, not re-centered locally.
pub fn fit_nle(
    x_train: ArrayView2<'_, f64>,
    residuals: ArrayView2<'_, f64>,
    fraction: f64,
    mix: f64,
) -> Result<ShapeModel, EstimatorError> {
    if residuals.nrows() == 0 || x_train.nrows() == 0 {
        return Err(EstimatorError::EmptyResiduals);
    }
    if x_train.nrows() != residuals.nrows() {
        return Err(EstimatorError::RowMismatch {
            x_rows: x_train.nrows(),
            other: residuals.nrows(),
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EstimatorError::InvalidFraction(fraction));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(EstimatorError::InvalidMix(mix));
    }
    if x_train.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let ge = ge_matrix(residuals)?;
    let m = x_train.nrows();
    let neighbors = ((fraction * m as f64).ceil() as usize).max(1).min(m);
    let standardizer = Standardizer::fit(x_train)?;
    Ok(ShapeModel::Nle {
        train_x: standardizer.transform(x_train),
        standardizer,
        residuals: residuals.to_owned(),
        fraction,
        mix,
        neighbors,
        ge,
    })
}

/// Baseline shapes at each training point, for the imitation phase of the
/// learned model.
pub fn imitation_targets(
    baseline: &ShapeModel,
    x: ArrayView2<'_, f64>,
) -> Result<Vec<Array2<f64>>, EstimatorError> {
    x.rows()
        .into_iter()
        .map(|row| baseline.shape_at(row))
        .collect()
}

/// A shape model with its frozen center and the conformal scale `alpha_q`;
/// the deployed shape at `x` is `alpha_q * shape_at(x)`.
#[derive(Debug, Clone)]
pub struct CalibratedModel {
    shape: ShapeModel,
    center: CenterModel,
    alpha_q: f64,
    eta: f64,
    calib_size: usize,
}

impl CalibratedModel {
    pub fn shape(&self) -> &ShapeModel {
        &self.shape
    }

    pub fn center(&self) -> &CenterModel {
        &self.center
    }

    pub fn alpha_q(&self) -> f64 {
        self.alpha_q
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn calib_size(&self) -> usize {
        self.calib_size
    }

    /// The calibrated uncertainty ellipsoid at `x`.
    pub fn ellipsoid_at(&self, x: ArrayView1<'_, f64>) -> Result<Ellipsoid, EstimatorError> {
        let center = self.center.predict(x)?;
        let shape = self.shape.shape_at(x)?;
        Ok(Ellipsoid::new(center, shape * self.alpha_q)?)
    }
}

/// The calibration order statistic `k = ceil((m_c + 1) eta)`, with a guard
/// against the float product landing a hair above an integer.
pub fn conformal_rank(calib_size: usize, eta: f64) -> usize {
    let q = (calib_size as f64 + 1.0) * eta;
    let nearest = q.round();
    let k = if (q - nearest).abs() <= 1e-9 * (calib_size as f64 + 1.0) {
        nearest as usize
    } else {
        q.ceil() as usize
    };
    k.max(1)
}

/// Smallest calibration-set size usable at level `eta`.
pub fn min_calibration_size(eta: f64) -> usize {
    let mut m = 1usize;
    while conformal_rank(m, eta) > m {
        m += 1;
    }
    m
}

/// Split-conformal calibration.
///
/// Scores each validation point by its Mahalanobis distance under the
/// uncalibrated shape, then sets `alpha_q` to the k-th smallest score with
/// `k = ceil((m_c + 1) eta)`. Sorting is stable, so ties at the cut take the
/// tied value and coverage can only exceed the target.
pub fn conformal_calibrate(
    shape: ShapeModel,
    center: CenterModel,
    x_val: ArrayView2<'_, f64>,
    y_val: ArrayView2<'_, f64>,
    eta: f64,
) -> Result<CalibratedModel, EstimatorError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(EstimatorError::InvalidEta(eta));
    }
    if x_val.nrows() != y_val.nrows() {
        return Err(EstimatorError::RowMismatch {
            x_rows: x_val.nrows(),
            other: y_val.nrows(),
        });
    }
    let m_c = x_val.nrows();
    let k = conformal_rank(m_c, eta);
    if m_c == 0 || k > m_c {
        return Err(EstimatorError::TooFewCalibrationPoints {
            size: m_c,
            eta,
            required: min_calibration_size(eta),
        });
    }

    let mut scores = Vec::with_capacity(m_c);
    for i in 0..m_c {
        let mu = center.predict(x_val.row(i))?;
        let c = shape.shape_at(x_val.row(i))?;
        let ellipsoid = Ellipsoid::new(mu, c)?;
        scores.push(ellipsoid.mahalanobis(y_val.row(i))?);
    }
    scores.sort_by(|a, b| a.total_cmp(b));
    let alpha_q = scores[k - 1];
    if !(alpha_q > 0.0) {
        return Err(EstimatorError::ZeroCalibrationScale);
    }
    Ok(CalibratedModel {
        shape,
        center,
        alpha_q,
        eta,
        calib_size: m_c,
    })
}

/// Coverage and volume of a calibrated model on a test set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Fraction of test labels inside their calibrated ellipsoid.
    pub coverage: f64,
    /// Mean ellipsoid volume over the test points.
    pub mean_volume: f64,
    /// Per-point volumes, in test-row order.
    pub volumes: Vec<f64>,
}

pub fn evaluate(
    model: &CalibratedModel,
    x_test: ArrayView2<'_, f64>,
    y_test: ArrayView2<'_, f64>,
) -> Result<Evaluation, EstimatorError> {
    if x_test.nrows() == 0 {
        return Err(EstimatorError::EmptyTestSet);
    }
    if x_test.nrows() != y_test.nrows() {
        return Err(EstimatorError::RowMismatch {
            x_rows: x_test.nrows(),
            other: y_test.nrows(),
        });
    }
    let mut covered = 0usize;
    let mut volumes = Vec::with_capacity(x_test.nrows());
    for i in 0..x_test.nrows() {
        let ellipsoid = model.ellipsoid_at(x_test.row(i))?;
        if ellipsoid.contains(y_test.row(i))? {
            covered += 1;
        }
        volumes.push(ellipsoid.volume());
    }
    let coverage = covered as f64 / x_test.nrows() as f64;
    let mean_volume = volumes.iter().sum::<f64>() / volumes.len() as f64;
    Ok(Evaluation {
        coverage,
        mean_volume,
        volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::center::{CenterConfig, CenterKind};
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn ge_averages_outer_products_with_ridge() {
        let residuals = array![[1.0, 0.0], [-1.0, 0.0]];
        let model = fit_ge(residuals.view()).unwrap();
        let ShapeModel::Ge { cov } = &model else {
            panic!("expected GE")
        };
        // Second moment is [[1,0],[0,0]]; the zero eigenvalue forces the
        // ridge 1e-8 * trace / n onto the diagonal.
        let ridge = 1e-8 * 0.5;
        assert_relative_eq!(cov[[0, 0]], 1.0 + ridge, epsilon = 1e-12);
        assert_relative_eq!(cov[[1, 1]], ridge, epsilon = 1e-12);
        assert_relative_eq!(cov[[0, 1]], 0.0, epsilon = 1e-15);
        assert!(SpdFactor::new(cov.view()).is_ok());
    }

    #[test]
    fn ge_rank_one_correlated_residuals() {
        let residuals = array![[1.0, 1.0], [-1.0, -1.0]];
        let model = fit_ge(residuals.view()).unwrap();
        let ShapeModel::Ge { cov } = &model else {
            panic!("expected GE")
        };
        let ridge = 1e-8 * 1.0; // trace 2 / n 2
        assert_relative_eq!(cov[[0, 0]], 1.0 + ridge, epsilon = 1e-12);
        assert_relative_eq!(cov[[0, 1]], 1.0, epsilon = 1e-12);
        assert_relative_eq!(cov[[1, 1]], 1.0 + ridge, epsilon = 1e-12);
    }

    #[test]
    fn ge_rejects_empty_and_degenerate() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            fit_ge(empty.view()),
            Err(EstimatorError::EmptyResiduals)
        ));
        // All-zero residuals cannot be ridged into a PD matrix.
        let zeros = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            fit_ge(zeros.view()),
            Err(EstimatorError::RankDeficient)
        ));
    }

    fn toy_training_data() -> (Array2<f64>, Array2<f64>) {
        let x = array![
            [0.0, 0.1],
            [0.2, -0.1],
            [-0.1, 0.05],
            [1.9, 2.1],
            [2.1, 1.8],
            [2.0, 2.0]
        ];
        let residuals = array![
            [0.5, 0.1],
            [-0.4, 0.2],
            [0.3, -0.3],
            [2.0, 0.5],
            [-1.5, 1.0],
            [1.0, -2.0]
        ];
        (x, residuals)
    }

    #[test]
    fn nle_full_neighborhood_collapses_to_ge() {
        let (x, residuals) = toy_training_data();
        let nle = fit_nle(x.view(), residuals.view(), 1.0, NLE_DEFAULT_MIX).unwrap();
        let ge = fit_ge(residuals.view()).unwrap();
        let ShapeModel::Ge { cov } = &ge else {
            panic!()
        };
        for probe in [array![0.0, 0.0], array![5.0, -3.0]] {
            let shape = nle.shape_at(probe.view()).unwrap();
            let scale = linalg::max_abs(cov.view());
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (shape[[i, j]] - cov[[i, j]]).abs() <= 1e-12 * scale,
                        "entry ({i},{j}) differs: {} vs {}",
                        shape[[i, j]],
                        cov[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn nle_zero_mix_is_ge_everywhere() {
        let (x, residuals) = toy_training_data();
        let nle = fit_nle(x.view(), residuals.view(), 0.3, 0.0).unwrap();
        let ge = fit_ge(residuals.view()).unwrap();
        let ShapeModel::Ge { cov } = &ge else {
            panic!()
        };
        let shape = nle.shape_at(array![100.0, 100.0].view()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(shape[[i, j]], cov[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nle_local_neighborhood_uses_nearby_residuals() {
        let (x, residuals) = toy_training_data();
        // fraction 0.5 of 6 rows -> 3 neighbors: exactly one cluster.
        let nle = fit_nle(x.view(), residuals.view(), 0.5, 1.0).unwrap();
        let shape = nle.shape_at(array![2.0, 2.0].view()).unwrap();
        // Direct average of the second cluster's residual outer products.
        let cluster = [
            array![2.0, 0.5],
            array![-1.5, 1.0],
            array![1.0, -2.0],
        ];
        let mut expected = Array2::<f64>::zeros((2, 2));
        for r in &cluster {
            for a in 0..2 {
                for b in 0..2 {
                    expected[[a, b]] += r[a] * r[b];
                }
            }
        }
        expected /= 3.0;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(shape[[i, j]], expected[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nle_validates_arguments() {
        let (x, residuals) = toy_training_data();
        assert!(matches!(
            fit_nle(x.view(), residuals.view(), 0.0, 0.95),
            Err(EstimatorError::InvalidFraction(_))
        ));
        assert!(matches!(
            fit_nle(x.view(), residuals.view(), 0.5, 1.5),
            Err(EstimatorError::InvalidMix(_))
        ));
        let short = array![[1.0, 2.0]];
        assert!(matches!(
            fit_nle(short.view(), residuals.view(), 0.5, 0.95),
            Err(EstimatorError::RowMismatch { .. })
        ));
    }

    #[test]
    fn conformal_rank_matches_index_arithmetic() {
        // 9 points at level 0.9: k = ceil(10 * 0.9) = 9.
        assert_eq!(conformal_rank(9, 0.9), 9);
        // 10 points: k = ceil(11 * 0.9) = ceil(9.9) = 10.
        assert_eq!(conformal_rank(10, 0.9), 10);
        assert_eq!(conformal_rank(100, 0.9), 91);
        assert_eq!(conformal_rank(5, 0.5), 3);
        assert_eq!(min_calibration_size(0.9), 9);
        assert_eq!(min_calibration_size(0.5), 1);
    }

    /// Identity-shape GE and a center pinned at zero, so calibration scores
    /// are exactly the squared norms of the validation labels.
    fn pinned_model(n: usize) -> (ShapeModel, CenterModel) {
        let shape = ShapeModel::Ge {
            cov: Array2::eye(n),
        };
        let x = Array2::zeros((3, 1));
        let y = Array2::zeros((3, n));
        let center = CenterModel::fit(
            x.view(),
            y.view(),
            CenterKind::LinearRidge,
            &CenterConfig::default(),
        )
        .unwrap();
        (shape, center)
    }

    #[test]
    fn calibration_picks_kth_smallest_score() {
        // Labels with squared norms 1..=9 at eta = 0.9: alpha_q = 9.
        let (shape, center) = pinned_model(1);
        let x_val = Array2::zeros((9, 1));
        let y_val =
            Array2::from_shape_fn((9, 1), |(i, _)| ((i + 1) as f64).sqrt());
        let model =
            conformal_calibrate(shape, center, x_val.view(), y_val.view(), 0.9).unwrap();
        assert_relative_eq!(model.alpha_q(), 9.0, epsilon = 1e-12);
        assert_eq!(model.calib_size(), 9);
    }

    #[test]
    fn calibration_with_ten_points_takes_the_maximum() {
        let (shape, center) = pinned_model(1);
        let x_val = Array2::zeros((10, 1));
        let y_val = Array2::from_shape_fn((10, 1), |(i, _)| ((i + 1) as f64).sqrt());
        let model = conformal_calibrate(shape, center, x_val.view(), y_val.view(), 0.9).unwrap();
        assert_relative_eq!(model.alpha_q(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_scores_land_on_the_boundary() {
        let (shape, center) = pinned_model(2);
        let x_val = Array2::zeros((9, 1));
        // All validation labels at distance 2 from the center: scores are
        // all 4.
        let mut y_val = Array2::zeros((9, 2));
        y_val.column_mut(0).fill(2.0);
        let model =
            conformal_calibrate(shape, center, x_val.view(), y_val.view(), 0.9).unwrap();
        assert_relative_eq!(model.alpha_q(), 4.0, epsilon = 1e-12);
        for i in 0..9 {
            let e = model.ellipsoid_at(x_val.row(i)).unwrap();
            let m = e.mahalanobis(y_val.row(i)).unwrap();
            assert_relative_eq!(m, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_small_or_degenerate_sets() {
        let (shape, center) = pinned_model(1);
        let x_val = Array2::zeros((5, 1));
        let y_val = Array2::from_elem((5, 1), 1.0);
        match conformal_calibrate(shape.clone(), center.clone(), x_val.view(), y_val.view(), 0.9) {
            Err(EstimatorError::TooFewCalibrationPoints { required, .. }) => {
                assert_eq!(required, 9)
            }
            other => panic!("expected TooFewCalibrationPoints, got {other:?}"),
        }
        // Zero scores: validation labels equal the predicted centers.
        let y_zero = Array2::zeros((9, 1));
        let x9 = Array2::zeros((9, 1));
        assert!(matches!(
            conformal_calibrate(shape.clone(), center.clone(), x9.view(), y_zero.view(), 0.9),
            Err(EstimatorError::ZeroCalibrationScale)
        ));
        assert!(matches!(
            conformal_calibrate(shape, center, x_val.view(), y_val.view(), 1.0),
            Err(EstimatorError::InvalidEta(_))
        ));
    }

    #[test]
    fn alpha_q_is_monotone_in_eta() {
        let (shape, center) = pinned_model(1);
        let x_val = Array2::zeros((40, 1));
        let y_val = Array2::from_shape_fn((40, 1), |(i, _)| 0.1 + 0.07 * i as f64);
        let mut last = 0.0;
        for eta in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95] {
            let model = conformal_calibrate(
                shape.clone(),
                center.clone(),
                x_val.view(),
                y_val.view(),
                eta,
            )
            .unwrap();
            assert!(model.alpha_q() >= last);
            last = model.alpha_q();
        }
    }

    #[test]
    fn calibration_is_invariant_to_shape_rescaling() {
        let x_val = Array2::zeros((9, 1));
        let y_val = Array2::from_shape_fn((9, 1), |(i, _)| 0.2 + 0.3 * i as f64);
        let x_test = Array2::zeros((4, 1));
        let (_, center) = pinned_model(2);
        let base = array![[2.0, 0.5], [0.5, 1.0]];
        let mut reference: Option<(f64, Array2<f64>)> = None;
        for c in [1.0, 0.25, 64.0] {
            let shape = ShapeModel::Ge { cov: &base * c };
            let model = conformal_calibrate(
                shape,
                center.clone(),
                x_val.view(),
                Array2::from_shape_fn((9, 2), |(i, j)| if j == 0 { y_val[[i, 0]] } else { 0.0 })
                    .view(),
                0.9,
            )
            .unwrap();
            let final_shape = model.ellipsoid_at(x_test.row(0)).unwrap().shape().to_owned();
            match &reference {
                None => reference = Some((model.alpha_q(), final_shape)),
                Some((alpha_ref, shape_ref)) => {
                    // alpha_q scales inversely with c...
                    assert_relative_eq!(
                        model.alpha_q() * c,
                        *alpha_ref,
                        max_relative = 1e-12
                    );
                    // ...and the deployed ellipsoid is unchanged.
                    for i in 0..2 {
                        for j in 0..2 {
                            assert_relative_eq!(
                                final_shape[[i, j]],
                                shape_ref[[i, j]],
                                max_relative = 1e-12
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_counts_coverage_and_volume() {
        let (shape, center) = pinned_model(2);
        let x_val = Array2::zeros((9, 1));
        let mut y_val = Array2::zeros((9, 2));
        y_val.column_mut(0).fill(2.0);
        let model = conformal_calibrate(shape, center, x_val.view(), y_val.view(), 0.9).unwrap();

        let x_test = Array2::zeros((3, 1));
        let y_test = array![[0.0, 0.0], [1.9, 0.0], [5.0, 0.0]];
        let eval = evaluate(&model, x_test.view(), y_test.view()).unwrap();
        assert_relative_eq!(eval.coverage, 2.0 / 3.0, epsilon = 1e-12);
        // GE ignores x: every test point gets the same volume
        // pi * det(4 I)^(1/2) = 4 pi.
        for v in &eval.volumes {
            assert_relative_eq!(*v, 4.0 * std::f64::consts::PI, epsilon = 1e-9);
        }
        assert_relative_eq!(eval.mean_volume, eval.volumes[0], epsilon = 1e-12);

        let empty = Array2::<f64>::zeros((0, 1));
        let empty_y = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            evaluate(&model, empty.view(), empty_y.view()),
            Err(EstimatorError::EmptyTestSet)
        ));
    }

    #[test]
    fn huge_scale_covers_everything() {
        let (shape, center) = pinned_model(1);
        let x_val = Array2::zeros((9, 1));
        let y_val = Array2::from_elem((9, 1), 1000.0);
        let model = conformal_calibrate(shape, center, x_val.view(), y_val.view(), 0.9).unwrap();
        let x_test = Array2::zeros((50, 1));
        let y_test = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 * 10.0);
        let eval = evaluate(&model, x_test.view(), y_test.view()).unwrap();
        assert_eq!(eval.coverage, 1.0);
    }
}
