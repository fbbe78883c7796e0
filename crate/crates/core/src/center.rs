//! Predictors of ellipsoid centers.
//!
//! The center model is fitted once on the training split and then frozen;
//! every shape estimator consumes its residuals. Three kinds are provided:
//! ridge regression (default), a k-nearest-neighbor mean, and a wrapper
//! around the analytic Gaussian conditional mean for synthetic studies.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::data::{DataError, Standardizer};
use crate::gaussian::{ConditionalGaussian, GaussianError};
use crate::linalg::{LinalgError, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterKind {
    LinearRidge,
    KnnMean,
    OracleGaussian,
}

impl CenterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CenterKind::LinearRidge => "linear-ridge",
            CenterKind::KnnMean => "knn-mean",
            CenterKind::OracleGaussian => "oracle-gaussian",
        }
    }
}

/// Hyperparameters for [`CenterModel::fit`]. `None` fields take documented
/// defaults at fit time.
#[derive(Debug, Clone, Default)]
pub struct CenterConfig {
    /// Ridge strength; default `1e-3 * trace(X'X) / d` on standardized
    /// features.
    pub ridge: Option<f64>,
    /// Neighborhood size for the knn-mean kind; default `ceil(sqrt(m))`.
    pub neighbors: Option<usize>,
    /// Analytic conditional law, required by the oracle-gaussian kind.
    pub oracle: Option<ConditionalGaussian>,
}

#[derive(Debug, Error)]
pub enum CenterError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("feature matrix has {x_rows} rows but label matrix has {y_rows}")]
    RowMismatch { x_rows: usize, y_rows: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ridge strength must be positive, got {0}")]
    InvalidRidge(f64),
    #[error("oracle-gaussian center requires a conditional law in the config")]
    MissingOracle,
    #[error("ridge system could not be factored: {0}")]
    RidgeSystem(#[from] LinalgError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A fitted, immutable center predictor.
#[derive(Debug, Clone)]
pub enum CenterModel {
    LinearRidge {
        standardizer: Standardizer,
        /// n x d weights acting on standardized features.
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
    KnnMean {
        standardizer: Standardizer,
        /// Standardized training features.
        train_x: Array2<f64>,
        train_y: Array2<f64>,
        k: usize,
    },
    OracleGaussian { cond: ConditionalGaussian },
}

impl CenterModel {
    /// Fit a center model of the given kind on training data.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        kind: CenterKind,
        config: &CenterConfig,
    ) -> Result<Self, CenterError> {
        if x.nrows() == 0 || y.nrows() == 0 {
            return Err(CenterError::EmptyData);
        }
        if x.nrows() != y.nrows() {
            return Err(CenterError::RowMismatch {
                x_rows: x.nrows(),
                y_rows: y.nrows(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CenterError::NonFinite);
        }

        match kind {
            CenterKind::LinearRidge => Self::fit_linear_ridge(x, y, config),
            CenterKind::KnnMean => {
                let m = x.nrows();
                let k = config
                    .neighbors
                    .unwrap_or_else(|| (m as f64).sqrt().ceil() as usize)
                    .clamp(1, m);
                let standardizer = Standardizer::fit(x)?;
                Ok(CenterModel::KnnMean {
                    train_x: standardizer.transform(x),
                    train_y: y.to_owned(),
                    k,
                    standardizer,
                })
            }
            CenterKind::OracleGaussian => {
                let cond = config.oracle.clone().ok_or(CenterError::MissingOracle)?;
                if cond.feature_dim() != x.ncols() {
                    return Err(CenterError::DimensionMismatch {
                        expected: cond.feature_dim(),
                        got: x.ncols(),
                    });
                }
                Ok(CenterModel::OracleGaussian { cond })
            }
        }
    }

    fn fit_linear_ridge(
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        config: &CenterConfig,
    ) -> Result<Self, CenterError> {
        let (m, d) = x.dim();
        if m < d + 1 {
            log::warn!("ridge center fitted on {m} rows for {d} features; underdetermined");
        }
        let standardizer = Standardizer::fit(x)?;
        let xs = standardizer.transform(x);

        let y_mean = y.mean_axis(Axis(0)).expect("nonempty labels");
        let yc = &y - &y_mean.view().insert_axis(Axis(0));

        let gram = xs.t().dot(&xs);
        let ridge = match config.ridge {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(CenterError::InvalidRidge(r)),
            None => {
                let trace: f64 = gram.diag().sum();
                (1e-3 * trace / d as f64).max(1e-12)
            }
        };
        let mut system = gram;
        for i in 0..d {
            system[[i, i]] += ridge;
        }
        let factor = SpdFactor::new(system.view())?;
        // Columnwise solve of (X'X + rI) W' = X'Yc.
        let rhs = xs.t().dot(&yc);
        let weights = factor.solve_matrix(rhs.view()).t().to_owned();
        Ok(CenterModel::LinearRidge {
            standardizer,
            weights,
            bias: y_mean,
        })
    }

    pub fn kind(&self) -> CenterKind {
        match self {
            CenterModel::LinearRidge { .. } => CenterKind::LinearRidge,
            CenterModel::KnnMean { .. } => CenterKind::KnnMean,
            CenterModel::OracleGaussian { .. } => CenterKind::OracleGaussian,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            CenterModel::LinearRidge { standardizer, .. } => standardizer.dim(),
            CenterModel::KnnMean { standardizer, .. } => standardizer.dim(),
            CenterModel::OracleGaussian { cond } => cond.feature_dim(),
        }
    }

    pub fn label_dim(&self) -> usize {
        match self {
            CenterModel::LinearRidge { bias, .. } => bias.len(),
            CenterModel::KnnMean { train_y, .. } => train_y.ncols(),
            CenterModel::OracleGaussian { cond } => cond.label_dim(),
        }
    }

    /// Predicted center for one feature vector.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, CenterError> {
        if x.len() != self.feature_dim() {
            return Err(CenterError::DimensionMismatch {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        match self {
            CenterModel::LinearRidge {
                standardizer,
                weights,
                bias,
            } => {
                let xs = standardizer.transform_vec(x);
                Ok(&weights.dot(&xs) + bias)
            }
            CenterModel::KnnMean {
                standardizer,
                train_x,
                train_y,
                k,
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
                // Ties break on the training index so predictions are
                // deterministic.
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut mean = Array1::<f64>::zeros(train_y.ncols());
                for &(_, i) in order.iter().take(*k) {
                    mean += &train_y.row(i);
                }
                Ok(mean / *k as f64)
            }
            CenterModel::OracleGaussian { cond } => Ok(cond.predict(x)?.0),
        }
    }

    /// Predicted centers for each row.
    pub fn predict_batch(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>, CenterError> {
        let mut out = Array2::<f64>::zeros((rows.nrows(), self.label_dim()));
        for (i, row) in rows.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.predict(row)?);
        }
        Ok(out)
    }

    /// Residuals `y_i - mu(x_i)` for paired feature/label rows.
    pub fn residuals(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>, CenterError> {
        if x.nrows() != y.nrows() {
            return Err(CenterError::RowMismatch {
                x_rows: x.nrows(),
                y_rows: y.nrows(),
            });
        }
        Ok(&y - &self.predict_batch(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Effective linear map of a fitted model, recovered from predictions.
    fn effective_map(model: &CenterModel, d: usize, n: usize) -> (Array2<f64>, Array1<f64>) {
        let origin = model.predict(Array1::zeros(d).view()).unwrap();
        let mut map = Array2::<f64>::zeros((n, d));
        for j in 0..d {
            let mut e = Array1::<f64>::zeros(d);
            e[j] = 1.0;
            let col = &model.predict(e.view()).unwrap() - &origin;
            map.column_mut(j).assign(&col);
        }
        (map, origin)
    }

    #[test]
    fn ridge_recovers_noiseless_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = array![[1.0, -2.0, 0.5], [0.3, 0.0, 4.0]];
        let x = random_matrix(&mut rng, 60, 3);
        let y = x.dot(&a.t());
        let model = CenterModel::fit(
            x.view(),
            y.view(),
            CenterKind::LinearRidge,
            &CenterConfig {
                ridge: Some(1e-10),
                ..Default::default()
            },
        )
        .unwrap();

        let (map, origin) = effective_map(&model, 3, 2);
        for i in 0..2 {
            assert!(origin[i].abs() <= 1e-6);
            for j in 0..3 {
                assert!(
                    (map[[i, j]] - a[[i, j]]).abs() <= 1e-6,
                    "entry ({i},{j}): {} vs {}",
                    map[[i, j]],
                    a[[i, j]]
                );
            }
        }
        // Training residuals vanish in the noiseless case.
        let resid = model.residuals(x.view(), y.view()).unwrap();
        assert!(resid.iter().all(|r| r.abs() <= 1e-5));
    }

    #[test]
    fn ridge_absorbs_constant_target_into_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 30, 2);
        let y = Array2::from_elem((30, 2), 7.5);
        let model =
            CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default())
                .unwrap();
        let pred = model.predict(array![0.3, -0.8].view()).unwrap();
        assert_relative_eq!(pred[0], 7.5, epsilon = 1e-9);
        assert_relative_eq!(pred[1], 7.5, epsilon = 1e-9);
    }

    #[test]
    fn ridge_prediction_at_standardized_origin_is_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 40, 3);
        let y = random_matrix(&mut rng, 40, 2);
        let model =
            CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default())
                .unwrap();
        // The training feature mean standardizes to zero, so the prediction
        // there is the stored bias (the label mean).
        let x_mean = x.mean_axis(Axis(0)).unwrap();
        let y_mean = y.mean_axis(Axis(0)).unwrap();
        let pred = model.predict(x_mean.view()).unwrap();
        for i in 0..2 {
            assert_relative_eq!(pred[i], y_mean[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn ridge_prediction_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 50, 3);
        let y = random_matrix(&mut rng, 50, 2);
        let model =
            CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default())
                .unwrap();
        let x1 = array![0.2, -1.0, 0.7];
        let x2 = array![-0.5, 0.3, 0.1];
        for &alpha in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let blend = &x1 * alpha + &x2 * (1.0 - alpha);
            let lhs = model.predict(blend.view()).unwrap();
            let rhs = &model.predict(x1.view()).unwrap() * alpha
                + &model.predict(x2.view()).unwrap() * (1.0 - alpha);
            for i in 0..2 {
                assert!((lhs[i] - rhs[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn knn_with_full_neighborhood_returns_column_mean() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y = array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]];
        let model = CenterModel::fit(
            x.view(),
            y.view(),
            CenterKind::KnnMean,
            &CenterConfig {
                neighbors: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        let pred = model.predict(array![100.0, -3.0].view()).unwrap();
        assert_relative_eq!(pred[0], 2.5, epsilon = 1e-12);
        assert_relative_eq!(pred[1], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_kind_delegates_to_conditional_mean() {
        let spec = crate::gaussian::JointGaussianSpec::new(
            Array1::zeros(3),
            array![[1.0, 0.0, 0.5], [0.0, 1.0, 0.2], [0.5, 0.2, 1.0]],
            2,
            1,
        )
        .unwrap();
        let cond = crate::gaussian::condition(&spec).unwrap();
        let x = array![[0.1, 0.2], [0.3, -0.1]];
        let y = array![[0.0], [0.0]];
        let model = CenterModel::fit(
            x.view(),
            y.view(),
            CenterKind::OracleGaussian,
            &CenterConfig {
                oracle: Some(cond.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let probe = array![1.5, -0.7];
        let expected = cond.predict(probe.view()).unwrap().0;
        assert_eq!(model.predict(probe.view()).unwrap(), expected);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            CenterModel::fit(
                empty.view(),
                empty.view(),
                CenterKind::LinearRidge,
                &Default::default()
            ),
            Err(CenterError::EmptyData)
        ));
        let x = array![[1.0, f64::NAN]];
        let y = array![[1.0]];
        assert!(matches!(
            CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default()),
            Err(CenterError::NonFinite)
        ));
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = array![[1.0]];
        assert!(matches!(
            CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default()),
            Err(CenterError::RowMismatch { .. })
        ));
        assert!(matches!(
            CenterModel::fit(
                x.view(),
                array![[1.0], [2.0]].view(),
                CenterKind::OracleGaussian,
                &Default::default()
            ),
            Err(CenterError::MissingOracle)
        ));
        let model = CenterModel::fit(
            x.view(),
            array![[1.0], [2.0]].view(),
            CenterKind::LinearRidge,
            &Default::default(),
        )
        .unwrap();
        assert!(matches!(
            model.predict(array![1.0].view()),
            Err(CenterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fitting_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 25, 3);
        let y = random_matrix(&mut rng, 25, 2);
        let a = CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default())
            .unwrap();
        let b = CenterModel::fit(x.view(), y.view(), CenterKind::LinearRidge, &Default::default())
            .unwrap();
        let probe = array![0.1, 0.2, 0.3];
        assert_eq!(
            a.predict(probe.view()).unwrap(),
            b.predict(probe.view()).unwrap()
        );
    }
}
