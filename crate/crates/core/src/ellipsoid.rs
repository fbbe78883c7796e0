//! The uncertainty ellipsoid value type.
//!
//! An ellipsoid is the set `{ y : (y - center)' shape^-1 (y - center) <= 1 }`
//! for a symmetric positive definite shape matrix. Construction factors the
//! shape once; Mahalanobis forms, volumes, and containment all reuse that
//! factor, and no explicit inverse is ever formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::linalg::{self, LinalgError, SpdFactor};
use crate::special::unit_ball_volume;

/// Relative tolerance for accepting a shape matrix as symmetric.
const SYMMETRY_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipsoidError {
    #[error("ellipsoid dimension must be at least 1")]
    EmptyDimension,
    #[error("center has length {center} but shape is {rows}x{cols}")]
    ShapeCenterMismatch {
        center: usize,
        rows: usize,
        cols: usize,
    },
    #[error("point has dimension {got}, ellipsoid has dimension {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("shape matrix asymmetry {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("shape matrix is not positive definite: {0}")]
    NotPositiveDefinite(#[from] LinalgError),
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// An ellipsoidal region with a cached SPD factorization of its shape.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: Array1<f64>,
    shape: Array2<f64>,
    factor: SpdFactor,
}

impl Ellipsoid {
    /// Build an ellipsoid from a center and a symmetric positive definite
    /// shape matrix.
    ///
    /// The shape is checked for symmetry up to round-off, symmetrized
    /// exactly, and factored. A failed factorization rejects the input.
    pub fn new(center: Array1<f64>, shape: Array2<f64>) -> Result<Self, EllipsoidError> {
        let n = center.len();
        if n == 0 {
            return Err(EllipsoidError::EmptyDimension);
        }
        if shape.nrows() != n || shape.ncols() != n {
            return Err(EllipsoidError::ShapeCenterMismatch {
                center: n,
                rows: shape.nrows(),
                cols: shape.ncols(),
            });
        }
        let asymmetry = linalg::max_asymmetry(shape.view());
        let tolerance = SYMMETRY_RTOL * linalg::max_abs(shape.view());
        if asymmetry > tolerance {
            return Err(EllipsoidError::NotSymmetric {
                asymmetry,
                tolerance,
            });
        }
        let shape = linalg::symmetrize(shape.view());
        let factor = SpdFactor::new(shape.view())?;
        Ok(Self {
            center,
            shape,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> ArrayView1<'_, f64> {
        self.center.view()
    }

    pub fn shape(&self) -> ArrayView2<'_, f64> {
        self.shape.view()
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// The Mahalanobis form `(y - center)' shape^-1 (y - center)`, evaluated
    /// through the cached triangular factor.
    pub fn mahalanobis(&self, y: ArrayView1<'_, f64>) -> Result<f64, EllipsoidError> {
        if y.len() != self.dim() {
            return Err(EllipsoidError::PointDimension {
                expected: self.dim(),
                got: y.len(),
            });
        }
        let r = &y - &self.center;
        Ok(self.factor.quadratic_form(r.view()))
    }

    /// Lebesgue volume: `V_n * det(shape)^(1/2)` with `V_n` the unit-ball
    /// volume.
    pub fn volume(&self) -> f64 {
        unit_ball_volume(self.dim()) * (0.5 * self.factor.log_det()).exp()
    }

    /// Membership test; the boundary counts as covered.
    pub fn contains(&self, y: ArrayView1<'_, f64>) -> Result<bool, EllipsoidError> {
        Ok(self.mahalanobis(y)? <= 1.0)
    }

    /// The ellipsoid with shape `alpha * shape`, sharing the same center.
    /// The cached factor is rescaled directly rather than refactored.
    pub fn scale_shape(&self, alpha: f64) -> Result<Self, EllipsoidError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(EllipsoidError::NonPositiveScale(alpha));
        }
        Ok(Self {
            center: self.center.clone(),
            shape: &self.shape * alpha,
            factor: self.factor.scaled(alpha),
        })
    }
}
