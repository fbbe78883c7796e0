//! Dense symmetric linear algebra used throughout the crate: Cholesky
//! factorization with cached log-determinant, triangular solves, and a Jacobi
//! eigensolver for small symmetric matrices.
//!
//! Every quadratic form and determinant in the crate routes through
//! [`SpdFactor`]; explicit matrix inverses are only formed where a full
//! inverse is genuinely needed (gradient computations on n x n label-space
//! matrices).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} not positive)")]
    NotPositiveDefinite { pivot: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Lower-triangular Cholesky factor `L` of a symmetric positive definite
/// matrix `C = L L'`, with the log-determinant cached.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: Array2<f64>,
    log_det: f64,
}

impl SpdFactor {
    /// Factor a symmetric positive definite matrix. The input is read as
    /// given; symmetrize first if it may carry round-off asymmetry.
    pub fn new(matrix: ArrayView2<'_, f64>) -> Result<Self, LinalgError> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(LinalgError::NotSquare {
                rows: n,
                cols: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut lower = Array2::<f64>::zeros((n, n));
        let mut log_det = 0.0;
        for j in 0..n {
            let mut diag = matrix[[j, j]];
            for k in 0..j {
                diag -= lower[[j, k]] * lower[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j });
            }
            let ljj = diag.sqrt();
            lower[[j, j]] = ljj;
            log_det += 2.0 * ljj.ln();
            for i in (j + 1)..n {
                let mut v = matrix[[i, j]];
                for k in 0..j {
                    v -= lower[[i, k]] * lower[[j, k]];
                }
                lower[[i, j]] = v / ljj;
            }
        }
        Ok(Self { lower, log_det })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.lower.view()
    }

    /// log det C for the factored matrix.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Forward substitution: solves `L w = b`.
    pub fn solve_lower(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut w = b.to_owned();
        for i in 0..n {
            for k in 0..i {
                let delta = self.lower[[i, k]] * w[k];
                w[i] -= delta;
            }
            w[i] /= self.lower[[i, i]];
        }
        w
    }

    /// Back substitution: solves `L' x = w`.
    pub fn solve_lower_transpose(&self, w: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        debug_assert_eq!(w.len(), n);
        let mut x = w.to_owned();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let delta = self.lower[[k, i]] * x[k];
                x[i] -= delta;
            }
            x[i] /= self.lower[[i, i]];
        }
        x
    }

    /// Solves `C x = b` via the two triangular solves.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        self.solve_lower_transpose(self.solve_lower(b).view())
    }

    /// Solves `C X = B` columnwise.
    pub fn solve_matrix(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// The quadratic form `r' C^-1 r`, evaluated as `||L^-1 r||^2`.
    pub fn quadratic_form(&self, r: ArrayView1<'_, f64>) -> f64 {
        let w = self.solve_lower(r);
        w.dot(&w)
    }

    /// Dense inverse `C^-1`. Intended for small n (label-space matrices).
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        self.solve_matrix(Array2::<f64>::eye(n).view())
    }

    /// `L v`, the transform mapping standard normal draws to draws with
    /// covariance `C`.
    pub fn lower_dot(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.lower.dot(&v)
    }

    /// Factor of `alpha * C`: the lower factor scales by sqrt(alpha) and the
    /// log-determinant shifts by `n ln alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        debug_assert!(alpha > 0.0);
        Self {
            lower: &self.lower * alpha.sqrt(),
            log_det: self.log_det + self.dim() as f64 * alpha.ln(),
        }
    }
}

/// `(A + A') / 2`.
pub fn symmetrize(a: ArrayView2<'_, f64>) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), a.ncols());
    let mut out = a.to_owned();
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Largest absolute asymmetry `max |A_ij - A_ji|`.
pub fn max_asymmetry(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Largest absolute entry.
pub fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, sorted
/// by ascending eigenvalue. Suited to the small (label-space) matrices this
/// crate works with.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = symmetrize(a);
    let mut v = Array2::<f64>::eye(n);
    let scale = max_abs(m.view()).max(1e-300);
    let tol = 1e-15 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[[p, q]].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&v.column(src));
    }
    (eigenvalues, eigenvectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: ArrayView2<'_, f64>) -> f64 {
    symmetric_eigen(a).0[0]
}

/// Symmetric square root `S` of a symmetric positive semidefinite matrix,
/// `S S = A`. Small negative eigenvalues from round-off are clamped to zero.
pub fn symmetric_sqrt(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let (values, vectors) = symmetric_eigen(a);
    let n = values.len();
    let mut out = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let lambda = values[k].max(0.0).sqrt();
        let col = vectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += lambda * col[i] * col[j];
            }
        }
    }
    out
}
