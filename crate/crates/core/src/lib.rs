//! Calibrated minimum-volume uncertainty ellipsoids for multivariate regression.
//!
//! Given a feature vector `x` and an unknown label vector `y`, the crate
//! produces ellipsoidal uncertainty regions `{ y : (y - mu(x))' C(x)^-1 (y - mu(x)) <= 1 }`
//! whose average volume is small while the probability of covering the true
//! label stays above a prescribed level.
//!
//! The pieces:
//!
//! * [`ellipsoid`] — the ellipsoid value type and SPD primitives (Mahalanobis
//!   form, volume, containment, scaling).
//! * [`gaussian`] — closed-form Gaussian machinery: chi-square inverse CDF,
//!   the optimal single ellipsoid, conditioning, samplers, and a Monte-Carlo
//!   coverage estimator used as ground truth in tests.
//! * [`center`] — pluggable, frozen predictors of ellipsoid centers.
//! * [`estimators`] — the GE and NLE covariance baselines, split-conformal
//!   calibration, and coverage/volume evaluation.
//! * [`lmve`] — a small fully-connected network mapping features to positive
//!   definite shape matrices, with analytic gradients, Adam, and the
//!   imitation + fine-tuning training phases.
//! * [`data`] — dataset loading, seeded splitting, standardization, and the
//!   registry of the benchmark datasets.

pub mod center;
pub mod data;
pub mod ellipsoid;
pub mod estimators;
pub mod gaussian;
pub mod linalg;
pub mod lmve;
pub mod special;

pub use center::{CenterConfig, CenterKind, CenterModel};
pub use data::{Dataset, Split, Standardizer};
pub use ellipsoid::Ellipsoid;
pub use estimators::{CalibratedModel, ShapeModel};
pub use gaussian::{ConditionalGaussian, JointGaussianSpec};
pub use linalg::SpdFactor;
pub use lmve::{MlpParams, TrainConfig};
