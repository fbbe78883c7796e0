//! The learned shape model: a three-layer fully connected network mapping a
//! feature vector to a positive definite matrix
//!
//! ```text
//! R(x) = L3 relu(L2 relu(L1 x + b1) + b2) + b3   (reshaped n x n)
//! C(x) = R(x)' R(x) + eps I
//! ```
//!
//! with dropout after each ReLU during training. Training minimizes the
//! penalized objective `mean_i [ M(x_i, y_i) + lambda det(C(x_i))^(1/2) ]`
//! where `M` is the Mahalanobis form of the residual under `C(x_i)`.
//! Gradients are analytic reverse mode: with `r = y - mu` and `G` the
//! objective's derivative in `C`,
//!
//! ```text
//! G = -C^-1 r r' C^-1 + (lambda/2) det(C)^(1/2) C^-1,
//! dl/dR = R (G + G'),
//! ```
//!
//! followed by standard backpropagation through the two hidden layers.
//!
//! Fitting runs in two phases. The initialization phase regresses `C(x)`
//! onto a baseline's shapes under a squared Frobenius loss; the training
//! phase minimizes the penalized objective. Both use Adam on minibatches
//! drawn with replacement from a seeded generator, so identical
//! (config, seed, data) reproduce identical parameters bit for bit.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::estimators::CalibratedModel;
use crate::linalg::{self, LinalgError, SpdFactor};

/// Multiplier on `trace(GE)/n` for the default positive definiteness floor.
pub const DEFAULT_EPSILON_SCALE: f64 = 1e-4;

// Stream ids deriving the independent generators used by parameter
// initialization and the two phases from one seed.
const STREAM_PARAMS: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;

#[derive(Debug, Error)]
pub enum LmveError {
    #[error("input has dimension {got}, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("residuals have dimension {got}, network expects {expected}")]
    ResidualDimension { expected: usize, got: usize },
    #[error("batch has {x_rows} feature rows but {other} rows elsewhere")]
    BatchMismatch { x_rows: usize, other: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("lambda must be nonnegative and finite, got {0}")]
    InvalidLambda(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropout(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error(
        "non-finite loss at iteration {iteration}: loss {loss}, gradient norm {grad_norm}"
    )]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        grad_norm: f64,
    },
    #[error("shape factorization failed: {0}")]
    Factorization(#[from] LinalgError),
    #[error("lambda denominator is zero: baseline determinants average to zero")]
    ZeroLambdaDenominator,
    #[error("baseline evaluation failed: {0}")]
    Baseline(String),
    #[error("checkpoint file corrupt: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Network parameters. Layer widths are fixed by the feature dimension `d`
/// and label dimension `n`: the hidden layers have `4d` and `d` units and
/// the head emits `n^2` values reshaped row-major into `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub l1: Array2<f64>, // 4d x d
    pub b1: Array1<f64>, // 4d
    pub l2: Array2<f64>, // d x 4d
    pub b2: Array1<f64>, // d
    pub l3: Array2<f64>, // n^2 x d
    pub b3: Array1<f64>, // n^2
    d: usize,
    n: usize,
}

impl MlpParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        assert!(d >= 1 && n >= 1);
        Self {
            l1: Array2::zeros((4 * d, d)),
            b1: Array1::zeros(4 * d),
            l2: Array2::zeros((d, 4 * d)),
            b2: Array1::zeros(d),
            l3: Array2::zeros((n * n, d)),
            b3: Array1::zeros(n * n),
            d,
            n,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn label_dim(&self) -> usize {
        self.n
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    fn arrays(&self) -> [&[f64]; 6] {
        [
            self.l1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.l2.as_slice().expect("contiguous"),
            self.b2.as_slice().expect("contiguous"),
            self.l3.as_slice().expect("contiguous"),
            self.b3.as_slice().expect("contiguous"),
        ]
    }

    fn arrays_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.l1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.l2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
            self.l3.as_slice_mut().expect("contiguous"),
            self.b3.as_slice_mut().expect("contiguous"),
        ]
    }
}

/// Fan-in uniform weight initialization with zero biases, except that `b3`
/// starts at the vectorized symmetric square root of `base_shape` (usually
/// the global residual covariance) so the network's initial output is
/// already a sensible global shape.
pub fn initial_params(
    d: usize,
    n: usize,
    base_shape: Option<ArrayView2<'_, f64>>,
    seed: u64,
) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PARAMS);
    let mut params = MlpParams::zeros(d, n);
    let mut fill = |a: &mut Array2<f64>, fan_in: usize| {
        let limit = 1.0 / (fan_in as f64).sqrt();
        for v in a.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
    };
    fill(&mut params.l1, d);
    fill(&mut params.l2, 4 * d);
    fill(&mut params.l3, d);
    if let Some(shape) = base_shape {
        debug_assert_eq!(shape.nrows(), n);
        let root = linalg::symmetric_sqrt(shape);
        for (slot, v) in params.b3.iter_mut().zip(root.iter()) {
            *slot = *v;
        }
    }
    params
}

/// Gradient (or Adam moment) storage shaped like [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub l1: Array2<f64>,
    pub b1: Array1<f64>,
    pub l2: Array2<f64>,
    pub b2: Array1<f64>,
    pub l3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            l1: Array2::zeros(params.l1.raw_dim()),
            b1: Array1::zeros(params.b1.raw_dim()),
            l2: Array2::zeros(params.l2.raw_dim()),
            b2: Array1::zeros(params.b2.raw_dim()),
            l3: Array2::zeros(params.l3.raw_dim()),
            b3: Array1::zeros(params.b3.raw_dim()),
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.arrays_mut() {
            for v in s.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn arrays(&self) -> [&[f64]; 6] {
        [
            self.l1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.l2.as_slice().expect("contiguous"),
            self.b2.as_slice().expect("contiguous"),
            self.l3.as_slice().expect("contiguous"),
            self.b3.as_slice().expect("contiguous"),
        ]
    }

    fn arrays_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.l1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.l2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
            self.l3.as_slice_mut().expect("contiguous"),
            self.b3.as_slice_mut().expect("contiguous"),
        ]
    }

    /// Euclidean norm across all parameter blocks.
    pub fn norm(&self) -> f64 {
        self.arrays()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.arrays().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct AdamState {
    m: MlpGrads,
    v: MlpGrads,
    t: usize,
}

impl AdamState {
    fn new(params: &MlpParams) -> Self {
        Self {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads, lr: f64, hp: &AdamParams) {
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        let g_all = grads.arrays();
        let m_all = self.m.arrays_mut();
        let v_all = self.v.arrays_mut();
        let p_all = params.arrays_mut();
        for (((p, g), m), v) in p_all.into_iter().zip(g_all).zip(m_all).zip(v_all) {
            for i in 0..p.len() {
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
    }
}

/// How the volume weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    /// Balance the two loss terms against a calibrated baseline; see
    /// [`select_lambda`].
    Auto,
    Fixed(f64),
}

/// Exponent applied to the baseline determinants in the lambda balance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaDenominator {
    /// Plain determinant.
    #[default]
    Det,
    /// Square-root determinant, consistent with the volume term of the loss.
    SqrtDet,
}

/// Training configuration for both fitting phases.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Target coverage level, carried along for calibration downstream.
    pub eta: f64,
    /// Positive definiteness floor; `None` scales [`DEFAULT_EPSILON_SCALE`]
    /// by the mean diagonal of the global residual covariance at fit time.
    pub epsilon: Option<f64>,
    pub lambda: LambdaRule,
    pub lambda_denominator: LambdaDenominator,
    /// Dropout probability after each ReLU (inverted scaling at train time,
    /// identity at inference).
    pub dropout_rate: f64,
    pub iters_init: usize,
    pub iters_train: usize,
    pub lr_init: f64,
    pub lr_train: f64,
    pub adam: AdamParams,
    /// Minibatch size, capped at the training-set size.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.9,
            epsilon: None,
            lambda: LambdaRule::Auto,
            lambda_denominator: LambdaDenominator::Det,
            dropout_rate: 0.1,
            iters_init: 100_000,
            iters_train: 100_000,
            lr_init: 1e-3,
            lr_train: 1e-5,
            adam: AdamParams::default(),
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmveError> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(LmveError::InvalidEpsilon(eps));
            }
        }
        if let LambdaRule::Fixed(lambda) = self.lambda {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(LmveError::InvalidLambda(lambda));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(LmveError::InvalidDropout(self.dropout_rate));
        }
        if !(self.lr_init > 0.0) || !(self.lr_train > 0.0) {
            return Err(LmveError::InvalidLearningRate(self.lr_init.min(self.lr_train)));
        }
        Ok(())
    }

    /// Resolve the positive definiteness floor against a global residual
    /// covariance estimate.
    pub fn resolve_epsilon(&self, ge_shape: ArrayView2<'_, f64>) -> f64 {
        match self.epsilon {
            Some(eps) => eps,
            None => {
                let n = ge_shape.nrows().max(1);
                let trace: f64 = ge_shape.diag().sum();
                (DEFAULT_EPSILON_SCALE * trace / n as f64).max(1e-12)
            }
        }
    }
}

/// Inverted-dropout masks for the two hidden layers: entries are 0 with
/// probability `rate` and `1/(1-rate)` otherwise.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub mask1: Array1<f64>,
    pub mask2: Array1<f64>,
}

impl DropoutMasks {
    pub fn sample(rng: &mut ChaCha8Rng, rate: f64, d: usize) -> Self {
        debug_assert!((0.0..1.0).contains(&rate));
        let keep_scale = 1.0 / (1.0 - rate);
        let mut draw = |len: usize| {
            Array1::from_shape_fn(len, |_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
        };
        Self {
            mask1: draw(4 * d),
            mask2: draw(d),
        }
    }
}

/// Activations recorded by a forward pass, kept for backpropagation.
struct ForwardTrace {
    a1: Array1<f64>,
    h1: Array1<f64>,
    a2: Array1<f64>,
    h2: Array1<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
}

fn forward_trace(
    params: &MlpParams,
    x: ArrayView1<'_, f64>,
    eps: f64,
    masks: Option<&DropoutMasks>,
) -> ForwardTrace {
    let n = params.n;
    let a1 = &params.l1.dot(&x) + &params.b1;
    let mut h1 = a1.mapv(|v| v.max(0.0));
    if let Some(m) = masks {
        h1 *= &m.mask1;
    }
    let a2 = &params.l2.dot(&h1) + &params.b2;
    let mut h2 = a2.mapv(|v| v.max(0.0));
    if let Some(m) = masks {
        h2 *= &m.mask2;
    }
    let v = &params.l3.dot(&h2) + &params.b3;
    let r = Array2::from_shape_vec((n, n), v.to_vec()).expect("head emits n^2 values");
    let mut c = linalg::symmetrize(r.t().dot(&r).view());
    for i in 0..n {
        c[[i, i]] += eps;
    }
    ForwardTrace { a1, h1, a2, h2, r, c }
}

/// Shape head output `(R, C)` at `x`, with `C = R'R + eps I`.
///
/// Pass masks only during training; inference leaves them off and is
/// deterministic.
pub fn forward_shape(
    params: &MlpParams,
    x: ArrayView1<'_, f64>,
    eps: f64,
    masks: Option<&DropoutMasks>,
) -> Result<(Array2<f64>, Array2<f64>), LmveError> {
    if x.len() != params.d {
        return Err(LmveError::InputDimension {
            expected: params.d,
            got: x.len(),
        });
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LmveError::InvalidEpsilon(eps));
    }
    let trace = forward_trace(params, x, eps, masks);
    Ok((trace.r, trace.c))
}

fn add_outer(acc: &mut Array2<f64>, u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) {
    for (i, ui) in u.iter().enumerate() {
        if *ui == 0.0 {
            continue;
        }
        let mut row = acc.row_mut(i);
        for (j, vj) in v.iter().enumerate() {
            row[j] += ui * vj;
        }
    }
}

/// Backpropagate a gradient in `C` through the head and hidden layers,
/// accumulating into `grads`. `shape_grad` is dl/dC.
fn backprop_shape_grad(
    params: &MlpParams,
    trace: &ForwardTrace,
    shape_grad: &Array2<f64>,
    x: ArrayView1<'_, f64>,
    masks: Option<&DropoutMasks>,
    grads: &mut MlpGrads,
) {
    // dl/dR = R (G + G').
    let sym = shape_grad + &shape_grad.t();
    let d_r = trace.r.dot(&sym);
    let gv = Array1::from_iter(d_r.iter().copied());

    add_outer(&mut grads.l3, gv.view(), trace.h2.view());
    grads.b3 += &gv;
    let gh2 = params.l3.t().dot(&gv);
    let mut ga2 = Array1::<f64>::zeros(gh2.len());
    for i in 0..ga2.len() {
        let gate = if trace.a2[i] > 0.0 { 1.0 } else { 0.0 };
        let mask = masks.map_or(1.0, |m| m.mask2[i]);
        ga2[i] = gh2[i] * gate * mask;
    }

    add_outer(&mut grads.l2, ga2.view(), trace.h1.view());
    grads.b2 += &ga2;
    let gh1 = params.l2.t().dot(&ga2);
    let mut ga1 = Array1::<f64>::zeros(gh1.len());
    for i in 0..ga1.len() {
        let gate = if trace.a1[i] > 0.0 { 1.0 } else { 0.0 };
        let mask = masks.map_or(1.0, |m| m.mask1[i]);
        ga1[i] = gh1[i] * gate * mask;
    }

    add_outer(&mut grads.l1, ga1.view(), x);
    grads.b1 += &ga1;
}

fn check_batch(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    other_rows: usize,
    lambda: f64,
    eps: f64,
    masks: Option<usize>,
) -> Result<(), LmveError> {
    if x.nrows() == 0 {
        return Err(LmveError::EmptyBatch);
    }
    if x.ncols() != params.d {
        return Err(LmveError::InputDimension {
            expected: params.d,
            got: x.ncols(),
        });
    }
    if other_rows != x.nrows() {
        return Err(LmveError::BatchMismatch {
            x_rows: x.nrows(),
            other: other_rows,
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LmveError::InvalidLambda(lambda));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LmveError::InvalidEpsilon(eps));
    }
    if let Some(len) = masks {
        if len != x.nrows() {
            return Err(LmveError::BatchMismatch {
                x_rows: x.nrows(),
                other: len,
            });
        }
    }
    Ok(())
}

/// Penalized objective averaged over a batch of features and frozen-center
/// residuals: `mean_i [ r_i' C(x_i)^-1 r_i + lambda det(C(x_i))^(1/2) ]`.
pub fn lmve_loss(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    resid: ArrayView2<'_, f64>,
    lambda: f64,
    eps: f64,
    masks: Option<&[DropoutMasks]>,
) -> Result<f64, LmveError> {
    check_batch(params, x, resid.nrows(), lambda, eps, masks.map(|m| m.len()))?;
    if resid.ncols() != params.n {
        return Err(LmveError::ResidualDimension {
            expected: params.n,
            got: resid.ncols(),
        });
    }
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let trace = forward_trace(params, x.row(i), eps, masks.map(|m| &m[i]));
        let factor = SpdFactor::new(trace.c.view())?;
        let mahal = factor.quadratic_form(resid.row(i));
        let sqrt_det = (0.5 * factor.log_det()).exp();
        total += mahal + lambda * sqrt_det;
    }
    Ok(total / x.nrows() as f64)
}

/// Analytic gradient of [`lmve_loss`]; also returns the loss value computed
/// from the same forward passes (and so the same dropout masks).
pub fn lmve_grad(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    resid: ArrayView2<'_, f64>,
    lambda: f64,
    eps: f64,
    masks: Option<&[DropoutMasks]>,
) -> Result<(MlpGrads, f64), LmveError> {
    check_batch(params, x, resid.nrows(), lambda, eps, masks.map(|m| m.len()))?;
    if resid.ncols() != params.n {
        return Err(LmveError::ResidualDimension {
            expected: params.n,
            got: resid.ncols(),
        });
    }
    let mut grads = MlpGrads::zeros_like(params);
    let mut total = 0.0;
    let n = params.n;
    for i in 0..x.nrows() {
        let sample_masks = masks.map(|m| &m[i]);
        let trace = forward_trace(params, x.row(i), eps, sample_masks);
        let factor = SpdFactor::new(trace.c.view())?;
        let w = factor.solve(resid.row(i));
        let mahal = resid.row(i).dot(&w);
        let sqrt_det = (0.5 * factor.log_det()).exp();
        total += mahal + lambda * sqrt_det;

        // G = -w w' + (lambda/2) sqrt(det) C^-1.
        let mut shape_grad = Array2::<f64>::zeros((n, n));
        if lambda > 0.0 {
            shape_grad = factor.inverse() * (0.5 * lambda * sqrt_det);
        }
        for a in 0..n {
            for b in 0..n {
                shape_grad[[a, b]] -= w[a] * w[b];
            }
        }
        backprop_shape_grad(params, &trace, &shape_grad, x.row(i), sample_masks, &mut grads);
    }
    let scale = 1.0 / x.nrows() as f64;
    grads.scale(scale);
    Ok((grads, total * scale))
}

/// Squared-Frobenius imitation objective against per-sample target shapes,
/// with its gradient: `mean_i ||C(x_i) - K_i||_F^2`.
fn imitation_grad(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    targets: &[Array2<f64>],
    eps: f64,
    masks: Option<&[DropoutMasks]>,
) -> Result<(MlpGrads, f64), LmveError> {
    check_batch(params, x, targets.len(), 0.0, eps, masks.map(|m| m.len()))?;
    let mut grads = MlpGrads::zeros_like(params);
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let sample_masks = masks.map(|m| &m[i]);
        let trace = forward_trace(params, x.row(i), eps, sample_masks);
        let diff = &trace.c - &targets[i];
        total += diff.iter().map(|v| v * v).sum::<f64>();
        let shape_grad = &diff * 2.0;
        backprop_shape_grad(params, &trace, &shape_grad, x.row(i), sample_masks, &mut grads);
    }
    let scale = 1.0 / x.nrows() as f64;
    grads.scale(scale);
    Ok((grads, total * scale))
}

/// Volume weight balancing the two loss terms against a calibrated
/// baseline over the training set:
/// `lambda = mean_j M_B(x_j, y_j) / mean_j det(C_B(x_j))`
/// (optionally `det^(1/2)` in the denominator).
///
/// The baseline must have been fitted and calibrated on the training split
/// alone so no validation information leaks into the weight.
pub fn select_lambda(
    baseline: &CalibratedModel,
    x_train: ArrayView2<'_, f64>,
    y_train: ArrayView2<'_, f64>,
    denominator: LambdaDenominator,
) -> Result<f64, LmveError> {
    if x_train.nrows() == 0 {
        return Err(LmveError::EmptyBatch);
    }
    if x_train.nrows() != y_train.nrows() {
        return Err(LmveError::BatchMismatch {
            x_rows: x_train.nrows(),
            other: y_train.nrows(),
        });
    }
    let mut mahal_sum = 0.0;
    let mut det_sum = 0.0;
    for i in 0..x_train.nrows() {
        let ellipsoid = baseline
            .ellipsoid_at(x_train.row(i))
            .map_err(|e| LmveError::Baseline(e.to_string()))?;
        mahal_sum += ellipsoid
            .mahalanobis(y_train.row(i))
            .map_err(|e| LmveError::Baseline(e.to_string()))?;
        let log_det = ellipsoid.factor().log_det();
        det_sum += match denominator {
            LambdaDenominator::Det => log_det.exp(),
            LambdaDenominator::SqrtDet => (0.5 * log_det).exp(),
        };
    }
    if !(det_sum > 0.0) {
        return Err(LmveError::ZeroLambdaDenominator);
    }
    Ok(mahal_sum / det_sum)
}

/// Result of one fitting phase: final parameters plus the per-iteration
/// minibatch losses.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub params: MlpParams,
    pub losses: Vec<f64>,
}

fn draw_batch(rng: &mut ChaCha8Rng, pool: usize, size: usize, out: &mut Vec<usize>) {
    out.clear();
    for _ in 0..size {
        out.push(rng.random_range(0..pool));
    }
}

fn gather_rows(src: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((idx.len(), src.ncols()));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&src.row(i));
    }
    out
}

fn sample_batch_masks(
    rng: &mut ChaCha8Rng,
    rate: f64,
    d: usize,
    count: usize,
) -> Option<Vec<DropoutMasks>> {
    if rate == 0.0 {
        return None;
    }
    Some((0..count).map(|_| DropoutMasks::sample(rng, rate, d)).collect())
}

/// Initialization phase: imitate a baseline's shapes at the training points
/// with `iters_init` Adam steps at `lr_init`.
///
/// `targets[i]` is the baseline shape at training point `i` (precompute once
/// with [`crate::estimators::imitation_targets`]); `x` holds the matching
/// standardized feature rows.
pub fn init_phase(
    params: MlpParams,
    x: ArrayView2<'_, f64>,
    targets: &[Array2<f64>],
    eps: f64,
    config: &TrainConfig,
) -> Result<PhaseOutcome, LmveError> {
    config.validate()?;
    if config.iters_init == 0 {
        return Ok(PhaseOutcome {
            params,
            losses: Vec::new(),
        });
    }
    check_batch(&params, x, targets.len(), 0.0, eps, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_INIT);
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let batch_size = config.batch_size.clamp(1, x.nrows());
    let mut idx = Vec::with_capacity(batch_size);
    let mut losses = Vec::with_capacity(config.iters_init);
    for iteration in 0..config.iters_init {
        draw_batch(&mut rng, x.nrows(), batch_size, &mut idx);
        let xb = gather_rows(x, &idx);
        let tb: Vec<Array2<f64>> = idx.iter().map(|&i| targets[i].clone()).collect();
        let masks = sample_batch_masks(&mut rng, config.dropout_rate, params.d, batch_size);
        let (grads, loss) = imitation_grad(&params, xb.view(), &tb, eps, masks.as_deref())?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(LmveError::NonFiniteLoss {
                iteration,
                loss,
                grad_norm: grads.norm(),
            });
        }
        adam.step(&mut params, &grads, config.lr_init, &config.adam);
        losses.push(loss);
    }
    Ok(PhaseOutcome { params, losses })
}

/// Training phase: `iters_train` Adam steps on the penalized objective at
/// `lr_train`, with dropout active. Centers are frozen; only the residuals
/// they produced enter here.
pub fn train_phase(
    params: MlpParams,
    x: ArrayView2<'_, f64>,
    resid: ArrayView2<'_, f64>,
    lambda: f64,
    eps: f64,
    config: &TrainConfig,
) -> Result<PhaseOutcome, LmveError> {
    config.validate()?;
    if config.iters_train == 0 {
        return Ok(PhaseOutcome {
            params,
            losses: Vec::new(),
        });
    }
    check_batch(&params, x, resid.nrows(), lambda, eps, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_TRAIN);
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let batch_size = config.batch_size.clamp(1, x.nrows());
    let mut idx = Vec::with_capacity(batch_size);
    let mut losses = Vec::with_capacity(config.iters_train);
    for iteration in 0..config.iters_train {
        draw_batch(&mut rng, x.nrows(), batch_size, &mut idx);
        let xb = gather_rows(x, &idx);
        let rb = gather_rows(resid, &idx);
        let masks = sample_batch_masks(&mut rng, config.dropout_rate, params.d, batch_size);
        let (grads, loss) = lmve_grad(&params, xb.view(), rb.view(), lambda, eps, masks.as_deref())?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(LmveError::NonFiniteLoss {
                iteration,
                loss,
                grad_norm: grads.norm(),
            });
        }
        adam.step(&mut params, &grads, config.lr_train, &config.adam);
        losses.push(loss);
    }
    Ok(PhaseOutcome { params, losses })
}

const CHECKPOINT_MAGIC: &str = "mve-mlp-checkpoint v1";

/// Write network parameters to a text checkpoint.
///
/// Layout: a magic line; `d`, `n`, and `epsilon` header lines; then each
/// parameter block introduced by `<name> <rows> [cols]` followed by its
/// values, one row per line, space-separated, printed with 17 significant
/// digits so the file round-trips bit for bit.
pub fn save_checkpoint(path: &Path, params: &MlpParams, eps: f64) -> Result<(), LmveError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&format!("d {}\n", params.d));
    out.push_str(&format!("n {}\n", params.n));
    out.push_str(&format!("epsilon {eps:.17e}\n"));
    let mut write_matrix = |name: &str, a: &Array2<f64>| {
        out.push_str(&format!("{name} {} {}\n", a.nrows(), a.ncols()));
        for row in a.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    };
    write_matrix("l1", &params.l1);
    write_matrix("l2", &params.l2);
    write_matrix("l3", &params.l3);
    let mut write_vector = |name: &str, a: &Array1<f64>| {
        out.push_str(&format!("{name} {}\n", a.len()));
        let line: Vec<String> = a.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    };
    write_vector("b1", &params.b1);
    write_vector("b2", &params.b2);
    write_vector("b3", &params.b3);
    fs::write(path, out)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, f64), LmveError> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut next_line = || -> Result<String, LmveError> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| LmveError::Checkpoint("unexpected end of file".into()))
    };

    let magic = next_line()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(LmveError::Checkpoint(format!("bad magic line {magic:?}")));
    }
    let parse_header = |line: &str, key: &str| -> Result<String, LmveError> {
        line.strip_prefix(&format!("{key} "))
            .map(str::to_string)
            .ok_or_else(|| LmveError::Checkpoint(format!("expected {key} line, got {line:?}")))
    };
    let d: usize = parse_header(&next_line()?, "d")?
        .parse()
        .map_err(|_| LmveError::Checkpoint("bad d".into()))?;
    let n: usize = parse_header(&next_line()?, "n")?
        .parse()
        .map_err(|_| LmveError::Checkpoint("bad n".into()))?;
    let eps: f64 = parse_header(&next_line()?, "epsilon")?
        .parse()
        .map_err(|_| LmveError::Checkpoint("bad epsilon".into()))?;
    if d == 0 || n == 0 {
        return Err(LmveError::Checkpoint("dimensions must be positive".into()));
    }

    let mut params = MlpParams::zeros(d, n);

    for (name, rows, cols) in [("l1", 4 * d, d), ("l2", d, 4 * d), ("l3", n * n, d)] {
        let header = next_line()?;
        let expected = format!("{name} {rows} {cols}");
        if header != expected {
            return Err(LmveError::Checkpoint(format!(
                "expected {expected:?}, got {header:?}"
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = next_line()?;
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| LmveError::Checkpoint(format!("bad value {tok:?}")))?,
                );
            }
        }
        if values.len() != rows * cols {
            return Err(LmveError::Checkpoint(format!(
                "{name}: expected {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let a = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
        match name {
            "l1" => params.l1 = a,
            "l2" => params.l2 = a,
            _ => params.l3 = a,
        }
    }
    for (name, len) in [("b1", 4 * d), ("b2", d), ("b3", n * n)] {
        let header = next_line()?;
        let expected = format!("{name} {len}");
        if header != expected {
            return Err(LmveError::Checkpoint(format!(
                "expected {expected:?}, got {header:?}"
            )));
        }
        let line = next_line()?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| LmveError::Checkpoint(format!("bad value {tok:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != len {
            return Err(LmveError::Checkpoint(format!(
                "{name}: expected {len} values, got {}",
                values.len()
            )));
        }
        let a = Array1::from_vec(values);
        match name {
            "b1" => params.b1 = a,
            "b2" => params.b2 = a,
            _ => params.b3 = a,
        }
    }
    if !params.is_finite() {
        return Err(LmveError::Checkpoint("non-finite parameter".into()));
    }
    Ok((params, eps))
}
