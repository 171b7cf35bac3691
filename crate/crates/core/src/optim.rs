//! Kernel learning: plain SGD through the Cayley charts, Riemannian SGD on
//! the Stiefel manifold, and the finite-difference oracle that checks both.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cayley::{dlambda_dt, DiagParams, OrthogonalMatrix, SkewParams};
use crate::error::{LcvError, Result};
use crate::kernel::{assemble_kernel, factor_grad, kernel_grad, KernelGradient, SpdKernel};
use crate::linalg::{ensure_finite, max_abs, orthogonality_error, skew_part, Mat};

pub use crate::linalg::matrix_inv_sqrt;

const STIEFEL_ORTHOGONALITY: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    Cayley,
    Stiefel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub grad_tolerance: f64,
    pub mode: OptimizerMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_steps: 500,
            grad_tolerance: 1e-6,
            mode: OptimizerMode::Cayley,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LcvError::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps == 0 {
            return Err(LcvError::InvalidArgument(
                "max_steps must be at least 1".into(),
            ));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(LcvError::InvalidArgument(format!(
                "grad_tolerance must be positive, got {}",
                self.grad_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub kernel: SpdKernel,
    pub step: usize,
    pub last_loss: f64,
    pub grad_norm: f64,
}

impl TrainState {
    /// Fresh state at `W = I`.
    pub fn identity(dim: usize) -> Self {
        Self {
            kernel: SpdKernel::identity(dim),
            step: 0,
            last_loss: f64::NAN,
            grad_norm: f64::NAN,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

fn axpy(params: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    params.iter().zip(grad).map(|(p, g)| p - lr * g).collect()
}

/// Moves skew and diagonal parameters by `-lr * grad` and reassembles.
pub fn cayley_sgd_step(state: &TrainState, grad: &KernelGradient, lr: f64) -> Result<TrainState> {
    if !grad.is_finite() {
        return Err(LcvError::NonFinite("kernel gradient"));
    }
    if !lr.is_finite() {
        return Err(LcvError::NonFinite("learning rate"));
    }
    let k = &state.kernel;
    let s = k.skew_params()?;
    if grad.d_skew.len() != s.len() || grad.d_diag.len() != k.dim() {
        return Err(LcvError::DimensionMismatch(format!(
            "gradient lengths ({}, {}) for a kernel of dimension {}",
            grad.d_skew.len(),
            grad.d_diag.len(),
            k.dim()
        )));
    }
    let s = SkewParams::new(s.dim(), axpy(s.entries(), &grad.d_skew, lr))?;
    let t = DiagParams::new(axpy(k.diag_params().values(), &grad.d_diag, lr))?;
    Ok(TrainState {
        kernel: assemble_kernel(&s, &t)?,
        step: state.step + 1,
        last_loss: state.last_loss,
        grad_norm: grad.max_norm(),
    })
}

fn check_orthogonal(x: &Mat) -> Result<()> {
    let error = orthogonality_error(x);
    if error > STIEFEL_ORTHOGONALITY {
        return Err(LcvError::NotOrthogonal { error });
    }
    Ok(())
}

/// Tangent projection `(I - X X^T) Z + X skew(X^T Z)`.
pub fn stiefel_project(x: &Mat, z: &Mat) -> Result<Mat> {
    if x.shape() != z.shape() {
        return Err(LcvError::DimensionMismatch(format!(
            "point {:?} and direction {:?}",
            x.shape(),
            z.shape()
        )));
    }
    ensure_finite(z, "ambient direction")?;
    check_orthogonal(x)?;
    let n = x.nrows();
    let normal = (Mat::identity(n, n) - x * x.transpose()) * z;
    Ok(normal + x * skew_part(&(x.transpose() * z)))
}

/// Retraction `(X + Z)(I + Z^T Z)^{-1/2}`; `Z = 0` returns `X` exactly.
pub fn stiefel_retract(x: &OrthogonalMatrix, z: &Mat) -> Result<OrthogonalMatrix> {
    let xm = x.as_matrix();
    if xm.shape() != z.shape() {
        return Err(LcvError::DimensionMismatch(format!(
            "point {:?} and tangent {:?}",
            xm.shape(),
            z.shape()
        )));
    }
    ensure_finite(z, "tangent step")?;
    if z.iter().all(|v| *v == 0.0) {
        return Ok(x.clone());
    }
    let n = z.ncols();
    let inv_sqrt = matrix_inv_sqrt(&(Mat::identity(n, n) + z.transpose() * z))?;
    let r = (xm + z) * inv_sqrt;
    check_orthogonal(&r)?;
    Ok(OrthogonalMatrix::new_unchecked(r))
}

/// `P <- R_P(-lr * proj_P(dL/dP))`, with the diagonal parameters moved by
/// `-lr * dL/dt`.
pub fn stiefel_sgd_step(
    state: &TrainState,
    dl_dp: &Mat,
    d_diag: &[f64],
    lr: f64,
) -> Result<TrainState> {
    if !d_diag.iter().all(|x| x.is_finite()) {
        return Err(LcvError::NonFinite("diagonal gradient"));
    }
    ensure_finite(dl_dp, "orthogonal-factor gradient")?;
    let k = &state.kernel;
    if d_diag.len() != k.dim() {
        return Err(LcvError::DimensionMismatch(format!(
            "{} diagonal gradient entries for a kernel of dimension {}",
            d_diag.len(),
            k.dim()
        )));
    }
    let riemannian = stiefel_project(k.p().as_matrix(), dl_dp)?;
    let p = stiefel_retract(k.p(), &(riemannian.clone() * -lr))?;
    let t = DiagParams::new(axpy(k.diag_params().values(), d_diag, lr))?;
    let grad_norm = max_abs(&riemannian).max(d_diag.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    Ok(TrainState {
        kernel: SpdKernel::from_factors(p, t)?,
        step: state.step + 1,
        last_loss: state.last_loss,
        grad_norm,
    })
}

/// Central differences `(L(theta + eps e_i) - L(theta - eps e_i)) / (2 eps)`
/// over the packed skew parameters followed by the diagonal parameters.
pub fn finite_difference_oracle<F>(
    loss: F,
    s: &SkewParams,
    t: &DiagParams,
    eps: f64,
) -> Result<KernelGradient>
where
    F: Fn(&SkewParams, &DiagParams) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(LcvError::InvalidArgument(format!(
            "finite-difference step {eps:e} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |s: &SkewParams, t: &DiagParams| -> Result<f64> {
        let v = loss(s, t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(LcvError::NonFinite("loss evaluation"))
        }
    };
    let mut d_skew = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let mut hi = s.entries().to_vec();
        let mut lo = hi.clone();
        hi[i] += eps;
        lo[i] -= eps;
        let up = eval(&SkewParams::new(s.dim(), hi)?, t)?;
        let down = eval(&SkewParams::new(s.dim(), lo)?, t)?;
        d_skew.push((up - down) / (2.0 * eps));
    }
    let mut d_diag = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let mut hi = t.values().to_vec();
        let mut lo = hi.clone();
        hi[i] += eps;
        lo[i] -= eps;
        let up = eval(s, &DiagParams::new(hi)?)?;
        let down = eval(s, &DiagParams::new(lo)?)?;
        d_diag.push((up - down) / (2.0 * eps));
    }
    Ok(KernelGradient { d_skew, d_diag })
}

/// Runs the training loop from `initial` until the gradient max-norm drops
/// below the tolerance or `max_steps` updates have been made.
///
/// `objective` returns the loss and `dL/dW` at a kernel; `on_step` sees one
/// record per evaluated step.
pub fn train<F, L>(
    initial: TrainState,
    config: &OptimizerConfig,
    mut objective: F,
    mut on_step: L,
) -> Result<TrainState>
where
    F: FnMut(&SpdKernel) -> Result<(f64, Mat)>,
    L: FnMut(&StepRecord),
{
    config.validate()?;
    let mut state = initial;
    let lr = config.learning_rate;
    loop {
        let started = Instant::now();
        let (loss, dl_dw) = objective(&state.kernel)?;
        if !loss.is_finite() {
            return Err(LcvError::NonFinite("training loss"));
        }
        state.last_loss = loss;
        let next = match config.mode {
            OptimizerMode::Cayley => {
                let grad = kernel_grad(&state.kernel, &dl_dw)?;
                state.grad_norm = grad.max_norm();
                if state.grad_norm < config.grad_tolerance || state.step >= config.max_steps {
                    None
                } else {
                    Some(cayley_sgd_step(&state, &grad, lr)?)
                }
            }
            OptimizerMode::Stiefel => {
                let (dl_dp, dl_dlambda) = factor_grad(&state.kernel, &dl_dw)?;
                let d_diag: Vec<f64> = dl_dlambda
                    .iter()
                    .zip(state.kernel.diag_params().values())
                    .map(|(g, t)| g * dlambda_dt(*t))
                    .collect();
                let tangent = stiefel_project(state.kernel.p().as_matrix(), &dl_dp)?;
                state.grad_norm =
                    max_abs(&tangent).max(d_diag.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
                if state.grad_norm < config.grad_tolerance || state.step >= config.max_steps {
                    None
                } else {
                    Some(stiefel_sgd_step(&state, &dl_dp, &d_diag, lr)?)
                }
            }
        };
        on_step(&StepRecord {
            step: state.step,
            loss,
            grad_norm: state.grad_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        match next {
            Some(s) => state = s,
            None => return Ok(state),
        }
    }
}
