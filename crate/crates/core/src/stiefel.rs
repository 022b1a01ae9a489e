//! Optimization on the Stiefel manifold `St(k, c)` of `c×k` matrices with
//! orthonormal columns.
//!
//! The update used throughout is the plain Riemannian gradient step
//!
//! ```text
//! grad f(X) = ∇f(X) − ½ X Xᵀ ∇f(X) − ½ X ∇f(X)ᵀ X
//! X⁺        = R_X(−λ grad f(X)),   R_X(Ξ) = (X + Ξ)(I + ΞᵀΞ)^{-1/2}
//! ```
//!
//! with the step size either fixed or resolved to `1/L`, where `L` is the
//! Lipschitz constant of the Euclidean gradient supplied by the cost.

use std::fmt::Write as _;
use std::io;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_psd, psd_spectral_norm, qr_orthonormalize, Matrix};

/// Orthonormality tolerance enforced on every [`StiefelPoint`].
pub const ORTHONORMALITY_TOL: f64 = 1e-9;
/// Skew-symmetry tolerance (relative to the direction's norm) for tangent vectors.
pub const TANGENT_TOL: f64 = 1e-9;
/// Loss increase tolerated before strict mode reports a descent violation.
pub const DESCENT_SLACK: f64 = 1e-9;
const MIN_LIPSCHITZ: f64 = 1e-12;

/// A `c×k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    value: Matrix,
}

impl StiefelPoint {
    pub fn new(value: Matrix) -> Result<Self> {
        Self::with_tolerance(value, ORTHONORMALITY_TOL)
    }

    /// Like [`StiefelPoint::new`] with a caller-chosen orthonormality
    /// tolerance (used when reading decimal model files).
    pub fn with_tolerance(value: Matrix, tol: f64) -> Result<Self> {
        if value.rows() < value.cols() {
            return Err(Error::ShapeMismatch(format!(
                "Stiefel point needs rows >= cols, got {}x{}",
                value.rows(),
                value.cols()
            )));
        }
        let error = value.orthogonality_error();
        if error.is_nan() || error > tol {
            return Err(Error::NotOnManifold { error });
        }
        Ok(Self { value })
    }

    /// QR-orthonormalized Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || c < k {
            return Err(Error::InvalidParameter(format!("cannot draw a point on St({k}, {c})")));
        }
        loop {
            let g = Matrix::from_fn(c, k, |_, _| rng.sample(StandardNormal));
            match qr_orthonormalize(&g) {
                Ok(q) => return Self::new(q),
                Err(Error::RankDeficient { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.value
    }

    pub fn into_matrix(self) -> Matrix {
        self.value
    }

    /// Ambient dimension `c`.
    pub fn ambient_dim(&self) -> usize {
        self.value.rows()
    }

    /// Number of orthonormal columns `k`.
    pub fn frame_dim(&self) -> usize {
        self.value.cols()
    }

    /// `‖XᵀX − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        self.value.orthogonality_error()
    }
}

/// A direction in the tangent space at a point: `XᵀΞ + ΞᵀX = 0`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    at: StiefelPoint,
    direction: Matrix,
}

impl TangentVector {
    /// Validates tangent-space membership.
    pub fn new(at: StiefelPoint, direction: Matrix) -> Result<Self> {
        at.matrix().check_same_shape(&direction, "tangent vector")?;
        let residual = tangent_residual(&at, &direction);
        if residual > TANGENT_TOL * direction.frobenius_norm().max(1.0) {
            return Err(Error::InvalidParameter(format!("direction is not tangent (skew residual {residual:e})")));
        }
        Ok(Self { at, direction })
    }

    pub fn at(&self) -> &StiefelPoint {
        &self.at
    }

    pub fn direction(&self) -> &Matrix {
        &self.direction
    }

    pub fn into_direction(self) -> Matrix {
        self.direction
    }

    pub fn norm(&self) -> f64 {
        self.direction.frobenius_norm()
    }

    /// `‖XᵀΞ + ΞᵀX‖_F`.
    pub fn residual(&self) -> f64 {
        tangent_residual(&self.at, &self.direction)
    }
}

/// `‖XᵀΞ + ΞᵀX‖_F`, zero exactly when `Ξ` is tangent at `X`.
pub fn tangent_residual(x: &StiefelPoint, xi: &Matrix) -> f64 {
    let xt_xi = x.matrix().t_matmul(xi).expect("shapes checked by caller");
    (&xt_xi + &xt_xi.transpose()).frobenius_norm()
}

/// Riemannian gradient from the Euclidean gradient, written out literally as
/// `G − ½XXᵀG − ½XGᵀX`.
pub fn riemannian_gradient(x: &StiefelPoint, egrad: &Matrix) -> Result<TangentVector> {
    let xm = x.matrix();
    xm.check_same_shape(egrad, "Riemannian gradient")?;
    let xxt_g = xm.matmul(&xm.t_matmul(egrad)?)?;
    let x_gt_x = xm.matmul(&egrad.t_matmul(xm)?)?;
    let direction = egrad.add_scaled(&xxt_g, -0.5)?.add_scaled(&x_gt_x, -0.5)?;
    Ok(TangentVector { at: x.clone(), direction })
}

/// Retraction `R_X(Ξ) = (X + Ξ)(I + ΞᵀΞ)^{-1/2}`.
///
/// `Ξ` must be tangent at `X`; other inputs are rejected with
/// [`Error::NumericFailure`]. The `k × k` factor is formed as
/// `(X + Ξ)ᵀ(X + Ξ)`, which equals `I + ΞᵀΞ` on the tangent bundle but does
/// not carry rounding drift in `XᵀX` into the next iterate. Without this the
/// drift grows geometrically under repeated `1/L` steps.
pub fn retract(x: &StiefelPoint, xi: &Matrix) -> Result<StiefelPoint> {
    x.matrix().check_same_shape(xi, "retraction")?;
    if xi.is_zero() {
        return Ok(x.clone());
    }
    let residual = tangent_residual(x, xi);
    if residual > TANGENT_TOL * xi.frobenius_norm().max(1.0) {
        return Err(Error::NumericFailure(format!("retraction step is not tangent (skew residual {residual:e})")));
    }
    let sum = x.matrix().checked_add(xi)?;
    let inv_sqrt = inv_sqrt_psd(&sum.t_matmul(&sum)?.symmetrize())
        .map_err(|e| Error::NumericFailure(format!("retraction inverse square root: {e}")))?;
    let moved = sum.matmul(&inv_sqrt)?;
    if !moved.all_finite() {
        return Err(Error::NumericFailure("retraction produced non-finite values".into()));
    }
    StiefelPoint::new(moved).map_err(|e| match e {
        Error::NotOnManifold { error } => {
            Error::NumericFailure(format!("retraction left the manifold (orthogonality error {error:e})"))
        }
        other => other,
    })
}

/// Plain gradient step `W − λ∇f(W)` on an unconstrained parameter.
pub fn euclidean_step(w: &Matrix, egrad: &Matrix, step: f64) -> Result<Matrix> {
    check_step(step)?;
    w.check_same_shape(egrad, "Euclidean step")?;
    if step == 0.0 {
        return Ok(w.clone());
    }
    w.add_scaled(egrad, -step)
}

/// Manifold step `R_X(−λ grad f(X))`.
pub fn manifold_step(x: &StiefelPoint, egrad: &Matrix, step: f64) -> Result<StiefelPoint> {
    check_step(step)?;
    let grad = riemannian_gradient(x, egrad)?;
    retract(x, &grad.direction().scale(-step))
}

/// `f(R_X(t·Ξ))`, the cost along a retraction curve.
pub fn evaluate_retracted_loss<F>(f: F, x: &StiefelPoint, xi: &Matrix, t: f64) -> Result<f64>
where
    F: Fn(&StiefelPoint) -> Result<f64>,
{
    if t == 0.0 {
        return f(x);
    }
    f(&retract(x, &xi.scale(t))?)
}

/// `L = 2‖BBᵀ‖₂`, the Lipschitz constant of `W̃ ↦ ∇‖A − W̃B‖²`.
pub fn lipschitz_constant(b: &Matrix) -> Result<f64> {
    lipschitz_from_gram(&b.gram_rows())
}

/// Same constant from a precomputed `BBᵀ`.
pub fn lipschitz_from_gram(bbt: &Matrix) -> Result<f64> {
    let l = 2.0 * psd_spectral_norm(bbt)?;
    if l < MIN_LIPSCHITZ {
        return Err(Error::DegenerateData(format!("Lipschitz constant {l:e} is too small for an automatic step size")));
    }
    Ok(l)
}

fn check_step(step: f64) -> Result<()> {
    if !(step.is_finite() && step >= 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be finite and >= 0, got {step}")));
    }
    Ok(())
}

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    /// `1/L` from the cost's Lipschitz constant.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StepSize::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("step size must be 'auto' or a number, got {s:?}")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {v}")));
        }
        Ok(StepSize::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub step_size: StepSize,
    pub max_iters: usize,
    /// Stop once the Riemannian gradient norm falls to this value.
    pub grad_tol: f64,
    pub seed: u64,
    /// Columns drawn per iteration; `None` uses the full batch.
    pub batch_size: Option<usize>,
    /// Fail with [`Error::DescentViolation`] if the loss rises by more than
    /// [`DESCENT_SLACK`] in one iteration.
    pub strict_descent: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step_size: StepSize::Auto,
            max_iters: 5000,
            grad_tol: 1e-8,
            seed: 42,
            batch_size: None,
            strict_descent: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter("grad_tol must be positive".into()));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParameter(format!("step size must be positive, got {s}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One iteration of an optimizer run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Loss after the iteration's update.
    pub loss: f64,
    /// Riemannian gradient norm that drove the manifold step.
    pub grad_norm: f64,
    /// `‖XᵀX − I‖_F` after the update.
    pub ortho_err: f64,
    /// Step size used for the manifold step (0 when no step was taken).
    pub step: f64,
}

/// Per-iteration record of an optimizer run, starting from `initial_loss`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub initial_loss: f64,
    pub records: Vec<TraceRecord>,
}

impl DescentTrace {
    pub fn new(initial_loss: f64) -> Self {
        Self { initial_loss, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// Loss before each record's update.
    fn previous_losses(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.initial_loss).chain(self.records.iter().map(|r| r.loss))
    }

    /// Number of iterations whose loss rose by more than `slack`.
    pub fn loss_increases(&self, slack: f64) -> usize {
        self.previous_losses().zip(&self.records).filter(|(prev, r)| r.loss > prev + slack).count()
    }

    /// Iterations (with a step taken) where the sufficient decrease
    /// `f_prev − f ≥ (λ/2)‖grad‖² − slack` holds, and the number of such
    /// iterations in total. With `λ = 1/L` the bound is `‖grad‖²/(2L)`.
    pub fn sufficient_decrease_counts(&self, slack: f64) -> (usize, usize) {
        let mut ok = 0;
        let mut total = 0;
        for (prev, r) in self.previous_losses().zip(&self.records) {
            if r.step == 0.0 {
                continue;
            }
            total += 1;
            if prev - r.loss >= 0.5 * r.step * r.grad_norm * r.grad_norm - slack {
                ok += 1;
            }
        }
        (ok, total)
    }

    /// CSV with header `iter,loss,grad_norm,ortho_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,grad_norm,ortho_err\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.loss, r.grad_norm, r.ortho_err);
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// A smooth cost on `St(k, c)`, evaluated through its ambient extension.
pub trait ManifoldCost {
    fn cost(&self, x: &Matrix) -> Result<f64>;

    fn euclidean_gradient(&self, x: &Matrix) -> Result<Matrix>;

    /// Lipschitz constant of the Euclidean gradient, needed for
    /// [`StepSize::Auto`].
    fn lipschitz(&self) -> Result<f64> {
        Err(Error::InvalidParameter("this cost has no Lipschitz constant; pass an explicit step size".into()))
    }
}

/// Riemannian gradient descent from `x0`.
///
/// Runs until the Riemannian gradient norm is at most `cfg.grad_tol` (the
/// converged iteration is recorded without a step) or `cfg.max_iters`
/// iterations have been taken.
pub fn optimize<C: ManifoldCost + ?Sized>(
    cost: &C,
    x0: &StiefelPoint,
    cfg: &OptimConfig,
) -> Result<(StiefelPoint, DescentTrace)> {
    cfg.validate()?;
    let step = match cfg.step_size {
        StepSize::Auto => {
            let l = cost.lipschitz()?;
            if !(l.is_finite() && l >= MIN_LIPSCHITZ) {
                return Err(Error::DegenerateData(format!(
                    "Lipschitz constant {l:e} is too small for an automatic step size"
                )));
            }
            1.0 / l
        }
        StepSize::Fixed(s) => s,
    };
    let mut x = x0.clone();
    let mut loss = cost.cost(x.matrix())?;
    let mut trace = DescentTrace::new(loss);
    for iter in 1..=cfg.max_iters {
        let egrad = cost.euclidean_gradient(x.matrix())?;
        let grad = riemannian_gradient(&x, &egrad)?;
        let grad_norm = grad.norm();
        if grad_norm <= cfg.grad_tol {
            trace.records.push(TraceRecord { iter, loss, grad_norm, ortho_err: x.orthogonality_error(), step: 0.0 });
            break;
        }
        let next = retract(&x, &grad.direction().scale(-step))?;
        let next_loss = cost.cost(next.matrix())?;
        if cfg.strict_descent && next_loss > loss + DESCENT_SLACK {
            return Err(Error::DescentViolation { iter, increase: next_loss - loss });
        }
        x = next;
        loss = next_loss;
        trace.records.push(TraceRecord { iter, loss, grad_norm, ortho_err: x.orthogonality_error(), step });
    }
    Ok((x, trace))
}
