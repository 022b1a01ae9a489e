//! Orthogonal Luminance Decoupler: a linear autoencoder `d̂ = W̃ Wᵀ d` with
//! an unconstrained encoder `W` and an orthonormal decoder `W̃ ∈ St(k, c)`,
//! trained on exposure differences `A = GT − In`.
//!
//! Everything is evaluated through the scatter `S = A Aᵀ`, so the cost of an
//! iteration does not depend on the number of samples:
//!
//! ```text
//! f(W, W̃) = ‖A − W̃ Wᵀ A‖² = tr(M S Mᵀ),  M = I − W̃ Wᵀ
//! ∇_W̃ f   = −2 (S W − W̃ Wᵀ S W)
//! ∇_W f    = −2 (S W̃ − S W W̃ᵀ W̃)
//! ```

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{psd_spectral_norm, qr_orthonormalize, sym_eig, Matrix};
use crate::report::VarianceReport;
use crate::stiefel::{
    euclidean_step, lipschitz_constant, lipschitz_from_gram, retract, riemannian_gradient, DescentTrace, ManifoldCost,
    OptimConfig, StepSize, StiefelPoint, TraceRecord, DESCENT_SLACK,
};

/// Tolerance applied to the decoder when reading a decimal model file.
pub const MODEL_FILE_TOL: f64 = 1e-6;
pub const MODEL_FORMAT_VERSION: u64 = 1;
const MIN_SCATTER: f64 = 1e-12;
const EIGENGAP_TOL: f64 = 1e-9;
const COMPLETION_SEED: u64 = 0x0c0f_fee5;

/// Column-stacked difference vectors, one column per pixel or patch.
#[derive(Debug, Clone)]
pub struct DifferenceDataset {
    samples: Matrix,
    mean: Option<Vec<f64>>,
    scatter: Matrix,
}

impl DifferenceDataset {
    /// Requires every entry in `[-1, 1]` and at least as many samples as
    /// features.
    pub fn new(samples: Matrix) -> Result<Self> {
        let (c, n) = samples.shape();
        if n < c {
            return Err(Error::DegenerateData(format!("{n} samples cannot estimate a {c}x{c} scatter")));
        }
        if let Some(v) = samples.data().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidParameter(format!("difference entries must lie in [-1, 1], found {v}")));
        }
        let scatter = samples.gram_rows();
        Ok(Self { samples, mean: None, scatter })
    }

    /// Subtracts the per-feature mean before the scatter is formed.
    pub fn with_centering(self, centered: bool) -> Self {
        if !centered {
            let scatter = self.samples.gram_rows();
            return Self { mean: None, scatter, ..self };
        }
        let mean = self.feature_mean();
        let centered = subtract_mean(&self.samples, &mean);
        Self { scatter: centered.gram_rows(), mean: Some(mean), samples: self.samples }
    }

    /// Feature dimension `c`.
    pub fn dim(&self) -> usize {
        self.samples.rows()
    }

    /// Number of samples `n`.
    pub fn len(&self) -> usize {
        self.samples.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.cols() == 0
    }

    /// The raw (uncentered) samples.
    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    /// The samples the model is fitted to: centered when centering is on.
    pub fn working_samples(&self) -> Matrix {
        match &self.mean {
            Some(m) => subtract_mean(&self.samples, m),
            None => self.samples.clone(),
        }
    }

    /// `A Aᵀ` of the working samples.
    pub fn scatter(&self) -> &Matrix {
        &self.scatter
    }

    /// Scatter of the columns in `idx`, scaled by `n / |idx|` so that it
    /// estimates the full-batch scatter.
    pub fn batch_scatter(&self, idx: &[usize]) -> Matrix {
        let c = self.dim();
        let mut s = Matrix::zeros(c, c);
        let mut col = vec![0.0; c];
        for &j in idx {
            for (i, v) in col.iter_mut().enumerate() {
                *v = self.samples[(i, j)] - self.mean.as_ref().map_or(0.0, |m| m[i]);
            }
            for a in 0..c {
                for b in a..c {
                    s[(a, b)] += col[a] * col[b];
                }
            }
        }
        let scale = self.len() as f64 / idx.len() as f64;
        Matrix::from_fn(c, c, |a, b| scale * if a <= b { s[(a, b)] } else { s[(b, a)] })
    }

    /// Centered covariance `(1/n) Σ (a − ā)(a − ā)ᵀ` of the raw samples.
    pub fn covariance(&self) -> Matrix {
        let mean = self.feature_mean();
        subtract_mean(&self.samples, &mean).gram_rows().scale(1.0 / self.len() as f64)
    }

    fn feature_mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim()).map(|i| self.samples.row(i).iter().sum::<f64>() / n).collect()
    }

    fn check_nondegenerate(&self) -> Result<f64> {
        let norm = psd_spectral_norm(&self.scatter)?;
        if norm <= MIN_SCATTER {
            return Err(Error::DegenerateData(format!("scatter norm {norm:e} is too small to train on")));
        }
        Ok(norm)
    }
}

fn subtract_mean(samples: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(samples.rows(), samples.cols(), |i, j| samples[(i, j)] - mean[i])
}

/// Encoder `W` (`c×k`, unconstrained) and orthonormal decoder `W̃` (`c×k`).
#[derive(Debug, Clone, PartialEq)]
pub struct OldModel {
    w_enc: Matrix,
    w_dec: StiefelPoint,
    mean: Option<Vec<f64>>,
}

impl OldModel {
    pub fn new(w_enc: Matrix, w_dec: StiefelPoint, mean: Option<Vec<f64>>) -> Result<Self> {
        let (c, k) = w_dec.matrix().shape();
        check_dims(c, k)?;
        w_dec.matrix().check_same_shape(&w_enc, "encoder and decoder")?;
        if !w_enc.all_finite() {
            return Err(Error::InvalidMatrix("encoder has non-finite entries".into()));
        }
        if let Some(m) = &mean {
            if m.len() != c || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("mean must have {c} finite entries")));
            }
        }
        Ok(Self { w_enc, w_dec, mean })
    }

    /// Seeded Gaussian decoder orthonormalized by QR, with the encoder
    /// starting as a copy of it.
    pub fn init(c: usize, k: usize, seed: u64) -> Result<Self> {
        check_dims(c, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_dec = StiefelPoint::random(c, k, &mut rng)?;
        Ok(Self { w_enc: w_dec.matrix().clone(), w_dec, mean: None })
    }

    pub fn c(&self) -> usize {
        self.w_dec.ambient_dim()
    }

    pub fn k(&self) -> usize {
        self.w_dec.frame_dim()
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn w_dec(&self) -> &StiefelPoint {
        &self.w_dec
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    /// Projector `W̃ W̃ᵀ` onto the principal subspace.
    pub fn projector(&self) -> Matrix {
        self.w_dec.matrix().gram_rows()
    }

    /// Encode then decode each column.
    pub fn reconstruct(&self, features: &Matrix) -> Result<Matrix> {
        self.w_dec.matrix().matmul(&self.w_enc.t_matmul(features)?)
    }

    /// Model file text; see [`ModelFile`].
    pub fn to_model_file(&self, optimizer: &str) -> String {
        ModelFile::from_parts(self.w_enc.clone(), self.w_dec.matrix().clone(), self.mean.clone(), optimizer).to_text()
    }

    /// Parses and validates a model file.
    pub fn from_model_file(text: &str) -> Result<Self> {
        ModelFile::parse(text)?.into_model()
    }
}

fn check_dims(c: usize, k: usize) -> Result<()> {
    if k == 0 || k >= c {
        return Err(Error::InvalidParameter(format!("latent dimension must satisfy 1 <= k < c, got k={k}, c={c}")));
    }
    Ok(())
}

/// `tr(M S Mᵀ)` with `M = I − W̃ Wᵀ`.
fn loss_from_scatter(s: &Matrix, w_enc: &Matrix, w_dec: &Matrix) -> Result<f64> {
    let c = s.rows();
    let mut m = w_dec.matmul(&w_enc.transpose())?.scale(-1.0);
    for i in 0..c {
        m[(i, i)] += 1.0;
    }
    let ms = m.matmul(s)?;
    let mut total = 0.0;
    for i in 0..c {
        total += crate::linalg::dot(ms.row(i), m.row(i));
    }
    Ok(total.max(0.0))
}

fn grad_dec_from_scatter(s: &Matrix, w_enc: &Matrix, w_dec: &Matrix) -> Result<Matrix> {
    let sw = s.matmul(w_enc)?;
    let wt_sw = w_enc.t_matmul(&sw)?;
    Ok(sw.add_scaled(&w_dec.matmul(&wt_sw)?, -1.0)?.scale(-2.0))
}

fn grad_enc_from_scatter(s: &Matrix, w_enc: &Matrix, w_dec: &Matrix) -> Result<Matrix> {
    let swd = s.matmul(w_dec)?;
    let sw = s.matmul(w_enc)?;
    let gram = w_dec.t_matmul(w_dec)?;
    Ok(swd.add_scaled(&sw.matmul(&gram)?, -1.0)?.scale(-2.0))
}

fn check_model_data(c: usize, data: &DifferenceDataset) -> Result<()> {
    if c != data.dim() {
        return Err(Error::ShapeMismatch(format!("model has c={c}, data has c={}", data.dim())));
    }
    Ok(())
}

/// `‖A − W̃ Wᵀ A‖²_F` summed over all (working) samples.
pub fn reconstruction_loss(model: &OldModel, data: &DifferenceDataset) -> Result<f64> {
    check_model_data(model.c(), data)?;
    loss_from_scatter(data.scatter(), model.w_enc(), model.w_dec().matrix())
}

/// Euclidean gradients `(∇_W f, ∇_W̃ f)`.
pub fn gradients(model: &OldModel, data: &DifferenceDataset) -> Result<(Matrix, Matrix)> {
    check_model_data(model.c(), data)?;
    let s = data.scatter();
    let wd = model.w_dec().matrix();
    Ok((grad_enc_from_scatter(s, model.w_enc(), wd)?, grad_dec_from_scatter(s, model.w_enc(), wd)?))
}

/// Decoder subproblem `W̃ ↦ ‖A − W̃ B‖²_F` with the codes `B = WᵀA` held
/// fixed, for use with [`crate::stiefel::optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCost {
    a: Matrix,
    b: Matrix,
}

impl DecoderCost {
    /// `a` is `c × n`, `b` is `k × n`.
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::ShapeMismatch(format!("A has {} columns, B has {}", a.cols(), b.cols())));
        }
        Ok(Self { a, b })
    }

    /// Codes `B = WᵀA` of an encoder applied to `a`.
    pub fn from_encoder(a: Matrix, w_enc: &Matrix) -> Result<Self> {
        let b = w_enc.t_matmul(&a)?;
        Self::new(a, b)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    fn residual(&self, x: &Matrix) -> Result<Matrix> {
        if x.shape() != (self.a.rows(), self.b.rows()) {
            return Err(Error::ShapeMismatch(format!(
                "decoder is {}x{}, expected {}x{}",
                x.rows(),
                x.cols(),
                self.a.rows(),
                self.b.rows()
            )));
        }
        self.a.checked_sub(&x.matmul(&self.b)?)
    }
}

impl ManifoldCost for DecoderCost {
    fn cost(&self, x: &Matrix) -> Result<f64> {
        Ok(self.residual(x)?.frobenius_norm().powi(2))
    }

    /// `−2 (A − W̃B) Bᵀ`.
    fn euclidean_gradient(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.residual(x)?.matmul(&self.b.transpose())?.scale(-2.0))
    }

    fn lipschitz(&self) -> Result<f64> {
        lipschitz_constant(&self.b)
    }
}

/// Supplies the scatter used at each iteration: the full scatter, or a
/// rescaled mini-batch estimate.
struct ScatterSource<'a> {
    data: &'a DifferenceDataset,
    batch: Option<usize>,
    rng: ChaCha8Rng,
}

impl<'a> ScatterSource<'a> {
    fn new(data: &'a DifferenceDataset, cfg: &OptimConfig) -> Self {
        let batch = cfg.batch_size.filter(|&b| b < data.len());
        Self { data, batch, rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15) }
    }

    fn next(&mut self) -> std::borrow::Cow<'a, Matrix> {
        match self.batch {
            None => std::borrow::Cow::Borrowed(self.data.scatter()),
            Some(b) => {
                let idx = sample(&mut self.rng, self.data.len(), b).into_vec();
                std::borrow::Cow::Owned(self.data.batch_scatter(&idx))
            }
        }
    }
}

fn inv_or_degenerate(l: f64, what: &str) -> Result<f64> {
    if !(l.is_finite() && l > MIN_SCATTER) {
        return Err(Error::DegenerateData(format!("{what} Lipschitz constant {l:e} is too small")));
    }
    Ok(1.0 / l)
}

/// Cooperative training: each iteration takes a Euclidean step on `W`
/// followed by a manifold step on `W̃` using the gradient at the updated `W`.
///
/// With [`StepSize::Auto`] the decoder step is `1/L`, `L = 2‖BBᵀ‖` with
/// `B = WᵀA`, and the encoder step is `1/(2‖S‖)`, the reciprocal Lipschitz
/// constant of `∇_W f` for an orthonormal decoder. Trace records carry the
/// decoder's Riemannian gradient norm and step size. Training stops when
/// both gradient norms are at most `cfg.grad_tol`.
pub fn train(data: &DifferenceDataset, k: usize, cfg: &OptimConfig) -> Result<(OldModel, DescentTrace)> {
    cfg.validate()?;
    check_dims(data.dim(), k)?;
    data.check_nondegenerate()?;
    let init = OldModel::init(data.dim(), k, cfg.seed)?;
    let mut w = init.w_enc;
    let mut wd = init.w_dec;
    let full = data.scatter();
    let mut source = ScatterSource::new(data, cfg);

    let mut loss = loss_from_scatter(full, &w, wd.matrix())?;
    let mut trace = DescentTrace::new(loss);
    for iter in 1..=cfg.max_iters {
        let s = source.next();
        let gw = grad_enc_from_scatter(&s, &w, wd.matrix())?;
        let rg0 = riemannian_gradient(&wd, &grad_dec_from_scatter(&s, &w, wd.matrix())?)?;
        if gw.frobenius_norm() <= cfg.grad_tol && rg0.norm() <= cfg.grad_tol {
            trace.records.push(TraceRecord {
                iter,
                loss,
                grad_norm: rg0.norm(),
                ortho_err: wd.orthogonality_error(),
                step: 0.0,
            });
            break;
        }

        let step_w = match cfg.step_size {
            StepSize::Auto => inv_or_degenerate(2.0 * psd_spectral_norm(&s)?, "encoder")?,
            StepSize::Fixed(v) => v,
        };
        w = euclidean_step(&w, &gw, step_w)?;

        let rg = riemannian_gradient(&wd, &grad_dec_from_scatter(&s, &w, wd.matrix())?)?;
        let step = match cfg.step_size {
            StepSize::Auto => 1.0 / lipschitz_from_gram(&w.t_matmul(&s.matmul(&w)?)?.symmetrize())?,
            StepSize::Fixed(v) => v,
        };
        wd = retract(&wd, &rg.direction().scale(-step))?;

        let next = loss_from_scatter(full, &w, wd.matrix())?;
        if cfg.strict_descent && next > loss + DESCENT_SLACK {
            return Err(Error::DescentViolation { iter, increase: next - loss });
        }
        loss = next;
        trace.records.push(TraceRecord { iter, loss, grad_norm: rg.norm(), ortho_err: wd.orthogonality_error(), step });
    }
    let model = OldModel::new(w, wd, data.mean().map(<[f64]>::to_vec))?;
    Ok((model, trace))
}

/// Top-`k` eigenvectors of the (working) scatter, in descending order.
pub fn compute_pca_subspace(data: &DifferenceDataset, k: usize) -> Result<Matrix> {
    check_dims(data.dim(), k)?;
    let eig = sym_eig(data.scatter())?;
    let top = eig.values[0].max(0.0);
    if top <= MIN_SCATTER {
        return Err(Error::DegenerateData("scatter is zero".into()));
    }
    let gap = eig.values[k - 1] - eig.values[k];
    if gap <= EIGENGAP_TOL * top {
        return Err(Error::DegenerateData(format!(
            "eigenvalues {} and {} coincide; the principal subspace is not unique",
            k,
            k + 1
        )));
    }
    Ok(eig.vectors.columns(0, k))
}

/// Splits each column into its projection on `span(W̃)` and the remainder.
pub fn decompose(model: &OldModel, features: &Matrix) -> Result<(Matrix, Matrix)> {
    check_features(model.c(), features)?;
    let wd = model.w_dec().matrix();
    let principal = wd.matmul(&wd.t_matmul(features)?)?;
    let residual = features.checked_sub(&principal)?;
    Ok((principal, residual))
}

fn check_features(c: usize, features: &Matrix) -> Result<()> {
    if features.rows() != c {
        return Err(Error::ShapeMismatch(format!("features have {} rows, model expects {c}", features.rows())));
    }
    Ok(())
}

/// Orthonormal `c×c` basis whose first `k` columns span `basis`.
pub fn complete_basis(basis: &Matrix) -> Result<Matrix> {
    let q = qr_orthonormalize(basis)?;
    let (c, k) = q.shape();
    if c == k {
        return Ok(q);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(COMPLETION_SEED);
    for _ in 0..16 {
        let mut cols: Vec<Vec<f64>> = (0..k).map(|j| q.column(j)).collect();
        cols.extend((k..c).map(|_| (0..c).map(|_| StandardNormal.sample(&mut rng)).collect()));
        match qr_orthonormalize(&Matrix::from_columns(&cols)?) {
            Ok(full) => return Ok(full),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NumericFailure("could not complete the orthonormal basis".into()))
}

/// Variance shares of the data expressed in `[span(basis) | complement]`,
/// where the `k` columns of `basis` are the luminance-related directions.
pub fn subspace_variance_report(method: &str, basis: &Matrix, data: &DifferenceDataset) -> Result<VarianceReport> {
    if basis.rows() != data.dim() {
        return Err(Error::ShapeMismatch(format!("basis has {} rows, data has c={}", basis.rows(), data.dim())));
    }
    let k = basis.cols();
    let q = complete_basis(basis)?;
    let cov = data.covariance();
    let cq = cov.matmul(&q)?;
    let variances: Vec<f64> =
        (0..q.cols()).map(|j| (0..q.rows()).map(|i| q[(i, j)] * cq[(i, j)]).sum::<f64>().max(0.0)).collect();
    let names = (0..q.cols())
        .map(|j| if j < k { format!("principal_{}", j + 1) } else { format!("residual_{}", j - k + 1) })
        .collect();
    VarianceReport::from_variances(method, names, &variances, (0..k).collect())
}

/// Variance shares in the decoder basis completed to `c` dimensions.
pub fn variance_report(model: &OldModel, data: &DifferenceDataset) -> Result<VarianceReport> {
    check_model_data(model.c(), data)?;
    subspace_variance_report("old", model.w_dec().matrix(), data)
}

/// Which component [`apply_coefficient`] scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbMode {
    Principal,
    Residual,
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "principal" => Ok(PerturbMode::Principal),
            "residual" => Ok(PerturbMode::Residual),
            _ => Err(Error::InvalidParameter(format!("mode must be 'principal' or 'residual', got {s:?}"))),
        }
    }
}

/// `α·principal + residual` (principal mode) or `principal + α·residual`.
pub fn apply_coefficient(model: &OldModel, features: &Matrix, alpha: f64, mode: PerturbMode) -> Result<Matrix> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    check_features(model.c(), features)?;
    if alpha == 1.0 {
        return Ok(features.clone());
    }
    let (principal, residual) = decompose(model, features)?;
    match mode {
        PerturbMode::Principal => residual.add_scaled(&principal, alpha),
        PerturbMode::Residual => principal.add_scaled(&residual, alpha),
    }
}

/// Autoencoder trained with an additive orthogonality penalty instead of the
/// manifold constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyModel {
    pub w_enc: Matrix,
    pub w_dec: Matrix,
    pub mu: f64,
    pub mean: Option<Vec<f64>>,
}

impl PenaltyModel {
    /// `‖W̃ᵀW̃ − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        self.w_dec.orthogonality_error()
    }

    pub fn reconstruction_loss(&self, data: &DifferenceDataset) -> Result<f64> {
        check_model_data(self.w_dec.rows(), data)?;
        loss_from_scatter(data.scatter(), &self.w_enc, &self.w_dec)
    }

    pub fn to_model_file(&self) -> String {
        ModelFile::from_parts(self.w_enc.clone(), self.w_dec.clone(), self.mean.clone(), "penalty").to_text()
    }
}

fn penalty_objective(s: &Matrix, w: &Matrix, wd: &Matrix, mu: f64) -> Result<f64> {
    let e = wd.orthogonality_error();
    Ok(loss_from_scatter(s, w, wd)? + mu * e * e)
}

/// Minimizes `f(W, W̃) + μ‖W̃ᵀW̃ − I‖²_F` with Euclidean steps on both
/// factors, alternating as in [`train`] and from the same initialization.
///
/// Trace losses are the penalized objective. With [`StepSize::Auto`] the
/// steps are `1/(2‖S‖‖W̃‖²)` for `W` and `1/(2‖WᵀSW‖ + 12μ‖W̃‖²)` for `W̃`.
pub fn train_penalty_baseline(
    data: &DifferenceDataset,
    k: usize,
    mu: f64,
    cfg: &OptimConfig,
) -> Result<(PenaltyModel, DescentTrace)> {
    cfg.validate()?;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("penalty weight must be finite and >= 0, got {mu}")));
    }
    check_dims(data.dim(), k)?;
    data.check_nondegenerate()?;
    let init = OldModel::init(data.dim(), k, cfg.seed)?;
    let mut w = init.w_enc;
    let mut wd = init.w_dec.into_matrix();
    let full = data.scatter();
    let mut source = ScatterSource::new(data, cfg);

    let mut trace = DescentTrace::new(penalty_objective(full, &w, &wd, mu)?);
    let penalty_grad = |wd: &Matrix| -> Result<Matrix> {
        let mut g = wd.t_matmul(wd)?;
        for i in 0..g.rows() {
            g[(i, i)] -= 1.0;
        }
        Ok(wd.matmul(&g)?.scale(4.0 * mu))
    };
    for iter in 1..=cfg.max_iters {
        let s = source.next();
        let gw = grad_enc_from_scatter(&s, &w, &wd)?;
        let gd0 = grad_dec_from_scatter(&s, &w, &wd)?.checked_add(&penalty_grad(&wd)?)?;
        if gw.frobenius_norm() <= cfg.grad_tol && gd0.frobenius_norm() <= cfg.grad_tol {
            trace.records.push(TraceRecord {
                iter,
                loss: trace.final_loss(),
                grad_norm: gd0.frobenius_norm(),
                ortho_err: wd.orthogonality_error(),
                step: 0.0,
            });
            break;
        }
        let dec_norm2 = psd_spectral_norm(&wd.t_matmul(&wd)?.symmetrize())?;
        let step_w = match cfg.step_size {
            StepSize::Auto => inv_or_degenerate(2.0 * psd_spectral_norm(&s)? * dec_norm2, "encoder")?,
            StepSize::Fixed(v) => v,
        };
        w = euclidean_step(&w, &gw, step_w)?;

        let gd = grad_dec_from_scatter(&s, &w, &wd)?.checked_add(&penalty_grad(&wd)?)?;
        let step = match cfg.step_size {
            StepSize::Auto => {
                let l = 2.0 * psd_spectral_norm(&w.t_matmul(&s.matmul(&w)?)?.symmetrize())? + 12.0 * mu * dec_norm2;
                inv_or_degenerate(l, "decoder")?
            }
            StepSize::Fixed(v) => v,
        };
        wd = euclidean_step(&wd, &gd, step)?;
        if !wd.all_finite() || !w.all_finite() {
            return Err(Error::NumericFailure(format!("penalty baseline diverged at iteration {iter}")));
        }
        let loss = penalty_objective(full, &w, &wd, mu)?;
        if cfg.strict_descent && loss > trace.final_loss() + DESCENT_SLACK {
            return Err(Error::DescentViolation { iter, increase: loss - trace.final_loss() });
        }
        trace.records.push(TraceRecord {
            iter,
            loss,
            grad_norm: gd.frobenius_norm(),
            ortho_err: wd.orthogonality_error(),
            step,
        });
    }
    Ok((PenaltyModel { w_enc: w, w_dec: wd, mu, mean: data.mean().map(<[f64]>::to_vec) }, trace))
}

/// `W̃ᵀW̃` and `‖W̃ᵀW̃ − I‖_F` for any decoder matrix.
pub fn orthogonality_grid(w_dec: &Matrix) -> (Matrix, f64) {
    let grid = w_dec.t_matmul(w_dec).expect("same matrix").symmetrize();
    (grid, w_dec.orthogonality_error())
}

/// Decoder Gram matrix and its distance from the identity.
pub fn orthogonality_report(model: &OldModel) -> (Matrix, f64) {
    orthogonality_grid(model.w_dec().matrix())
}

/// On-disk model document.
///
/// A JSON object with keys `format_version`, `c`, `k`, `w_enc` and `w_dec`
/// (row-major float lists), `centered`, `mean` (list, present when centered),
/// `optimizer` and `ortho_error`. Floats are written with 17 significant
/// digits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub w_enc: Matrix,
    pub w_dec: Matrix,
    pub mean: Option<Vec<f64>>,
    pub optimizer: String,
    pub ortho_error: f64,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| fmt_float(v)).collect();
    format!("[{}]", items.join(", "))
}

impl ModelFile {
    pub fn from_parts(w_enc: Matrix, w_dec: Matrix, mean: Option<Vec<f64>>, optimizer: &str) -> Self {
        let ortho_error = w_dec.orthogonality_error();
        Self { w_enc, w_dec, mean, optimizer: optimizer.to_string(), ortho_error }
    }

    pub fn c(&self) -> usize {
        self.w_dec.rows()
    }

    pub fn k(&self) -> usize {
        self.w_dec.cols()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"format_version\": {MODEL_FORMAT_VERSION},\n"));
        out.push_str(&format!("  \"c\": {},\n  \"k\": {},\n", self.c(), self.k()));
        out.push_str(&format!("  \"w_enc\": {},\n", fmt_list(self.w_enc.data())));
        out.push_str(&format!("  \"w_dec\": {},\n", fmt_list(self.w_dec.data())));
        out.push_str(&format!("  \"centered\": {},\n", self.mean.is_some()));
        if let Some(m) = &self.mean {
            out.push_str(&format!("  \"mean\": {},\n", fmt_list(m)));
        }
        out.push_str(&format!("  \"optimizer\": {},\n", Value::from(self.optimizer.as_str())));
        out.push_str(&format!("  \"ortho_error\": {}\n}}\n", fmt_float(self.ortho_error)));
        out
    }

    /// Structural parse; does not check orthonormality.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidModel(msg.to_string());
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let obj = doc.as_object().ok_or_else(|| bad("expected a JSON object"))?;
        let uint = |key: &str| -> Result<usize> {
            obj.get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::InvalidModel(format!("missing or invalid '{key}'")))
        };
        let floats = |v: &Value, key: &str| -> Result<Vec<f64>> {
            v.as_array()
                .ok_or_else(|| Error::InvalidModel(format!("'{key}' must be a list")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::InvalidModel(format!("'{key}' holds a non-number"))))
                .collect()
        };
        if obj.get("format_version").and_then(Value::as_u64) != Some(MODEL_FORMAT_VERSION) {
            return Err(bad("unsupported or missing format_version"));
        }
        let (c, k) = (uint("c")?, uint("k")?);
        if c == 0 || k == 0 {
            return Err(bad("dimensions must be positive"));
        }
        let matrix = |key: &str| -> Result<Matrix> {
            let v = obj.get(key).ok_or_else(|| Error::InvalidModel(format!("missing '{key}'")))?;
            let data = floats(v, key)?;
            if data.len() != c * k {
                return Err(Error::InvalidModel(format!("'{key}' has {} entries, expected {}", data.len(), c * k)));
            }
            Matrix::new(c, k, data).map_err(|e| Error::InvalidModel(e.to_string()))
        };
        let w_enc = matrix("w_enc")?;
        let w_dec = matrix("w_dec")?;
        let centered = obj.get("centered").and_then(Value::as_bool).ok_or_else(|| bad("missing 'centered'"))?;
        let mean = match (centered, obj.get("mean")) {
            (true, Some(v)) => {
                let m = floats(v, "mean")?;
                if m.len() != c {
                    return Err(bad("'mean' length does not match c"));
                }
                Some(m)
            }
            (true, None) => return Err(bad("centered model without 'mean'")),
            (false, None) | (false, Some(Value::Null)) => None,
            (false, Some(_)) => return Err(bad("'mean' given for an uncentered model")),
        };
        let optimizer = obj.get("optimizer").and_then(Value::as_str).unwrap_or("geometric").to_string();
        let ortho_error = w_dec.orthogonality_error();
        Ok(Self { w_enc, w_dec, mean, optimizer, ortho_error })
    }

    /// Validates the decoder at [`MODEL_FILE_TOL`] and builds the model.
    pub fn into_model(self) -> Result<OldModel> {
        let w_dec =
            StiefelPoint::with_tolerance(self.w_dec, MODEL_FILE_TOL).map_err(|e| Error::InvalidModel(e.to_string()))?;
        OldModel::new(self.w_enc, w_dec, self.mean).map_err(|e| Error::InvalidModel(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_data(c: usize, n: usize, seed: u64) -> DifferenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DifferenceDataset::new(Matrix::from_fn(c, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn brute_force_loss(model: &OldModel, a: &Matrix) -> f64 {
        let (c, n) = a.shape();
        let (w, wd) = (model.w_enc(), model.w_dec().matrix());
        let mut total = 0.0;
        for j in 0..n {
            let z: Vec<f64> = (0..model.k()).map(|l| (0..c).map(|i| w[(i, l)] * a[(i, j)]).sum()).collect();
            for i in 0..c {
                let rec: f64 = (0..model.k()).map(|l| wd[(i, l)] * z[l]).sum();
                total += (a[(i, j)] - rec).powi(2);
            }
        }
        total
    }

    fn projector_distance(a: &Matrix, b: &Matrix) -> f64 {
        (&a.gram_rows() - &b.gram_rows()).frobenius_norm()
    }

    #[test]
    fn decoder_descent_keeps_the_frame_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        let a = Matrix::from_fn(6, 40, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(6, 3, |_, _| StandardNormal.sample(&mut rng));
        let cost = DecoderCost::from_encoder(a, &w).unwrap();
        let x0 = StiefelPoint::random(6, 3, &mut rng).unwrap();
        let cfg = OptimConfig { max_iters: 1000, grad_tol: f64::MIN_POSITIVE, ..OptimConfig::default() };
        let (x, trace) = crate::stiefel::optimize(&cost, &x0, &cfg).unwrap();
        assert_eq!(trace.len(), 1000);
        assert!(x.orthogonality_error() < 1e-13);
    }

    #[test]
    fn decoder_cost_agrees_with_the_scatter_form() {
        let data = random_data(5, 40, 8);
        let model = OldModel::init(5, 2, 3).unwrap();
        let cost = DecoderCost::from_encoder(data.samples().clone(), model.w_enc()).unwrap();
        let wd = model.w_dec().matrix();
        let loss = reconstruction_loss(&model, &data).unwrap();
        assert_abs_diff_eq!(cost.cost(wd).unwrap(), loss, epsilon = 1e-12 * loss);
        let (_, g) = gradients(&model, &data).unwrap();
        assert!((&cost.euclidean_gradient(wd).unwrap() - &g).max_abs() < 1e-12);
        assert!(cost.cost(&Matrix::zeros(2, 2)).is_err());
        assert!(DecoderCost::new(Matrix::zeros(5, 3), Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(DifferenceDataset::new(Matrix::zeros(3, 2)).is_err());
        assert!(DifferenceDataset::new(Matrix::from_fn(2, 3, |_, _| 1.5)).is_err());
        let d = DifferenceDataset::new(Matrix::from_fn(2, 4, |i, j| (i + j) as f64 / 10.0)).unwrap();
        assert!(!d.is_centered());
        let c = d.clone().with_centering(true);
        assert_abs_diff_eq!(c.mean().unwrap()[0], 0.15, epsilon = 1e-15);
        assert!(c.working_samples().row(0).iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn batch_scatter_of_everything_is_the_full_scatter() {
        let d = random_data(4, 30, 5).with_centering(true);
        let all: Vec<usize> = (0..30).collect();
        assert!((&d.batch_scatter(&all) - d.scatter()).max_abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let model = OldModel::init(3, 1, 1).unwrap();
        let zero = DifferenceDataset::new(Matrix::zeros(3, 5)).unwrap();
        assert_eq!(reconstruction_loss(&model, &zero).unwrap(), 0.0);

        let v = model.w_dec().matrix().column(0);
        let in_span = Matrix::from_fn(3, 4, |i, j| v[i] * (j as f64 - 1.5) / 2.0);
        let d = DifferenceDataset::new(in_span).unwrap();
        let l = reconstruction_loss(&model, &d).unwrap();
        assert!(l < 1e-14 * d.scatter().trace(), "{l}");

        let d = random_data(3, 5, 9);
        let expect = brute_force_loss(&model, d.samples());
        assert_abs_diff_eq!(reconstruction_loss(&model, &d).unwrap(), expect, epsilon = 1e-12 * expect.max(1.0));

        assert!(matches!(reconstruction_loss(&model, &random_data(4, 5, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn gradient_examples() {
        let model = OldModel::init(3, 1, 1).unwrap();
        let v = model.w_dec().matrix().column(0);
        let d = DifferenceDataset::new(Matrix::from_fn(3, 4, |i, j| v[i] * (j as f64 + 1.0) / 5.0)).unwrap();
        let (gw, gd) = gradients(&model, &d).unwrap();
        assert!(gw.max_abs() < 1e-14 && gd.max_abs() < 1e-14);

        let e2 = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let saddle = OldModel::new(e2.clone(), StiefelPoint::new(e2).unwrap(), None).unwrap();
        let a = DifferenceDataset::new(Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let (_, gd) = gradients(&saddle, &a).unwrap();
        assert!(gd.is_zero());
        assert_eq!(reconstruction_loss(&saddle, &a).unwrap(), 1.0);
    }

    #[test]
    fn training_recovers_rank_one_direction() {
        let v = [0.6, -0.8, 0.0];
        let d = DifferenceDataset::new(Matrix::from_fn(3, 6, |i, _| 0.5 * v[i])).unwrap();
        let (model, trace) = train(&d, 1, &OptimConfig::default()).unwrap();
        let vm = Matrix::new(3, 1, v.to_vec()).unwrap();
        assert!(projector_distance(model.w_dec().matrix(), &vm) < 1e-6);
        assert_eq!(trace.loss_increases(DESCENT_SLACK), 0);
    }

    #[test]
    fn gray_shift_gives_gray_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shifts: Vec<f64> = (0..200).map(|_| rng.random_range(0.05..0.3)).collect();
        let d = DifferenceDataset::new(Matrix::from_fn(3, 200, |_, j| shifts[j])).unwrap();
        let (model, _) = train(&d, 1, &OptimConfig::default()).unwrap();
        let g = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            assert_abs_diff_eq!(model.w_dec().matrix()[(i, 0)].abs(), g, epsilon = 1e-6);
        }
    }

    #[test]
    fn codimension_one_loss_is_smallest_eigenvalue() {
        let d = random_data(4, 40, 11);
        let (_, trace) = train(&d, 3, &OptimConfig::default()).unwrap();
        let smallest = *sym_eig(d.scatter()).unwrap().values.last().unwrap();
        assert_abs_diff_eq!(trace.final_loss(), smallest, epsilon = 1e-8 * smallest.max(1.0));
    }

    #[test]
    fn training_rejects_degenerate_input() {
        let zero = DifferenceDataset::new(Matrix::zeros(3, 5)).unwrap();
        assert!(matches!(train(&zero, 1, &OptimConfig::default()), Err(Error::DegenerateData(_))));
        assert!(train(&random_data(3, 5, 1), 3, &OptimConfig::default()).is_err());
    }

    #[test]
    fn pca_examples() {
        let v = [0.0, 0.6, 0.8];
        let d = DifferenceDataset::new(Matrix::from_fn(3, 5, |i, j| v[i] * j as f64 / 5.0)).unwrap();
        let p = compute_pca_subspace(&d, 1).unwrap();
        assert!(projector_distance(&p, &Matrix::new(3, 1, v.to_vec()).unwrap()) < 1e-12);

        let scales = [0.2, 0.9, 0.5];
        let a = Matrix::from_fn(3, 16, |i, j| scales[i] * if (j >> i) & 1 == 0 { 1.0 } else { -1.0 });
        let p = compute_pca_subspace(&DifferenceDataset::new(a).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(p[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(2, 1)].abs(), 1.0, epsilon = 1e-12);

        let iso = DifferenceDataset::new(Matrix::from_fn(2, 2, |i, j| if i == j { 0.5 } else { 0.0 })).unwrap();
        assert!(matches!(compute_pca_subspace(&iso, 1), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn decompose_examples() {
        let model = OldModel::init(3, 1, 3).unwrap();
        let v = model.w_dec().matrix().clone();
        let (_, r) = decompose(&model, &v.scale(0.3)).unwrap();
        assert!(r.max_abs() < 1e-15);
        let q = complete_basis(&v).unwrap();
        let perp = q.columns(1, 3);
        let (p, _) = decompose(&model, &perp).unwrap();
        assert!(p.max_abs() < 1e-15);
        assert!(decompose(&model, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn variance_report_examples() {
        let model = OldModel::init(3, 1, 3).unwrap();
        let v = model.w_dec().matrix().column(0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Matrix::from_fn(3, 50, |_, _| rng.random_range(-0.9..0.9));
        let in_span = Matrix::from_fn(3, 50, |i, j| v[i] * a[(0, j)]);
        let r = variance_report(&model, &DifferenceDataset::new(in_span).unwrap()).unwrap();
        assert_abs_diff_eq!(r.principal_share, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.residual_share, 0.0, epsilon = 1e-12);
        r.check().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let iso = Matrix::from_fn(3, 100_000, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (0.2 * g).clamp(-1.0, 1.0)
        });
        let r = variance_report(&model, &DifferenceDataset::new(iso).unwrap()).unwrap();
        for s in &r.variance_shares {
            assert!((s - 1.0 / 3.0).abs() < 0.05, "{s}");
        }
    }

    #[test]
    fn apply_coefficient_examples() {
        let model = OldModel::init(3, 1, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = Matrix::from_fn(3, 7, |_, _| rng.random_range(0.0..1.0));
        assert_eq!(apply_coefficient(&model, &f, 1.0, PerturbMode::Principal).unwrap(), f);
        let (p, r) = decompose(&model, &f).unwrap();
        assert!((&apply_coefficient(&model, &f, 0.0, PerturbMode::Principal).unwrap() - &r).max_abs() < 1e-15);
        assert!((&apply_coefficient(&model, &f, 0.0, PerturbMode::Residual).unwrap() - &p).max_abs() < 1e-15);
        assert!(apply_coefficient(&model, &f, f64::NAN, PerturbMode::Principal).is_err());

        let wd = model.w_dec().matrix();
        let mean_coeff = |m: &Matrix| -> f64 {
            let z = wd.t_matmul(m).unwrap();
            z.data().iter().map(|v| v.abs()).sum::<f64>() / z.cols() as f64
        };
        let base = mean_coeff(&f);
        for alpha in [0.01, 0.1, 10.0, 100.0] {
            let out = apply_coefficient(&model, &f, alpha, PerturbMode::Principal).unwrap();
            assert_abs_diff_eq!(mean_coeff(&out), alpha * base, epsilon = 1e-12 * alpha.max(1.0));
        }
        assert_eq!("Residual".parse::<PerturbMode>().unwrap(), PerturbMode::Residual);
        assert!("both".parse::<PerturbMode>().is_err());
    }

    #[test]
    fn penalty_baseline_examples() {
        let d = random_data(3, 40, 2);
        let cfg = OptimConfig { max_iters: 300, ..OptimConfig::default() };
        let (free, _) = train_penalty_baseline(&d, 1, 0.0, &cfg).unwrap();
        let (tight, _) = train_penalty_baseline(&d, 1, 1e6, &cfg).unwrap();
        assert!(tight.orthogonality_error() < 1e-3);
        assert!(free.w_dec.all_finite());
        assert!(train_penalty_baseline(&d, 1, -1.0, &cfg).is_err());
        let zero = DifferenceDataset::new(Matrix::zeros(3, 5)).unwrap();
        assert!(matches!(train_penalty_baseline(&zero, 1, 10.0, &cfg), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn orthogonality_report_examples() {
        let model = OldModel::init(5, 2, 7).unwrap();
        let (grid, err) = orthogonality_report(&model);
        assert!(err <= 1e-12);
        assert_eq!(grid, grid.transpose());
        let (trained, _) = train(&random_data(5, 30, 3), 2, &OptimConfig::default()).unwrap();
        assert!(orthogonality_report(&trained).1 <= 1e-9);
    }

    #[test]
    fn model_file_round_trip() {
        let (model, _) = train(&random_data(4, 30, 3).with_centering(true), 2, &OptimConfig::default()).unwrap();
        let text = model.to_model_file("geometric");
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["format_version"], 1);
        assert_eq!(doc["centered"], true);
        let back = OldModel::from_model_file(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn model_file_rejections() {
        let bad = r#"{"format_version": 1, "c": 2, "k": 1, "w_enc": [1, 1], "w_dec": [1, 1], "centered": false}"#;
        assert!(matches!(OldModel::from_model_file(bad), Err(Error::InvalidModel(_))));
        let short = r#"{"format_version": 1, "c": 2, "k": 1, "w_enc": [1], "w_dec": [1, 0], "centered": false}"#;
        assert!(OldModel::from_model_file(short).is_err());
        let ok = r#"{"format_version": 1, "c": 2, "k": 1, "w_enc": [1, 0], "w_dec": [1, 0], "centered": false}"#;
        assert!(OldModel::from_model_file(ok).is_ok());
        assert!(OldModel::from_model_file("not json").is_err());
        assert!(OldModel::from_model_file(&ok.replace("\"format_version\": 1", "\"format_version\": 2")).is_err());
    }
}
