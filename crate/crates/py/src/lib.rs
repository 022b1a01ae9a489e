//! Python bindings. Matrices cross the boundary as lists of rows.

use lca_core::colorspace::{baseline_variance_report, Method};
use lca_core::imaging::{self, load_image, save_image, SsimMode};
use lca_core::linalg;
use lca_core::old::{self, train_penalty_baseline};
use lca_core::stiefel::{self, StepSize};
use lca_core::{
    DescentTrace, DifferenceDataset, DifferenceImage, Error, ImageBuffer, Matrix, OptimConfig, PerturbMode,
    StiefelPoint, VarianceReport,
};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;

type Rows = Vec<Vec<f64>>;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        e if e.is_degenerate() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn point(rows: &Rows) -> PyResult<StiefelPoint> {
    StiefelPoint::new(matrix(rows)?).map_err(err)
}

fn config(max_iters: usize, step: Option<f64>, grad_tol: f64, seed: u64, batch_size: Option<usize>) -> OptimConfig {
    OptimConfig {
        step_size: step.map_or(StepSize::Auto, StepSize::Fixed),
        max_iters,
        grad_tol,
        seed,
        batch_size,
        strict_descent: false,
    }
}

fn losses(trace: &DescentTrace) -> Vec<f64> {
    std::iter::once(trace.initial_loss).chain(trace.records.iter().map(|r| r.loss)).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &VarianceReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    let components: Vec<(String, f64)> =
        r.component_names.iter().cloned().zip(r.variance_shares.iter().copied()).collect();
    d.set_item("components", components)?;
    d.set_item("principal_indices", r.principal_indices.clone())?;
    d.set_item("principal_share", r.principal_share)?;
    d.set_item("residual_share", r.residual_share)?;
    Ok(d)
}

/// Image with values in `[0, 1]`, stored row-major and interleaved.
#[pyclass(name = "Image", module = "lca", frozen)]
struct PyImage {
    inner: ImageBuffer,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: ImageBuffer::new(width, height, channels, data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_image(&path).map_err(err)? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        save_image(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn mean_luma(&self) -> f64 {
        self.inner.mean_luma()
    }

    fn quantized(&self) -> Self {
        Self { inner: self.inner.quantized() }
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

/// Linear autoencoder with an orthonormal decoder.
#[pyclass(name = "OldModel", module = "lca", frozen)]
struct PyOldModel {
    inner: old::OldModel,
}

impl PyOldModel {
    fn dataset(&self, samples: &Rows) -> PyResult<DifferenceDataset> {
        Ok(DifferenceDataset::new(matrix(samples)?).map_err(err)?.with_centering(self.inner.is_centered()))
    }
}

#[pymethods]
impl PyOldModel {
    /// Trains on the columns of `samples` and returns `(model, losses)`,
    /// where `losses` starts with the initial loss.
    #[staticmethod]
    #[pyo3(signature = (samples, k, *, center=false, max_iters=5000, step=None, grad_tol=1e-8, seed=42, batch_size=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        samples: Rows,
        k: usize,
        center: bool,
        max_iters: usize,
        step: Option<f64>,
        grad_tol: f64,
        seed: u64,
        batch_size: Option<usize>,
    ) -> PyResult<(Self, Vec<f64>)> {
        let data = DifferenceDataset::new(matrix(&samples)?).map_err(err)?.with_centering(center);
        let cfg = config(max_iters, step, grad_tol, seed, batch_size);
        let (model, trace) = old::train(&data, k, &cfg).map_err(err)?;
        Ok((Self { inner: model }, losses(&trace)))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: old::OldModel::from_model_file(text).map_err(err)? })
    }

    #[pyo3(signature = (optimizer="geometric"))]
    fn to_json(&self, optimizer: &str) -> String {
        self.inner.to_model_file(optimizer)
    }

    #[getter]
    fn c(&self) -> usize {
        self.inner.c()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn w_enc(&self) -> Rows {
        rows(self.inner.w_enc())
    }

    #[getter]
    fn w_dec(&self) -> Rows {
        rows(self.inner.w_dec().matrix())
    }

    #[getter]
    fn mean(&self) -> Option<Vec<f64>> {
        self.inner.mean().map(<[f64]>::to_vec)
    }

    #[getter]
    fn orthogonality_error(&self) -> f64 {
        self.inner.w_dec().orthogonality_error()
    }

    fn projector(&self) -> Rows {
        rows(&self.inner.projector())
    }

    fn reconstruct(&self, features: Rows) -> PyResult<Rows> {
        Ok(rows(&self.inner.reconstruct(&matrix(&features)?).map_err(err)?))
    }

    /// `(principal, residual)` parts of each feature column.
    fn decompose(&self, features: Rows) -> PyResult<(Rows, Rows)> {
        let (p, r) = old::decompose(&self.inner, &matrix(&features)?).map_err(err)?;
        Ok((rows(&p), rows(&r)))
    }

    /// Scales the principal or residual part of each column by `alpha`.
    #[pyo3(signature = (features, alpha, mode="principal"))]
    fn apply(&self, features: Rows, alpha: f64, mode: &str) -> PyResult<Rows> {
        let mode: PerturbMode = mode.parse().map_err(err)?;
        Ok(rows(&old::apply_coefficient(&self.inner, &matrix(&features)?, alpha, mode).map_err(err)?))
    }

    fn reconstruction_loss(&self, samples: Rows) -> PyResult<f64> {
        old::reconstruction_loss(&self.inner, &self.dataset(&samples)?).map_err(err)
    }

    /// Euclidean gradients `(d/dW, d/dW̃)` on `samples`.
    fn gradients(&self, samples: Rows) -> PyResult<(Rows, Rows)> {
        let (gw, gd) = old::gradients(&self.inner, &self.dataset(&samples)?).map_err(err)?;
        Ok((rows(&gw), rows(&gd)))
    }

    fn variance_report<'py>(&self, py: Python<'py>, samples: Rows) -> PyResult<Bound<'py, PyDict>> {
        report_dict(py, &old::variance_report(&self.inner, &self.dataset(&samples)?).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("OldModel(c={}, k={}, centered={})", self.inner.c(), self.inner.k(), self.inner.is_centered())
    }
}

/// Orthonormal basis of the column span.
#[pyfunction]
fn qr_orthonormalize(m: Rows) -> PyResult<Rows> {
    Ok(rows(&linalg::qr_orthonormalize(&matrix(&m)?).map_err(err)?))
}

/// `‖MᵀM − I‖_F`.
#[pyfunction]
fn orthogonality_error(m: Rows) -> PyResult<f64> {
    Ok(matrix(&m)?.orthogonality_error())
}

/// Random `c × k` matrix with orthonormal columns.
#[pyfunction]
fn random_stiefel(c: usize, k: usize, seed: u64) -> PyResult<Rows> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(rows(StiefelPoint::random(c, k, &mut rng).map_err(err)?.matrix()))
}

/// Projection of `egrad` onto the tangent space at `x`.
#[pyfunction]
fn riemannian_gradient(x: Rows, egrad: Rows) -> PyResult<Rows> {
    let g = stiefel::riemannian_gradient(&point(&x)?, &matrix(&egrad)?).map_err(err)?;
    Ok(rows(g.direction()))
}

/// `(X + Ξ)(I + ΞᵀΞ)^{-1/2}` for tangent `Ξ`.
#[pyfunction]
fn retract(x: Rows, xi: Rows) -> PyResult<Rows> {
    Ok(rows(stiefel::retract(&point(&x)?, &matrix(&xi)?).map_err(err)?.matrix()))
}

/// Penalty-method baseline; returns `(w_enc, w_dec, losses)` where the
/// losses include the penalty term.
#[pyfunction]
#[pyo3(signature = (samples, k, mu=10.0, *, max_iters=5000, step=None, grad_tol=1e-8, seed=42))]
fn train_penalty(
    samples: Rows,
    k: usize,
    mu: f64,
    max_iters: usize,
    step: Option<f64>,
    grad_tol: f64,
    seed: u64,
) -> PyResult<(Rows, Rows, Vec<f64>)> {
    let data = DifferenceDataset::new(matrix(&samples)?).map_err(err)?;
    let cfg = config(max_iters, step, grad_tol, seed, None);
    let (model, trace) = train_penalty_baseline(&data, k, mu, &cfg).map_err(err)?;
    Ok((rows(&model.w_enc), rows(&model.w_dec), losses(&trace)))
}

/// Samples of `gt − input`, one column per pixel or patch.
#[pyfunction]
#[pyo3(signature = (gt, input, patch=1))]
fn difference_samples(gt: &PyImage, input: &PyImage, patch: usize) -> PyResult<Rows> {
    Ok(rows(imaging::difference(&gt.inner, &input.inner, patch).map_err(err)?.samples()))
}

#[pyfunction]
#[pyo3(signature = (img, patch=1))]
fn image_features(img: &PyImage, patch: usize) -> PyResult<Rows> {
    Ok(rows(&imaging::image_features(&img.inner, patch).map_err(err)?))
}

/// Writes feature columns back into a copy of `template`.
#[pyfunction]
#[pyo3(signature = (features, template, patch=1))]
fn features_to_image(features: Rows, template: &PyImage, patch: usize) -> PyResult<PyImage> {
    let inner = imaging::features_to_image(&matrix(&features)?, &template.inner, patch).map_err(err)?;
    Ok(PyImage { inner })
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    imaging::psnr(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, per_channel=false))]
fn ssim(a: &PyImage, b: &PyImage, per_channel: bool) -> PyResult<f64> {
    let mode = if per_channel { SsimMode::PerChannel } else { SsimMode::Luma };
    imaging::ssim_with(&a.inner, &b.inner, mode).map_err(err)
}

#[pyfunction]
fn histogram_match_score(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    imaging::histogram_match_score(&a.inner, &b.inner).map_err(err)
}

/// Variance shares of a colour-space decomposition of `gt − input`.
#[pyfunction]
fn baseline_report<'py>(py: Python<'py>, method: &str, gt: &PyImage, input: &PyImage) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(err)?;
    let diff = DifferenceImage::new(&gt.inner, &input.inner).map_err(err)?;
    report_dict(py, &baseline_variance_report(method, &diff).map_err(err)?)
}

/// Synthetic `(input, gt)` exposure pair.
#[pyfunction]
#[pyo3(signature = (width, height, gain=1.4, gamma=1.2))]
fn synth_pair(width: usize, height: usize, gain: f64, gamma: f64) -> PyResult<(PyImage, PyImage)> {
    let (input, gt) = lca_core::synth::synth_pair(width, height, gain, gamma).map_err(err)?;
    Ok((PyImage { inner: input }, PyImage { inner: gt }))
}

#[pymodule]
fn lca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyOldModel>()?;
    m.add_function(wrap_pyfunction!(qr_orthonormalize, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality_error, m)?)?;
    m.add_function(wrap_pyfunction!(random_stiefel, m)?)?;
    m.add_function(wrap_pyfunction!(riemannian_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(retract, m)?)?;
    m.add_function(wrap_pyfunction!(train_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(difference_samples, m)?)?;
    m.add_function(wrap_pyfunction!(image_features, m)?)?;
    m.add_function(wrap_pyfunction!(features_to_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_match_score, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_report, m)?)?;
    m.add_function(wrap_pyfunction!(synth_pair, m)?)?;
    Ok(())
}
