//! Python bindings. Arrays cross the boundary as flat `list[float]` in
//! row-major order; shapes are passed or returned alongside.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use undec::baselines::{self, IstaSettings, WaveletBasis};
use undec::construction::{self, PiecewiseLinearSpec};
use undec::generator::{self, GeneratorConfig, GeneratorParams};
use undec::operators::{self, LinearOperator};
use undec::recovery::{self, OptimizerSettings, RecoveryProblem};
use undec::{phantom, theory, Tensor};

fn err(e: undec::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "GeneratorConfig", module = "undec", from_py_object)]
#[derive(Clone)]
struct PyGeneratorConfig {
    inner: GeneratorConfig,
}

#[pymethods]
impl PyGeneratorConfig {
    #[new]
    #[pyo3(signature = (arch = "i", depth = 5, channels = 32, out_channels = 1, input_extent = 4, spatial_rank = 2))]
    fn new(
        arch: &str,
        depth: usize,
        channels: usize,
        out_channels: usize,
        input_extent: usize,
        spatial_rank: usize,
    ) -> PyResult<Self> {
        let arch = arch.parse().map_err(err)?;
        let mut inner = GeneratorConfig::new(arch, depth, channels);
        inner.out_channels = out_channels;
        inner.input_extent = input_extent;
        inner.spatial_rank = spatial_rank;
        inner.validate().map_err(err)?;
        Ok(PyGeneratorConfig { inner })
    }

    /// Sets one field by name, as in a config file.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(err)?;
        next.validate().map_err(err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.to_string()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels
    }

    #[getter]
    fn param_count(&self) -> usize {
        generator::param_count(&self.inner)
    }

    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        self.inner.output_shape()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "GeneratorConfig(arch='{}', depth={}, channels={}, params={})",
            self.inner.arch,
            self.inner.depth,
            self.inner.channels,
            generator::param_count(&self.inner)
        )
    }
}

#[pyclass(name = "LinearOperator", module = "undec")]
struct PyLinearOperator {
    inner: LinearOperator,
}

#[pymethods]
impl PyLinearOperator {
    #[staticmethod]
    fn identity(n: usize) -> Self {
        PyLinearOperator {
            inner: LinearOperator::identity(n),
        }
    }

    #[staticmethod]
    fn gaussian(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyLinearOperator {
            inner: operators::make_gaussian(m, n, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn rademacher(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyLinearOperator {
            inner: operators::make_rademacher(m, n, seed).map_err(err)?,
        })
    }

    /// Column-masked unitary 2D DFT of an `h × w` image.
    #[staticmethod]
    fn masked_fourier(h: usize, w: usize, acceleration: usize, center_fraction: f64, seed: u64) -> PyResult<Self> {
        let mask = operators::make_mask(w, acceleration, center_fraction, seed).map_err(err)?;
        Ok(PyLinearOperator {
            inner: operators::make_masked_fourier(h, w, mask).map_err(err)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply(&x).map_err(err)
    }

    fn adjoint(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.adjoint(&y).map_err(err)
    }
}

#[pyclass(name = "FitResult", module = "undec", get_all)]
struct PyFitResult {
    estimate: Vec<f64>,
    params: Vec<f64>,
    loss_trace: Vec<f64>,
    iterations: usize,
    mse: Option<f64>,
    psnr: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (config, seed = 0, scale = 0.1))]
fn init_params(config: &PyGeneratorConfig, seed: u64, scale: f64) -> PyResult<Vec<f64>> {
    Ok(generator::init_params(&config.inner, seed, scale).map_err(err)?.values().to_vec())
}

/// `G(C)` as a flat list in `config.output_shape` order.
#[pyfunction]
fn forward(config: &PyGeneratorConfig, params: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = GeneratorParams::from_values(&config.inner, params).map_err(err)?;
    Ok(generator::forward(&config.inner, &p).map_err(err)?.into_data())
}

/// Fits the generator to `y = A x`; `reference` enables MSE/PSNR reporting.
#[pyfunction]
#[pyo3(signature = (config, operator, y, reference = None, iterations = 3000, lr = 0.01, seed = 0, restarts = 1))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    config: &PyGeneratorConfig,
    operator: &PyLinearOperator,
    y: Vec<f64>,
    reference: Option<Vec<f64>>,
    iterations: usize,
    lr: f64,
    seed: u64,
    restarts: usize,
) -> PyResult<PyFitResult> {
    let shape = config.inner.output_shape();
    let reference = reference.map(|r| Tensor::new(&shape, r)).transpose().map_err(err)?;
    let problem = RecoveryProblem::new(operator.inner.clone(), y, config.inner.clone(), reference).map_err(err)?;
    let settings = OptimizerSettings {
        iterations,
        step_size: lr,
        init_seed: seed,
        restarts,
        ..Default::default()
    };
    let result = py.detach(|| recovery::fit(&problem, &settings)).map_err(err)?;
    Ok(PyFitResult {
        iterations: result.iterations_run,
        mse: result.metrics.map(|m| m.mse),
        psnr: result.metrics.map(|m| m.psnr),
        params: result.params.values().to_vec(),
        loss_trace: result.loss_trace,
        estimate: result.estimate.into_data(),
    })
}

#[pyfunction]
#[pyo3(signature = (x, reference, peak = 1.0))]
fn psnr(x: Vec<f64>, reference: Vec<f64>, peak: f64) -> PyResult<f64> {
    if x.len() != reference.len() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    Ok(recovery::psnr(&x, &reference, peak))
}

#[pyfunction]
fn shepp_logan(h: usize, w: usize) -> Vec<f64> {
    phantom::shepp_logan(h, w).into_data()
}

#[pyfunction]
#[pyo3(signature = (h, w, seed = 0))]
fn smooth_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    phantom::smooth_image(h, w, seed).into_data()
}

/// Keeps the `n_keep` largest Haar coefficients.
#[pyfunction]
fn haar_threshold(image: Vec<f64>, shape: Vec<usize>, n_keep: usize) -> PyResult<Vec<f64>> {
    let t = Tensor::new(&shape, image).map_err(err)?;
    Ok(baselines::threshold_compress(&t, &WaveletBasis::haar(), n_keep)
        .map_err(err)?
        .into_data())
}

/// FISTA for `½‖y − Ax‖² + λ‖Wx‖₁` with the Haar basis.
#[pyfunction]
#[pyo3(signature = (y, operator, shape, lam, iterations = 300))]
fn ista_l1(py: Python<'_>, y: Vec<f64>, operator: &PyLinearOperator, shape: Vec<usize>, lam: f64, iterations: usize) -> PyResult<Vec<f64>> {
    let settings = IstaSettings {
        lambda: lam,
        iterations,
        step: None,
        accelerated: true,
    };
    let r = py
        .detach(|| baselines::ista_l1(&y, &operator.inner, &shape, &WaveletBasis::haar(), &settings))
        .map_err(err)?;
    Ok(r.estimate.into_data())
}

#[pyfunction]
#[pyo3(signature = (n, ell, trials = 100, seed = 0))]
fn hankel_identity_check(n: usize, ell: usize, trials: usize, seed: u64) -> PyResult<f64> {
    theory::hankel_identity_check(n, ell, trials, seed).map_err(err)
}

/// Returns `(max_ratio, bound, violations)` for a plain generator.
#[pyfunction]
#[pyo3(signature = (depth, channels, mu, trials = 1000, seed = 0, input_extent = 4, spatial_rank = 2))]
fn lipschitz_check(
    depth: usize,
    channels: usize,
    mu: f64,
    trials: usize,
    seed: u64,
    input_extent: usize,
    spatial_rank: usize,
) -> PyResult<(f64, f64, usize)> {
    let mut cfg = GeneratorConfig::new(generator::Arch::Plain, depth, channels);
    cfg.input_extent = input_extent;
    cfg.spatial_rank = spatial_rank;
    let ball = theory::BallSpec::for_config(&cfg, mu).map_err(err)?;
    let r = theory::empirical_lipschitz_check(&cfg, &ball, trials, seed).map_err(err)?;
    Ok((r.max_ratio, r.bound, r.violations))
}

/// Builds the sparse construction generator for `(breakpoint, slope)` pairs
/// and returns `(output, nonzero_count)`.
#[pyfunction]
#[pyo3(signature = (segments, depth, initial = 0.0))]
fn build_piecewise(segments: Vec<(usize, f64)>, depth: usize, initial: f64) -> PyResult<(Vec<f64>, usize)> {
    let spec = PiecewiseLinearSpec::new(construction::output_len(depth), segments, initial).map_err(err)?;
    let sparse = construction::build_piecewise(&spec, depth).map_err(err)?;
    Ok((sparse.forward().map_err(err)?, sparse.nonzero_count))
}

#[pymodule]
#[pyo3(name = "undec")]
fn undec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeneratorConfig>()?;
    m.add_class::<PyLinearOperator>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(init_params, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(shepp_logan, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_image, m)?)?;
    m.add_function(wrap_pyfunction!(haar_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(ista_l1, m)?)?;
    m.add_function(wrap_pyfunction!(hankel_identity_check, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz_check, m)?)?;
    m.add_function(wrap_pyfunction!(build_piecewise, m)?)?;
    Ok(())
}
