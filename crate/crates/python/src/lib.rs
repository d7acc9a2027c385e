use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use jsbnn::divergence::{self, DivergenceConfig};
use jsbnn::experiment::{run_experiment as run, ExperimentConfig};
use jsbnn::gaussian;
use jsbnn::loss::{self, Batch, LossKind};
use jsbnn::network::{self, Checkpoint, Prior};
use jsbnn::{analysis, metrics, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } | Error::Quadrature { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Diagonal-covariance Gaussian.
#[pyclass(name = "DiagonalGaussian", module = "jsbnn", frozen)]
struct PyGaussian {
    inner: gaussian::DiagonalGaussian,
}

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<Self> {
        let inner = gaussian::DiagonalGaussian::new(mu, sigma).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn univariate(mu: f64, variance: f64) -> PyResult<Self> {
        let inner = gaussian::DiagonalGaussian::univariate(mu, variance).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma().to_vec()
    }

    #[getter]
    fn variance(&self) -> Vec<f64> {
        self.inner.variance()
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("DiagonalGaussian(mu={:?}, sigma={:?})", self.inner.mu(), self.inner.sigma())
    }
}

#[pyfunction]
fn softplus_sigma(rho: Vec<f64>) -> PyResult<Vec<f64>> {
    gaussian::softplus_sigma(&rho).map_err(to_py)
}

#[pyfunction]
fn kl_gaussian(q: &PyGaussian, p: &PyGaussian) -> PyResult<f64> {
    divergence::kl_gaussian(&q.inner, &p.inner).map_err(to_py)
}

#[pyfunction]
fn jsg_gaussian_closed(q: &PyGaussian, p: &PyGaussian, alpha: f64) -> PyResult<f64> {
    divergence::jsg_gaussian_closed(&q.inner, &p.inner, alpha).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (q, p, alpha, n, seed))]
fn jsa_mc(q: &PyGaussian, p: &PyGaussian, alpha: f64, n: usize, seed: u64) -> PyResult<f64> {
    divergence::jsa_mc(&q.inner, &p.inner, alpha, n, seed).map_err(to_py)
}

#[pyfunction]
fn jsa_bound(alpha: f64) -> f64 {
    divergence::jsa_bound(alpha)
}

#[pyfunction]
fn alpha_threshold(q: &PyGaussian, p: &PyGaussian) -> PyResult<f64> {
    divergence::alpha_threshold(&q.inner, &p.inner).map_err(to_py)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    metrics::roc_auc(&scores, &positive).map_err(to_py)
}

/// Mean-field variational MLP with ReLU hidden layers.
#[pyclass(name = "BayesianNetwork", module = "jsbnn")]
struct PyNetwork {
    inner: network::BayesianNetwork,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (sizes, seed, prior_mu=0.0, prior_variance=0.1))]
    fn new(sizes: Vec<usize>, seed: u64, prior_mu: f64, prior_variance: f64) -> PyResult<Self> {
        let prior = Prior::from_variance(prior_mu, prior_variance).map_err(to_py)?;
        let inner = network::BayesianNetwork::new(&sizes, prior, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = Checkpoint::from_json(text)
            .and_then(Checkpoint::into_network)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_checkpoint(Vec::new()).to_json().map_err(to_py)
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Logits of the mean network (all noise set to zero).
    fn forward_mean(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input, &self.inner.zero_noise()).map_err(to_py)
    }

    /// Logits of one sampled network.
    fn forward(&self, input: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = jsbnn::rng::seeded(seed);
        let noise = self.inner.draw_noise(&mut rng);
        self.inner.forward(&input, &noise).map_err(to_py)
    }

    #[pyo3(signature = (inputs, n_samples, seed))]
    fn predictive(&self, py: Python<'_>, inputs: Vec<Vec<f64>>, n_samples: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        py.detach(|| self.inner.predictive_batch(&inputs, n_samples, seed))
            .map_err(to_py)
    }

    /// Loss breakdown on a batch as a dict with `divergence_term`,
    /// `nll_term` and `total`.
    #[pyo3(signature = (inputs, labels, kind, alpha=0.5, lambda_=1.0, mc_samples=1, seed=0, minibatch_scale=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn loss<'py>(
        &self,
        py: Python<'py>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        kind: &str,
        alpha: f64,
        lambda_: f64,
        mc_samples: usize,
        seed: u64,
        minibatch_scale: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let kind: LossKind = kind.parse().map_err(to_py)?;
        let cfg = DivergenceConfig::new(alpha, lambda_, mc_samples, seed).map_err(to_py)?;
        let batch = Batch::new(&inputs, &labels);
        let b = loss::loss(&self.inner, &batch, kind, &cfg, minibatch_scale).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("divergence_term", b.divergence_term)?;
        out.set_item("nll_term", b.nll_term)?;
        out.set_item("total", b.total)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("BayesianNetwork(sizes={:?})", self.inner.sizes())
    }
}

/// Train and evaluate one experiment described by a JSON config. Returns a
/// dict with the test metrics, the epoch trace as CSV text and the best
/// network.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let outcome = py.detach(|| run(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("best_epoch", outcome.report.best_epoch)?;
    out.set_item("diverged", outcome.report.diverged())?;
    out.set_item("trace_csv", outcome.report.trace_csv())?;
    match &outcome.test {
        Some(m) => out.set_item("test", json_loads(py, &m.to_json().map_err(to_py)?)?)?,
        None => out.set_item("test", py.None())?,
    }
    out.set_item("network", PyNetwork { inner: outcome.report.best })?;
    Ok(out)
}

/// Run the randomized theorem checks; returns `(passed, summary_lines)`.
#[pyfunction]
#[pyo3(signature = (trials, seed, inject_bug=false))]
fn verify_theorems(py: Python<'_>, trials: usize, seed: u64, inject_bug: bool) -> PyResult<(bool, String)> {
    let report = py
        .detach(|| analysis::verify_theorems(trials, seed, inject_bug))
        .map_err(to_py)?;
    Ok((report.passed(), report.summary()))
}

#[pymodule]
#[pyo3(name = "jsbnn")]
fn jsbnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(softplus_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(jsg_gaussian_closed, m)?)?;
    m.add_function(wrap_pyfunction!(jsa_mc, m)?)?;
    m.add_function(wrap_pyfunction!(jsa_bound, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theorems, m)?)?;
    Ok(())
}
