//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use koopman_sysid::basis::{self, GramMethod};
use koopman_sysid::dynamics::{self, Example1Params, NoiseModel, SampleSource};
use koopman_sysid::estimator::{self, MomentPair};
use koopman_sysid::experiments::{self, ExperimentConfig};
use koopman_sysid::{bounds, pf, seed, BoundTerms, Domain, MonomialSpec};

create_exception!(koopman_sysid, KoopmanError, PyException);

fn err(e: koopman_sysid::Error) -> PyErr {
    KoopmanError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn domain(state_dim: usize, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> PyResult<Domain> {
    match (lower, upper) {
        (None, None) => Ok(Domain::symmetric_unit(state_dim)),
        (Some(l), Some(u)) => Domain::new(l, u).map_err(err),
        _ => Err(KoopmanError::new_err("give both lower and upper or neither")),
    }
}

fn noise(std: Option<Vec<f64>>, default: f64) -> PyResult<NoiseModel> {
    let std = std.unwrap_or_else(|| vec![default; 2]);
    if std.iter().all(|s| *s == 0.0) {
        Ok(NoiseModel::none(std.len()))
    } else {
        NoiseModel::gaussian(std).map_err(err)
    }
}

#[pyclass(name = "Dictionary", frozen)]
struct PyDictionary {
    inner: basis::Dictionary,
}

#[pymethods]
impl PyDictionary {
    /// `[1, x1, x2, x1^2]`.
    #[staticmethod]
    fn example1() -> Self {
        PyDictionary {
            inner: basis::Dictionary::example1(),
        }
    }

    /// All monomials of total degree at most `max_degree`, graded lexicographic.
    #[staticmethod]
    fn monomial(state_dim: usize, max_degree: u32) -> PyResult<Self> {
        let spec = MonomialSpec::new(state_dim, max_degree).map_err(err)?;
        Ok(PyDictionary {
            inner: basis::Dictionary::monomial(&spec).map_err(err)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.evaluate(&x).map_err(err)
    }
}

#[pyclass(name = "Samples", frozen)]
struct PySamples {
    inner: dynamics::SampleSet,
}

#[pymethods]
impl PySamples {
    #[getter]
    fn xs(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.x(t).to_vec()).collect()
    }

    #[getter]
    fn ys(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.y(t).to_vec()).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "System", frozen)]
struct PySystem {
    inner: dynamics::StochasticSystem,
}

#[pymethods]
impl PySystem {
    /// Closed quadratic system; `noise_std` defaults to unit noise, zeros mean noiseless.
    #[staticmethod]
    #[pyo3(signature = (rho, mu, c, noise_std=None))]
    fn example1(rho: f64, mu: f64, c: f64, noise_std: Option<Vec<f64>>) -> PyResult<Self> {
        let sys = dynamics::make_example1_with_noise(Example1Params { rho, mu, c }, noise(noise_std, 1.0)?)
            .map_err(err)?;
        Ok(PySystem { inner: sys })
    }

    #[staticmethod]
    #[pyo3(signature = (dt=dynamics::DEFAULT_VDP_DT, noise_std=None, standard_vdp=false))]
    fn vanderpol(dt: f64, noise_std: Option<Vec<f64>>, standard_vdp: bool) -> PyResult<Self> {
        let sys = dynamics::make_vanderpol(dt, noise(noise_std, dynamics::DEFAULT_VDP_NOISE_STD)?, standard_vdp)
            .map_err(err)?;
        Ok(PySystem { inner: sys })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    /// One trajectory of `steps` transitions from `x0`.
    fn simulate(&self, x0: Vec<f64>, steps: usize, seed: u64) -> PyResult<PySamples> {
        Ok(PySamples {
            inner: dynamics::simulate(&self.inner, &x0, steps, seed).map_err(err)?,
        })
    }

    /// `count` pairs from a uniform start in the domain, as one trajectory or independent pairs.
    #[pyo3(signature = (count, seed, lower=None, upper=None, independent_pairs=false))]
    fn generate(
        &self,
        count: usize,
        seed: u64,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
        independent_pairs: bool,
    ) -> PyResult<PySamples> {
        let d = domain(self.inner.state_dim(), lower, upper)?;
        let source = if independent_pairs {
            SampleSource::IndependentPairs
        } else {
            SampleSource::SingleTrajectory
        };
        Ok(PySamples {
            inner: dynamics::generate(&self.inner, &d, count, seed, source).map_err(err)?,
        })
    }
}

#[pyclass(name = "KoopmanEstimate", frozen)]
struct PyKoopmanEstimate {
    inner: estimator::OperatorEstimate,
    delta_hat: f64,
}

#[pymethods]
impl PyKoopmanEstimate {
    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.dict_names.clone()
    }

    #[getter]
    fn sample_count(&self) -> usize {
        self.inner.sample_count
    }

    #[getter]
    fn condition_sigma0(&self) -> f64 {
        self.inner.condition_sigma0
    }

    #[getter]
    fn fallback(&self) -> bool {
        self.inner.fallback
    }

    #[getter]
    fn delta_hat(&self) -> f64 {
        self.delta_hat
    }
}

#[pyclass(name = "Gram", frozen)]
struct PyGram {
    inner: basis::GramMatrix,
}

#[pymethods]
impl PyGram {
    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.lambda)
    }

    #[getter]
    fn condition(&self) -> f64 {
        self.inner.condition()
    }

    #[getter]
    fn min_eigenvalue(&self) -> f64 {
        self.inner.min_eigenvalue()
    }

    #[getter]
    fn analytic(&self) -> bool {
        self.inner.method == GramMethod::AnalyticMonomial
    }
}

#[pyclass(name = "PFEstimate", frozen)]
struct PyPFEstimate {
    inner: pf::PFEstimate,
}

#[pymethods]
impl PyPFEstimate {
    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix)
    }

    #[getter]
    fn cond_lambda(&self) -> f64 {
        self.inner.cond_lambda
    }

    #[getter]
    fn conjugation_residual(&self) -> f64 {
        self.inner.conjugation_residual
    }

    /// Largest duality defect over `n_trials` random unit pairs.
    #[pyo3(signature = (n_trials=1000, seed=0))]
    fn duality_defect(&self, n_trials: usize, seed: u64) -> PyResult<f64> {
        pf::duality_check(
            &self.inner.source_koopman.matrix,
            &self.inner.matrix,
            &self.inner.gram,
            n_trials,
            seed,
        )
        .map_err(err)
    }
}

/// Least-squares Koopman estimate from sample pairs.
#[pyfunction]
fn estimate(dictionary: &PyDictionary, samples: &PySamples) -> PyResult<PyKoopmanEstimate> {
    let dict = &dictionary.inner;
    let moments = estimator::accumulate(MomentPair::new(dict), dict, &samples.inner).map_err(err)?;
    let k = estimator::estimate_koopman(&moments).map_err(err)?;
    let res = estimator::residuals(dict, &samples.inner, &k).map_err(err)?;
    Ok(PyKoopmanEstimate {
        inner: k,
        delta_hat: res.delta_hat,
    })
}

/// Gram matrix under the uniform probability measure on `[lower, upper]`.
#[pyfunction]
#[pyo3(signature = (dictionary, lower=None, upper=None, quadrature_order=basis::DEFAULT_QUADRATURE_ORDER))]
fn gram(
    dictionary: &PyDictionary,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    quadrature_order: usize,
) -> PyResult<PyGram> {
    let d = domain(dictionary.inner.state_dim(), lower, upper)?;
    Ok(PyGram {
        inner: basis::gram(&dictionary.inner, &d, quadrature_order).map_err(err)?,
    })
}

/// P-F matrix `Lambda^{-1} K^T Lambda`.
#[pyfunction(name = "pf")]
fn pf_estimate(estimate: &PyKoopmanEstimate, gram: &PyGram) -> PyResult<PyPFEstimate> {
    Ok(PyPFEstimate {
        inner: pf::koopman_to_pf(&estimate.inner, &gram.inner).map_err(err)?,
    })
}

#[pyfunction]
fn theorem1_bound(
    delta_hat: f64,
    epsilon: f64,
    sample_count: usize,
    n_basis: usize,
    mean_trace_sigma0: f64,
    mean_frob_sq_inv_sigma0: f64,
) -> PyResult<f64> {
    let terms = BoundTerms {
        mean_trace_sigma0,
        mean_frob_sq_inv_sigma0,
        se_trace_sigma0: 0.0,
        se_frob_sq_inv_sigma0: 0.0,
        n_used: 0,
        n_singular: 0,
    };
    bounds::theorem1_bound(delta_hat, epsilon, sample_count, n_basis, &terms).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (rho, mu, c, noise_variance=1.0))]
fn example1_true_koopman(rho: f64, mu: f64, c: f64, noise_variance: f64) -> Vec<Vec<f64>> {
    rows(&dynamics::example1_true_koopman(Example1Params { rho, mu, c }, noise_variance))
}

#[pyfunction]
fn derive_seed(base_seed: u64, sample_count: u64, realization: u64) -> u64 {
    seed::derive_seed(base_seed, sample_count, realization)
}

/// Runs a sweep from TOML text and returns the error curve as a dict.
#[pyfunction]
#[pyo3(signature = (config_toml, workers=None))]
fn run_sweep<'py>(py: Python<'py>, config_toml: &str, workers: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::from_toml_str(config_toml).map_err(err)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let out = py.detach(|| experiments::run_sweep(&cfg)).map_err(err)?;
    let c = out.curve;
    let d = PyDict::new(py);
    d.set_item("label", out.label)?;
    d.set_item("t_values", c.t_values)?;
    d.set_item("mean_rel_err", c.mean_rel_err)?;
    d.set_item("std_err", c.std_err)?;
    d.set_item("n_ok", c.n_ok)?;
    d.set_item("n_failed", c.n_failed)?;
    d.set_item("invalid", c.invalid)?;
    d.set_item("fitted_slope", c.fitted_slope)?;
    d.set_item("slope_stderr", c.slope_stderr)?;
    d.set_item("reference", rows(&out.reference_matrix))?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "koopman_sysid")]
fn koopman_sysid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KoopmanError", m.py().get_type::<KoopmanError>())?;
    m.add_class::<PyDictionary>()?;
    m.add_class::<PySamples>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyKoopmanEstimate>()?;
    m.add_class::<PyGram>()?;
    m.add_class::<PyPFEstimate>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(gram, m)?)?;
    m.add_function(wrap_pyfunction!(pf_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(example1_true_koopman, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
