//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the `json` module, so they arrive as plain dicts and lists.

use ergorate::chain::{self, Distribution, RateMatrix, Validation, WeightFunction};
use ergorate::montecarlo::{empirical_fnorm, sample_paths, Start};
use ergorate::semigroup::{self, FitMode, Semigroup};
use ergorate::spec_file::ChainFile;
use ergorate::verify::{run_battery, VerifyConfig};
use ergorate::{htransform, spectral, ChainSpec, ErgoError, Tolerances};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyComplex;
use serde::Serialize;

create_exception!(
    ergorate,
    ErgorateError,
    PyValueError,
    "Analyzer error; the message starts with the error kind."
);

fn err(e: ErgoError) -> PyErr {
    ErgorateError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ErgorateError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn weight(f: Option<Vec<f64>>) -> PyResult<Option<WeightFunction>> {
    f.map(WeightFunction::new).transpose().map_err(err)
}

/// A validated finite chain with its weight function and stationary law.
#[pyclass(name = "Chain", module = "ergorate", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyChain {
    spec: ChainSpec,
}

#[pymethods]
impl PyChain {
    /// Explicit generator; the diagonal must already make rows sum to zero.
    #[staticmethod]
    #[pyo3(signature = (q, f=None, pi=None, label=String::new()))]
    fn from_matrix(
        q: Vec<Vec<f64>>,
        f: Option<Vec<f64>>,
        pi: Option<Vec<f64>>,
        label: String,
    ) -> PyResult<Self> {
        let file = ChainFile::Explicit(ergorate::spec_file::ExplicitChain { label, q, f, pi });
        Ok(Self {
            spec: file.build().map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            spec: ergorate::spec_file::load_str(text).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (pi, beta=2.0))]
    fn example21(pi: Vec<f64>, beta: f64) -> PyResult<Self> {
        let pi = Distribution::new(pi).map_err(err)?;
        Ok(Self {
            spec: chain::build_example21(&pi, beta).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (f=None))]
    fn example22(f: Option<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            spec: chain::build_example22(weight(f)?).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (birth, death, f=None))]
    fn birth_death(birth: Vec<f64>, death: Vec<f64>, f: Option<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            spec: chain::build_birth_death(&birth, &death, weight(f)?).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.spec.n()
    }

    #[getter]
    fn label(&self) -> String {
        self.spec.label.clone()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        self.spec.rate_matrix().to_rows()
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.spec.stationary().as_slice().to_vec()
    }

    #[getter]
    fn weight(&self) -> Vec<f64> {
        self.spec.weight().as_slice().to_vec()
    }

    fn with_weight(&self, f: Vec<f64>) -> PyResult<Self> {
        let f = WeightFunction::new(f).map_err(err)?;
        Ok(Self {
            spec: self.spec.with_weight(f).map_err(err)?,
        })
    }

    /// `(reversible, max_violation)`.
    fn is_reversible(&self) -> (bool, f64) {
        let r = chain::is_reversible(self.spec.rate_matrix(), self.spec.stationary());
        (r.reversible, r.max_violation)
    }

    fn dual(&self) -> PyResult<Self> {
        self.derived(chain::dual(self.spec.rate_matrix(), self.spec.stationary()).map_err(err)?)
    }

    fn reversibilize(&self) -> PyResult<Self> {
        self.derived(
            chain::reversibilize(self.spec.rate_matrix(), self.spec.stationary()).map_err(err)?,
        )
    }

    fn to_json(&self) -> String {
        ChainFile::from_spec(&self.spec).to_json()
    }

    fn __repr__(&self) -> String {
        format!("Chain(label={:?}, n={})", self.spec.label, self.spec.n())
    }
}

impl PyChain {
    fn derived(&self, q: RateMatrix) -> PyResult<Self> {
        let spec = ChainSpec::new(
            self.spec.label.clone(),
            q,
            self.spec.weight().clone(),
            Some(self.spec.stationary().clone()),
        )
        .map_err(err)?;
        Ok(Self { spec })
    }
}

/// Builds a generator from off-diagonal rates, recomputing the diagonal.
#[pyfunction]
#[pyo3(signature = (rates, f=None))]
fn repaired(rates: Vec<Vec<f64>>, f: Option<Vec<f64>>) -> PyResult<PyChain> {
    let n = rates.len();
    if rates.iter().any(|r| r.len() != n) {
        return Err(err(ErgoError::NotSquare {
            rows: n,
            cols: rates.iter().map(Vec::len).max().unwrap_or(0),
        }));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rates[i][j]);
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default()).map_err(err)?;
    let f = weight(f)?.unwrap_or_else(|| WeightFunction::ones(n));
    Ok(PyChain {
        spec: ChainSpec::new("repaired", q, f, None).map_err(err)?,
    })
}

#[pyfunction]
fn gap(chain: &PyChain) -> PyResult<f64> {
    spectral::gap(chain.spec.rate_matrix(), chain.spec.stationary()).map_err(err)
}

#[pyfunction]
fn eigenvalues<'py>(py: Python<'py>, chain: &PyChain) -> PyResult<Vec<Bound<'py, PyComplex>>> {
    let ev = spectral::eigenvalues(chain.spec.rate_matrix()).map_err(err)?;
    Ok(ev
        .iter()
        .map(|l| PyComplex::from_doubles(py, l.re, l.im))
        .collect())
}

#[pyfunction]
fn true_decay_rate(chain: &PyChain) -> PyResult<f64> {
    spectral::true_decay_rate(chain.spec.rate_matrix()).map_err(err)
}

/// Spectral report: gap, eigenvalues as `[re, im]`, rate and constants.
#[pyfunction]
fn report<'py>(py: Python<'py>, chain: &PyChain) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &spectral::ergodicity_report(&chain.spec).map_err(err)?)
}

/// `exp(tQ)` as a list of rows.
#[pyfunction]
fn expm(chain: &PyChain, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let snap = semigroup::expm(chain.spec.rate_matrix(), t).map_err(err)?;
    Ok((0..chain.spec.n()).map(|i| snap.row(i)).collect())
}

#[pyfunction]
fn fnorm(chain: &PyChain, state: usize, t: f64) -> PyResult<f64> {
    Semigroup::new(&chain.spec)
        .and_then(|s| s.fnorm(state, t))
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (chain, state, times=None))]
fn decay_curve<'py>(
    py: Python<'py>,
    chain: &PyChain,
    state: usize,
    times: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = spectral::ergodicity_report(&chain.spec).map_err(err)?;
    let times = times.unwrap_or_else(|| semigroup::default_grid(&report));
    let curve = Semigroup::new(&chain.spec)
        .and_then(|s| s.decay_curve(&report, state, &times))
        .map_err(err)?;
    to_py(py, &curve)
}

/// Fits the decay rate of `state` over `window` (default from the spectrum).
#[pyfunction]
#[pyo3(signature = (chain, state, window=None, mode="auto", points=400))]
fn fit_rate<'py>(
    py: Python<'py>,
    chain: &PyChain,
    state: usize,
    window: Option<(f64, f64)>,
    mode: &str,
    points: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        "auto" => FitMode::Auto,
        "linear" => FitMode::Linear,
        "peak" | "peak_envelope" => FitMode::PeakEnvelope,
        other => {
            return Err(ErgorateError::new_err(format!(
                "Parse: unknown fit mode '{other}'"
            )))
        }
    };
    let report = spectral::ergodicity_report(&chain.spec).map_err(err)?;
    let window = window.unwrap_or_else(|| semigroup::default_window_for(&report));
    let times = semigroup::uniform_grid(0.0, window.1, points.max(2));
    let fit = Semigroup::new(&chain.spec)
        .and_then(|s| s.decay_curve(&report, state, &times))
        .and_then(|c| semigroup::fit_rate(&c, Some(window), mode))
        .map_err(err)?;
    to_py(py, &fit)
}

#[pyfunction]
#[pyo3(signature = (chain, small_set=vec![0]))]
fn drift<'py>(
    py: Python<'py>,
    chain: &PyChain,
    small_set: Vec<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &ergorate::drift::drift(&chain.spec, &small_set).map_err(err)?,
    )
}

/// `||mu P_t - pi||_f` directly and through the dual semigroup.
#[pyfunction]
fn mu_ft_norm<'py>(
    py: Python<'py>,
    chain: &PyChain,
    mu: Vec<f64>,
    t: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &semigroup::mu_ft_norm(&mu, &chain.spec, t).map_err(err)?,
    )
}

#[pyfunction]
fn check_lemma31<'py>(
    py: Python<'py>,
    chain: &PyChain,
    t: f64,
    s: f64,
    g1: Vec<f64>,
    g2: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let tr = htransform::transform(&chain.spec).map_err(err)?;
    to_py(
        py,
        &htransform::check_lemma31(&tr, t, s, &g1, &g2).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (chain, t, tol=1e-9))]
fn check_lemma32<'py>(
    py: Python<'py>,
    chain: &PyChain,
    t: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let tr = htransform::transform(&chain.spec).map_err(err)?;
    to_py(py, &htransform::check_lemma32(&tr, t, tol).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (chain, t, tol=1e-9))]
fn check_lemma33<'py>(
    py: Python<'py>,
    chain: &PyChain,
    t: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let tr = htransform::transform(&chain.spec).map_err(err)?;
    to_py(py, &htransform::check_lemma33(&tr, t, tol).map_err(err)?)
}

#[pyfunction]
fn h_function<'py>(
    py: Python<'py>,
    chain: &PyChain,
    state: usize,
    s: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &htransform::h_function(&chain.spec, state, s).map_err(err)?,
    )
}

/// Monte Carlo f-norm estimates; `state=None` starts from the stationary law.
#[pyfunction]
#[pyo3(signature = (chain, times, state=Some(0), paths=10_000, seed=0))]
fn simulate<'py>(
    py: Python<'py>,
    chain: &PyChain,
    times: Vec<f64>,
    state: Option<usize>,
    paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let start = match state {
        Some(i) => Start::State(i),
        None => Start::Law(chain.spec.stationary().clone()),
    };
    let spec = &chain.spec;
    let est = py
        .detach(|| {
            sample_paths(spec, start, &times, paths, seed)
                .and_then(|e| empirical_fnorm(&e, spec.stationary(), spec.weight()))
        })
        .map_err(err)?;
    to_py(py, &est)
}

#[pyfunction]
#[pyo3(signature = (only=None, n=5))]
fn verify<'py>(
    py: Python<'py>,
    only: Option<Vec<String>>,
    n: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = VerifyConfig {
        only,
        n,
        ..Default::default()
    };
    to_py(py, &py.detach(|| run_battery(&cfg)).map_err(err)?)
}

#[pymodule]
#[pyo3(name = "ergorate")]
fn ergorate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ErgorateError", m.py().get_type::<ErgorateError>())?;
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(repaired, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(true_decay_rate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(fnorm, m)?)?;
    m.add_function(wrap_pyfunction!(decay_curve, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(drift, m)?)?;
    m.add_function(wrap_pyfunction!(mu_ft_norm, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemma31, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemma32, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemma33, m)?)?;
    m.add_function(wrap_pyfunction!(h_function, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
