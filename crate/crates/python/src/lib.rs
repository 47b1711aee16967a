//! Python bindings for `datalaw`.
//!
//! Fits return plain dicts; laws are exposed as the `PowerLaw` and `JointLaw`
//! classes. Every library error surfaces as `ValueError`.

// Python-facing functions take their options as keyword arguments.
#![allow(clippy::too_many_arguments)]

use std::collections::BTreeMap;

use datalaw::analyze::{self, McConfig};
use datalaw::corpus::{self, CorruptionKind, CorruptionSpec, SentencePair, Side};
use datalaw::fit::{self, FitConfig, LossSpace};
use datalaw::law::CapacityParams;
use datalaw::{JointLawParams, Observation};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: datalaw::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// L(D) = alpha * (1/D + c)^p with D in millions of sentence pairs.
#[pyclass(module = "pydatalaw", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PowerLaw(datalaw::PowerLaw);

#[pymethods]
impl PowerLaw {
    #[new]
    fn new(alpha: f64, c: f64, p: f64) -> PyResult<Self> {
        datalaw::PowerLaw::new(alpha, c, p).map(Self).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn p(&self) -> f64 {
        self.0.p
    }

    fn eval(&self, d: f64) -> PyResult<f64> {
        self.0.eval(d).map_err(err)
    }

    /// Partial derivatives (dL/dalpha, dL/dc, dL/dp) at `d`.
    fn gradient(&self, d: f64) -> PyResult<(f64, f64, f64)> {
        let [a, c, p] = self.0.gradient(d).map_err(err)?;
        Ok((a, c, p))
    }

    /// Loss floor alpha * c^p reached with unlimited data.
    fn asymptote(&self) -> f64 {
        analyze::asymptotic_loss(&self.0)
    }

    /// Dataset size 1/c where the two regimes meet; None when c = 0.
    fn transition(&self) -> Option<f64> {
        analyze::transition_point(&self.0)
    }

    /// Loss reduction per additional million pairs, -dL/dD.
    fn marginal_value(&self, d: f64) -> PyResult<f64> {
        analyze::marginal_value(&self.0, d).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("PowerLaw(alpha={}, c={}, p={})", self.0.alpha, self.0.c, self.0.p)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// Joint law: fitted (alpha, p) plus the capacity term
/// c = beta * (n_enc^-p_e * n_dec^-p_d + l_inf)^(1/p).
#[pyclass(module = "pydatalaw", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct JointLaw(JointLawParams);

#[pymethods]
impl JointLaw {
    #[new]
    fn new(alpha: f64, p: f64, beta: f64, p_e: f64, p_d: f64, l_inf: f64) -> PyResult<Self> {
        let params = JointLawParams { alpha, p, beta, p_e, p_d, l_inf };
        params.validate().map_err(err)?;
        Ok(Self(params))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn p(&self) -> f64 {
        self.0.p
    }

    fn eval(&self, n_enc: u64, n_dec: u64, d: f64) -> PyResult<f64> {
        self.0.eval(n_enc, n_dec, d).map_err(err)
    }

    /// The simple law for one model shape.
    fn law_at(&self, n_enc: u64, n_dec: u64) -> PyResult<PowerLaw> {
        self.0.law_at(n_enc, n_dec).map(PowerLaw).map_err(err)
    }

    fn __repr__(&self) -> String {
        let j = &self.0;
        format!(
            "JointLaw(alpha={}, p={}, beta={}, p_e={}, p_d={}, l_inf={})",
            j.alpha, j.p, j.beta, j.p_e, j.p_d, j.l_inf
        )
    }
}

fn config(loss_space: &str, seed: u64, n_restarts: usize, max_iters: usize, rel_tol: f64) -> PyResult<FitConfig> {
    let loss_space = match loss_space {
        "log" => LossSpace::Log,
        "linear" => LossSpace::Linear,
        other => return Err(PyValueError::new_err(format!("loss_space must be 'log' or 'linear', got '{other}'"))),
    };
    Ok(FitConfig { loss_space, max_iters, rel_tol, n_restarts, seed })
}

fn curve(condition: &str, d: &[f64], loss: &[f64]) -> PyResult<Vec<Observation>> {
    if d.len() != loss.len() {
        return Err(PyValueError::new_err(format!("d has {} values but loss has {}", d.len(), loss.len())));
    }
    d.iter().zip(loss).map(|(&d, &l)| Observation::new(condition, d, l).map_err(err)).collect()
}

#[pyfunction]
#[pyo3(signature = (d, loss, *, loss_space = "log", seed = 0, n_restarts = 8, max_iters = 2000, rel_tol = 1e-10))]
fn fit_single<'py>(
    py: Python<'py>,
    d: Vec<f64>,
    loss: Vec<f64>,
    loss_space: &str,
    seed: u64,
    n_restarts: usize,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(loss_space, seed, n_restarts, max_iters, rel_tol)?;
    let obs = curve("curve", &d, &loss)?;
    let fit = py.detach(|| fit::fit_single(&obs, &cfg)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("law", PowerLaw(fit.law))?;
    out.set_item("objective", fit.objective)?;
    out.set_item("residuals", fit.residuals)?;
    out.set_item("converged", fit.converged)?;
    out.set_item("n_iters", fit.n_iters)?;
    Ok(out)
}

/// Fits one exponent shared by every curve in `curves` (name -> (d, loss)).
#[pyfunction]
#[pyo3(signature = (curves, *, loss_space = "log", seed = 0, n_restarts = 8, max_iters = 2000, rel_tol = 1e-10))]
fn fit_shared<'py>(
    py: Python<'py>,
    curves: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    loss_space: &str,
    seed: u64,
    n_restarts: usize,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(loss_space, seed, n_restarts, max_iters, rel_tol)?;
    let groups = curves
        .iter()
        .map(|(name, (d, loss))| Ok((name.clone(), curve(name, d, loss)?)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let fit = py.detach(|| fit::fit_shared(&groups, &cfg)).map_err(err)?;
    let laws = PyDict::new(py);
    for name in fit.per_condition.keys() {
        laws.set_item(name, PowerLaw(fit.law(name).expect("fitted condition")))?;
    }
    let out = PyDict::new(py);
    out.set_item("p", fit.p)?;
    out.set_item("laws", laws)?;
    out.set_item("objective", fit.objective)?;
    out.set_item("residuals", fit.residuals)?;
    out.set_item("converged", fit.converged)?;
    out.set_item("n_iters", fit.n_iters)?;
    Ok(out)
}

/// Fits (alpha, p) of the joint law with the capacity coefficients fixed.
#[pyfunction]
#[pyo3(signature = (
    d, loss, n_enc, n_dec, *, beta, p_e, p_d, l_inf, hold_out = None,
    loss_space = "log", seed = 0, n_restarts = 8, max_iters = 2000, rel_tol = 1e-10
))]
fn fit_joint<'py>(
    py: Python<'py>,
    d: Vec<f64>,
    loss: Vec<f64>,
    n_enc: Vec<u64>,
    n_dec: Vec<u64>,
    beta: f64,
    p_e: f64,
    p_d: f64,
    l_inf: f64,
    hold_out: Option<Vec<(u64, u64)>>,
    loss_space: &str,
    seed: u64,
    n_restarts: usize,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(loss_space, seed, n_restarts, max_iters, rel_tol)?;
    if n_enc.len() != d.len() || n_dec.len() != d.len() {
        return Err(PyValueError::new_err("d, loss, n_enc and n_dec must have equal lengths"));
    }
    let obs = curve("joint", &d, &loss)?
        .into_iter()
        .zip(n_enc.iter().zip(&n_dec))
        .map(|(o, (&e, &dd))| o.with_shape(e, dd).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let capacity = CapacityParams { beta, p_e, p_d, l_inf };
    let hold_out = hold_out.unwrap_or_default();
    let fit = py.detach(|| fit::fit_joint(&obs, &capacity, &hold_out, &cfg)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("law", JointLaw(fit.params))?;
    out.set_item("objective", fit.objective)?;
    out.set_item("residuals", fit.residuals.clone())?;
    out.set_item("in_sample", fit.in_sample.clone())?;
    out.set_item("in_sample_rms", fit.in_sample_rms())?;
    out.set_item("held_out_rms", fit.held_out_rms())?;
    out.set_item("converged", fit.converged)?;
    out.set_item("n_iters", fit.n_iters)?;
    Ok(out)
}

/// Fits L = gamma * D^-q + b to the points with d >= d_min.
#[pyfunction]
#[pyo3(signature = (d, loss, d_min, *, seed = 0, n_restarts = 8, max_iters = 2000, rel_tol = 1e-10))]
fn fit_tail<'py>(
    py: Python<'py>,
    d: Vec<f64>,
    loss: Vec<f64>,
    d_min: f64,
    seed: u64,
    n_restarts: usize,
    max_iters: usize,
    rel_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config("log", seed, n_restarts, max_iters, rel_tol)?;
    let obs = curve("curve", &d, &loss)?;
    let fit = fit::fit_tail(&obs, d_min, &cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("gamma", fit.law.gamma)?;
    out.set_item("q", fit.law.q)?;
    out.set_item("b", fit.law.b)?;
    out.set_item("objective", fit.objective)?;
    out.set_item("converged", fit.converged)?;
    Ok(out)
}

/// Ordinary least squares y = slope * x + intercept.
#[pyfunction]
fn fit_linear<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let fit = fit::fit_linear(&x, &y).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("slope", fit.slope)?;
    out.set_item("intercept", fit.intercept)?;
    out.set_item("r2", fit.r2)?;
    Ok(out)
}

/// How many times more data `law1` needs to match `law2` when data-limited.
#[pyfunction]
fn equivalence_factor(law1: PowerLaw, law2: PowerLaw) -> PyResult<f64> {
    analyze::data_equivalence_factor(&law1.0, &law2.0).map_err(err)
}

/// Spread of the fitted exponent under multiplicative Gaussian loss noise.
#[pyfunction]
#[pyo3(signature = (d, loss, *, noise_frac = 0.02, n_reps = 1000, seed = 0, loss_space = "log"))]
fn mc_uncertainty<'py>(
    py: Python<'py>,
    d: Vec<f64>,
    loss: Vec<f64>,
    noise_frac: f64,
    n_reps: usize,
    seed: u64,
    loss_space: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(loss_space, seed, 8, 2000, 1e-10)?;
    let obs = curve("curve", &d, &loss)?;
    let mc = McConfig { noise_frac, n_reps, seed };
    let summary = py.detach(|| analyze::mc_uncertainty(&obs, &cfg, &mc)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("mean_p", summary.mean_p)?;
    out.set_item("std_p", summary.std_p)?;
    out.set_item("quantiles", summary.quantiles.to_vec())?;
    out.set_item("n_converged", summary.n_converged)?;
    out.set_item("n_reps", summary.n_reps)?;
    Ok(out)
}

fn pairs_in(pairs: Vec<(String, String)>) -> Vec<SentencePair> {
    pairs.into_iter().enumerate().map(|(i, (s, t))| SentencePair::new(i, s, t)).collect()
}

fn scored_in(pairs: Vec<(String, String, f64)>) -> Vec<SentencePair> {
    pairs.into_iter().enumerate().map(|(i, (s, t, x))| SentencePair::new(i, s, t).with_score(x)).collect()
}

fn pairs_out(pairs: Vec<SentencePair>) -> Vec<(String, String)> {
    pairs.into_iter().map(|p| (p.source, p.target)).collect()
}

fn scored_out(pairs: Vec<SentencePair>) -> Vec<(String, String, f64)> {
    pairs.into_iter().map(|p| (p.source, p.target, p.score.unwrap_or(f64::NAN))).collect()
}

/// Corrupts (source, target) pairs; kind is "char-noise", "word-delete" or "pair-shuffle".
#[pyfunction]
#[pyo3(signature = (pairs, kind, *, side = "target", prob = None, seed = 0))]
fn corrupt(
    pairs: Vec<(String, String)>,
    kind: &str,
    side: &str,
    prob: Option<f64>,
    seed: u64,
) -> PyResult<Vec<(String, String)>> {
    let kind = match kind {
        "char-noise" => CorruptionKind::CharNoise,
        "word-delete" => CorruptionKind::WordDelete,
        "pair-shuffle" => CorruptionKind::PairShuffle,
        other => return Err(PyValueError::new_err(format!("unknown corruption kind '{other}'"))),
    };
    let side = match side {
        "source" => Side::Source,
        "target" => Side::Target,
        other => return Err(PyValueError::new_err(format!("side must be 'source' or 'target', got '{other}'"))),
    };
    let mut spec = CorruptionSpec::new(kind, side, seed);
    if let Some(p) = prob {
        spec = spec.with_prob(p);
    }
    corpus::corrupt(pairs_in(pairs), &spec).map(pairs_out).map_err(err)
}

/// Keeps the highest-scoring fraction of (source, target, score) triples, in input order.
#[pyfunction]
fn filter_top_fraction(pairs: Vec<(String, String, f64)>, fraction: f64) -> PyResult<Vec<(String, String, f64)>> {
    corpus::filter_top_fraction(scored_in(pairs), fraction).map(scored_out).map_err(err)
}

#[pyfunction]
fn filter_threshold(pairs: Vec<(String, String, f64)>, threshold: f64) -> PyResult<Vec<(String, String, f64)>> {
    corpus::filter_threshold(scored_in(pairs), threshold).map(scored_out).map_err(err)
}

/// Uniform sample of `size` pairs without replacement, in input order.
#[pyfunction]
#[pyo3(signature = (pairs, size, *, seed = 0))]
fn sample(pairs: Vec<(String, String)>, size: usize, seed: u64) -> PyResult<Vec<(String, String)>> {
    corpus::sample_subset(pairs_in(pairs), size, seed).map(pairs_out).map_err(err)
}

#[pymodule]
fn pydatalaw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PowerLaw>()?;
    m.add_class::<JointLaw>()?;
    m.add_function(wrap_pyfunction!(fit_single, m)?)?;
    m.add_function(wrap_pyfunction!(fit_shared, m)?)?;
    m.add_function(wrap_pyfunction!(fit_joint, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tail, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_factor, m)?)?;
    m.add_function(wrap_pyfunction!(mc_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(filter_top_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(filter_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
