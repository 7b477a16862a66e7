//! Python bindings for the estimators, samplers and experiment runner.

use mapprox::chain_compare::verify_identity;
use mapprox::normal_clt::{bound_moments, theorem_bound, Innovation};
use mapprox::sampling::{self, fill_stable, simulate_paths, RngStream};
use mapprox::stable_ou::{simulate_pair_marginals, StableOuConfig};
use mapprox::wasserstein::{self, SampleSet};
use mapprox::VectorState;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: mapprox::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(s: &SampleSet) -> Vec<Vec<f64>> {
    s.points().map(<[f64]>::to_vec).collect()
}

/// `d_alpha`, `sigma` and the sphere area for a stable index and dimension.
#[pyfunction]
fn stable_constants<'py>(py: Python<'py>, alpha: f64, dim: usize) -> PyResult<Bound<'py, PyDict>> {
    let p = sampling::stable_constants(alpha, dim).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("alpha", p.alpha)?;
    d.set_item("dim", p.dim)?;
    d.set_item("d_alpha", p.d_alpha)?;
    d.set_item("sigma", p.sigma)?;
    d.set_item("sphere_area", p.sphere_area)?;
    Ok(d)
}

/// `m` rotationally symmetric stable draws with characteristic function
/// `exp(-|lambda|^alpha)`.
#[pyfunction]
#[pyo3(signature = (alpha, dim, m, seed = 0))]
fn sample_stable(alpha: f64, dim: usize, m: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    sampling::StableParams::new(alpha, dim).map_err(py_err)?;
    let flat = simulate_paths(&RngStream::new(seed, 0), m, dim, |rng, out| {
        fill_stable(rng, alpha, out)
    });
    Ok(flat.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn w1_1d(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    wasserstein::w1_1d_values(&a, &b).map_err(py_err)
}

#[pyfunction]
fn w1_assignment(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let a = SampleSet::from_points(&a).map_err(py_err)?;
    let b = SampleSet::from_points(&b).map_err(py_err)?;
    Ok(wasserstein::w1_assignment(&a, &b).map_err(py_err)?.value)
}

#[pyfunction]
#[pyo3(signature = (a, b, n_proj = 64, seed = 0))]
fn w1_sliced(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, n_proj: usize, seed: u64) -> PyResult<f64> {
    let a = SampleSet::from_points(&a).map_err(py_err)?;
    let b = SampleSet::from_points(&b).map_err(py_err)?;
    Ok(wasserstein::w1_sliced(&a, &b, n_proj, &RngStream::new(seed, 0))
        .map_err(py_err)?
        .value)
}

/// Largest residual of the telescoping identity over random finite chains.
#[pyfunction]
#[pyo3(signature = (trials = 500, max_states = 8, max_horizon = 12, seed = 0))]
fn verify_framework(trials: usize, max_states: usize, max_horizon: usize, seed: u64) -> PyResult<f64> {
    let mut rng = RngStream::new(seed, 0).rng();
    Ok(verify_identity(&mut rng, trials, max_states, max_horizon)
        .map_err(py_err)?
        .max_abs_residual)
}

#[pyfunction]
#[pyo3(signature = (dim, n, innovation = "rademacher"))]
fn clt_bound(dim: usize, n: usize, innovation: &str) -> PyResult<f64> {
    let inn = Innovation::from_name(innovation).map_err(py_err)?;
    theorem_bound(dim, n, &bound_moments(inn, dim)).map_err(py_err)
}

/// Exact Ornstein-Uhlenbeck endpoints and Euler-Maruyama endpoints started
/// at the origin, `n_paths` of each.
#[pyfunction]
#[pyo3(signature = (alpha, dim, eta, n_steps, n_paths, seed = 0))]
fn stable_pair(
    alpha: f64,
    dim: usize,
    eta: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let x0 = VectorState::zeros(dim).map_err(py_err)?;
    let cfg = StableOuConfig::new(alpha, dim, eta, n_steps, x0, n_paths).map_err(py_err)?;
    let (exact, em) = simulate_pair_marginals(&cfg, &RngStream::new(seed, 0)).map_err(py_err)?;
    Ok((rows(&exact), rows(&em)))
}

/// Run the command-line tool in-process; returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    mapprox::cli::run(std::iter::once("markov-approx".to_string()).chain(args))
}

#[pymodule(name = "markov_approx")]
fn markov_approx_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(stable_constants, m)?)?;
    m.add_function(wrap_pyfunction!(sample_stable, m)?)?;
    m.add_function(wrap_pyfunction!(w1_1d, m)?)?;
    m.add_function(wrap_pyfunction!(w1_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(w1_sliced, m)?)?;
    m.add_function(wrap_pyfunction!(verify_framework, m)?)?;
    m.add_function(wrap_pyfunction!(clt_bound, m)?)?;
    m.add_function(wrap_pyfunction!(stable_pair, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
