use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::hierflow::chain;
use ::hierflow::model::{self, MeasureSpec, SigmaProfile};
use ::hierflow::observables;
use ::hierflow::oracle;
use ::hierflow::rgflow;
use ::hierflow::sampler;
use ::hierflow::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Model parameters: branching, inverse temperature, depth, variance profile and measure.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (b, beta, n, measure = "dg", sigma_profile = "constant", q_max = 16, grid_size = 512))]
    fn new(
        b: usize,
        beta: f64,
        n: usize,
        measure: &str,
        sigma_profile: &str,
        q_max: usize,
        grid_size: usize,
    ) -> PyResult<Self> {
        let m: MeasureSpec = measure.parse().map_err(to_py)?;
        let p: SigmaProfile = sigma_profile.parse().map_err(to_py)?;
        let inner = model::ModelConfig::new(b, beta, n, &p, m)
            .and_then(|c| c.with_q_max(q_max))
            .and_then(|c| c.with_grid(grid_size))
            .map_err(to_py)?;
        Ok(PyModelConfig { inner })
    }

    #[getter]
    fn b(&self) -> usize {
        self.inner.b
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    #[getter]
    fn sigma_sq(&self) -> Vec<f64> {
        self.inner.sigma_sq.clone()
    }

    fn is_supercritical(&self) -> bool {
        self.inner.is_supercritical()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(b={}, beta={}, n={}, measure={:?})",
            self.inner.b, self.inner.beta, self.inner.n, self.inner.measure
        )
    }
}

#[pyfunction]
fn beta_critical(b: usize) -> PyResult<f64> {
    model::beta_critical(b).map_err(to_py)
}

#[pyfunction]
fn tau_exponent(alpha: f64, b: usize) -> PyResult<f64> {
    observables::tau_exponent(alpha, b).map_err(to_py)
}

#[pyfunction]
fn c_bar(b: usize) -> PyResult<f64> {
    observables::c_bar(b).map_err(to_py)
}

/// One renormalization step on the coefficients `lam(0..=Q)`.
#[pyfunction]
fn rg_step(lam: Vec<f64>, theta_k: f64, b: usize) -> PyResult<Vec<f64>> {
    let l = rgflow::SpectralCoeffs::from_unnormalized(&lam).map_err(to_py)?;
    Ok(rgflow::rg_step(&l, theta_k, b).map_err(to_py)?.0.lam)
}

/// Coefficients `lam_k` for `k = 0..=n`.
#[pyfunction]
fn run_flow(config: &PyModelConfig) -> PyResult<Vec<Vec<f64>>> {
    let t = rgflow::run_flow(&config.inner).map_err(to_py)?;
    Ok(t.levels.into_iter().map(|l| l.lam.lam).collect())
}

/// Fixed point `lam_star`; the trivial point `[1.0]` when `b theta <= 1`.
#[pyfunction]
#[pyo3(signature = (b, theta, q_max = 16, tol = 1e-13))]
fn fixed_point(b: usize, theta: f64, q_max: usize, tol: f64) -> PyResult<Vec<f64>> {
    Ok(rgflow::fixed_point(b, theta, q_max, tol).map_err(to_py)?.lam.lam)
}

/// `e^{-v_star}` on the uniform grid.
#[pyfunction]
#[pyo3(signature = (b, theta, grid_size = 512))]
fn v_star_profile(b: usize, theta: f64, grid_size: usize) -> PyResult<Vec<f64>> {
    let fp = rgflow::fixed_point(b, theta, 16, observables::FP_TOL).map_err(to_py)?;
    let vs = rgflow::v_star(&fp.lam, b, theta, grid_size, 1e-10).map_err(to_py)?;
    Ok(vs.exp_neg_v.values)
}

#[pyfunction]
fn sigma2(config: &PyModelConfig) -> PyResult<f64> {
    observables::sigma2(&config.inner).map_err(to_py)
}

/// `kappa`, `t_star` and `tau` at `(alpha, beta)`.
#[pyfunction]
fn kappa_exponent(alpha: f64, config: &PyModelConfig) -> PyResult<HashMap<String, f64>> {
    let c = observables::kappa_exponent(alpha, &config.inner).map_err(to_py)?;
    Ok(HashMap::from([
        ("kappa".to_string(), c.kappa),
        ("t_star".to_string(), c.t_star),
        ("tau".to_string(), c.tau),
    ]))
}

#[pyfunction]
fn covariance_exact(config: &PyModelConfig, k: usize) -> PyResult<f64> {
    chain::covariance_exact(&config.inner, k).map_err(to_py)
}

/// `E(M_k^2)` for `k = 0..=n+1`.
#[pyfunction]
fn covariance_profile(config: &PyModelConfig) -> PyResult<Vec<f64>> {
    let p = chain::chain_profile(&config.inner, &chain::ChainOptions::default()).map_err(to_py)?;
    Ok(p.levels.iter().map(|l| l.em2).collect())
}

#[pyfunction]
fn charge_correlation_exact(config: &PyModelConfig, alpha: f64, k: usize) -> PyResult<f64> {
    chain::charge_correlation_exact(&config.inner, alpha, k).map_err(to_py)
}

#[pyfunction]
fn single_charge_exact(config: &PyModelConfig, alpha: f64) -> PyResult<f64> {
    chain::single_charge_exact(&config.inner, alpha).map_err(to_py)
}

/// Monte Carlo pair estimators: `(mean, std_error)` for covariance and charge.
#[pyfunction]
#[pyo3(signature = (config, k, alpha, n_samples, seed = 0))]
fn sample_pair(
    config: &PyModelConfig,
    k: usize,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<HashMap<String, (f64, f64)>> {
    let flow = rgflow::run_flow(&config.inner).map_err(to_py)?;
    let e = sampler::sample_pair(&config.inner, &flow, k, alpha, n_samples, seed).map_err(to_py)?;
    Ok(HashMap::from([
        ("covariance".to_string(), (e.covariance.mean, e.covariance.std_error)),
        ("charge".to_string(), (e.charge_re.mean, e.charge_re.std_error)),
    ]))
}

/// Leaf values of one exact field sample.
#[pyfunction]
#[pyo3(signature = (config, seed = 0))]
fn sample_field(config: &PyModelConfig, seed: u64) -> PyResult<Vec<f64>> {
    let flow = rgflow::run_flow(&config.inner).map_err(to_py)?;
    sampler::sample_field(&config.inner, &flow, seed).map_err(to_py)
}

/// Max entrywise error of the block-projector decomposition of the Green function.
#[pyfunction]
fn verify_decomposition(config: &PyModelConfig) -> PyResult<f64> {
    let p = model::build_profile(&config.inner).map_err(to_py)?;
    oracle::verify_decomposition(&p, config.inner.b, config.inner.n).map_err(to_py)
}

/// Exhaustive DG sums: `(covariance, charge)` for each `(x, y, alpha)`.
#[pyfunction]
fn gibbs_brute(
    config: &PyModelConfig,
    q_site: i64,
    observables: Vec<(usize, usize, f64)>,
) -> PyResult<Vec<(f64, f64)>> {
    let obs: Vec<oracle::PairObservable> =
        observables.into_iter().map(|(x, y, alpha)| oracle::PairObservable { x, y, alpha }).collect();
    let r = oracle::gibbs_brute(&config.inner, q_site, &obs).map_err(to_py)?;
    Ok(r.covariance.into_iter().zip(r.charge).collect())
}

#[pymodule]
fn hierflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_function(wrap_pyfunction!(beta_critical, m)?)?;
    m.add_function(wrap_pyfunction!(tau_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(c_bar, m)?)?;
    m.add_function(wrap_pyfunction!(rg_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_flow, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(v_star_profile, m)?)?;
    m.add_function(wrap_pyfunction!(sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(covariance_exact, m)?)?;
    m.add_function(wrap_pyfunction!(covariance_profile, m)?)?;
    m.add_function(wrap_pyfunction!(charge_correlation_exact, m)?)?;
    m.add_function(wrap_pyfunction!(single_charge_exact, m)?)?;
    m.add_function(wrap_pyfunction!(sample_pair, m)?)?;
    m.add_function(wrap_pyfunction!(sample_field, m)?)?;
    m.add_function(wrap_pyfunction!(verify_decomposition, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_brute, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
