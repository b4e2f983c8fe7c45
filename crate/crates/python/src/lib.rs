//! Python bindings: a thin scripting layer over the core toolkit. The
//! artifact layout on disk is exactly the CLI's, so sessions built from
//! either side are interchangeable.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::Path;

use rb3dvar_core::assimilate::solve_truth;
use rb3dvar_core::config::ExperimentConfig;
use rb3dvar_core::estimate::{
    estimate_parameters, CostFunctional, CostKind, EstimateOptions, Solver,
};
use rb3dvar_core::pipeline::{cmd_offline, generated_data, load_offline, Offline};
use rb3dvar_core::rb::{error_bounds, residual_norms, solve_rb};
use rb3dvar_core::stability::{
    alpha_a_lower_bound, build_response_basis, delta_true, eta_ratios, kappa_t,
};

fn to_py_err(e: rb3dvar_core::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load_config(config: Option<&str>) -> PyResult<ExperimentConfig> {
    match config {
        Some(path) => ExperimentConfig::load(Path::new(path)).map_err(to_py_err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Run the offline stage: build the model, reduced spaces and sensor
/// selection, and persist every artifact under `out`.
#[pyfunction]
#[pyo3(signature = (out, config=None))]
fn offline<'py>(py: Python<'py>, out: &str, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(config)?;
    let summary = cmd_offline(&cfg, Path::new(out)).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("n", summary.n)?;
    d.set_item("m_u", summary.m_u)?;
    d.set_item("n_sensors", summary.n_sensors)?;
    d.set_item("dim_state", summary.dim_state)?;
    d.set_item("dim_adjoint", summary.dim_adjoint)?;
    d.set_item("dim_merged", summary.dim_merged)?;
    d.set_item("reached_beta0", summary.reached_beta0)?;
    Ok(d)
}

/// An offline build loaded back into memory, ready for online queries.
#[pyclass]
struct Session {
    cfg: ExperimentConfig,
    off: Offline,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (out, config=None))]
    fn new(out: &str, config: Option<&str>) -> PyResult<Self> {
        let cfg = load_config(config)?;
        let off = load_offline(&cfg, Path::new(out)).map_err(to_py_err)?;
        Ok(Session { cfg, off })
    }

    /// Dimensions of the loaded spaces.
    fn dims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("n", self.off.model.n())?;
        d.set_item("m_u", self.off.model.m_u())?;
        d.set_item("n_sensors", self.off.ms.l)?;
        d.set_item("n_reduced", self.off.spaces.n_r())?;
        Ok(d)
    }

    /// One assimilation solve against the synthetic noisy data. With the
    /// reduced solver the result carries certified error bounds.
    #[pyo3(signature = (mu, lam=100.0, solver="rb"))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        mu: (f64, f64),
        lam: f64,
        solver: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let model = &self.off.model;
        let mu = vec![mu.0, mu.1];
        let (_, noisy) = generated_data(model, &self.off.ms, self.cfg.run.sigma, self.cfg.run.seed)
            .map_err(to_py_err)?;
        let d = PyDict::new(py);
        match solver {
            "truth" => {
                let sol = solve_truth(model, &self.off.ms, &mu, lam, &noisy).map_err(to_py_err)?;
                let u: Vec<f64> = (&model.u_start + &sol.u_star).iter().copied().collect();
                d.set_item("u", u)?;
                d.set_item("cost", sol.cost)?;
                d.set_item("misfit", sol.misfit_norm())?;
            }
            "rb" => {
                let spaces = &self.off.spaces;
                let sol = solve_rb(spaces, &mu, lam, &noisy).map_err(to_py_err)?;
                let norms = residual_norms(spaces, &sol).map_err(to_py_err)?;
                let alpha = model.coercivity_lower_bound(&mu).map_err(to_py_err)?;
                let b = error_bounds(&norms, alpha, model.gamma_b, lam).map_err(to_py_err)?;
                let u: Vec<f64> =
                    (&model.u_start + sol.lift_correction(spaces)).iter().copied().collect();
                d.set_item("u", u)?;
                d.set_item("cost", sol.cost)?;
                d.set_item("misfit", sol.misfit_norm())?;
                let bd = PyDict::new(py);
                bd.set_item("delta_u", b.delta_u)?;
                bd.set_item("delta_y", b.delta_y)?;
                bd.set_item("delta_d", b.delta_d)?;
                bd.set_item("delta_p", b.delta_p)?;
                d.set_item("bounds", bd)?;
                let rd = PyDict::new(py);
                rd.set_item("r_u", norms.r_u)?;
                rd.set_item("r_p", norms.r_p)?;
                rd.set_item("r_y", norms.r_y)?;
                d.set_item("residuals", rd)?;
            }
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown solver {other:?}; expected \"truth\" or \"rb\""
                )))
            }
        }
        Ok(d)
    }

    /// Stability constants of the penalized saddle problem at (mu, lam).
    #[pyo3(signature = (mu, lam=100.0))]
    fn stability<'py>(
        &self,
        py: Python<'py>,
        mu: (f64, f64),
        lam: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mu = vec![mu.0, mu.1];
        let rb = build_response_basis(&self.off.model, &self.off.ms, &mu).map_err(to_py_err)?;
        let kappa = kappa_t(&rb).map_err(to_py_err)?;
        let (eta_lo, eta_hi) = eta_ratios(&rb).map_err(to_py_err)?;
        let alpha = alpha_a_lower_bound(lam, eta_lo, eta_hi, kappa).map_err(to_py_err)?;
        let delta = delta_true(&rb, lam).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("kappa", kappa)?;
        d.set_item("eta_low", eta_lo)?;
        d.set_item("eta_high", eta_hi)?;
        d.set_item("alpha_lb", alpha)?;
        d.set_item("delta", delta)?;
        Ok(d)
    }

    /// Parameter estimation on noise-free synthetic data.
    #[pyo3(signature = (cost="j3", lam=1000.0, solver="rb"))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        cost: &str,
        lam: f64,
        solver: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let model = &self.off.model;
        let kind = CostKind::parse(cost).map_err(to_py_err)?;
        let (clean, _) = generated_data(model, &self.off.ms, self.cfg.run.sigma, self.cfg.run.seed)
            .map_err(to_py_err)?;
        let inner = match solver {
            "truth" => Solver::Truth { model, ms: &self.off.ms },
            "rb" => Solver::Reduced { spaces: &self.off.spaces },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown solver {other:?}; expected \"truth\" or \"rb\""
                )))
            }
        };
        let rep = estimate_parameters(
            model,
            &CostFunctional { kind, lambda: lam, solver: inner, data: clean },
            &EstimateOptions::default(),
        )
        .map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("mu_hat", (rep.mu_hat[0], rep.mu_hat[1]))?;
        d.set_item("log_distance", rep.log_distance_to_true)?;
        d.set_item("value", rep.value)?;
        d.set_item("evals", rep.evals)?;
        d.set_item("converged", rep.converged)?;
        d.set_item("u_error", rep.u_error)?;
        d.set_item("y_error", rep.y_error)?;
        Ok(d)
    }
}

#[pymodule]
fn rb3dvar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(offline, m)?)?;
    m.add_class::<Session>()?;
    Ok(())
}
