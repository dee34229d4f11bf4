//! Python bindings for the `jumpobs` solver.
//!
//! Exposes the two models' parameter sets, the value-iteration and
//! fixed-point solvers, the simulator and a few kernels. Errors surface as
//! `ValueError` (bad input) or `RuntimeError` (solver failure).

use jumpobs::engine::{value_iteration, ObservationMdp, StagePolicy, ValueTable};
use jumpobs::gated_queue::{self, ObservationCost, QueueParams};
use jumpobs::inventory::{self, InventoryModel, InventoryParams};
use jumpobs::optimize::SearchConfig;
use jumpobs::{kernels, simulator};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: jumpobs::Error) -> PyErr {
    match e {
        jumpobs::Error::NotConverged { .. } | jumpobs::Error::StageOptimizer { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Parameters of the inventory model.
#[pyclass(name = "InventoryParams", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyInventoryParams {
    theta: i64,
    mu: f64,
    nu: f64,
    kappa: f64,
    beta: f64,
    a_max: f64,
    t_min: f64,
    t_max: f64,
    eps_kernel: f64,
    eps_vi: f64,
}

impl From<&PyInventoryParams> for InventoryParams {
    fn from(p: &PyInventoryParams) -> Self {
        InventoryParams {
            theta: p.theta,
            mu: p.mu,
            nu: p.nu,
            kappa: p.kappa,
            beta: p.beta,
            a_max: p.a_max,
            t_min: p.t_min,
            t_max: p.t_max,
            eps_kernel: p.eps_kernel,
            eps_vi: p.eps_vi,
        }
    }
}

#[pymethods]
impl PyInventoryParams {
    /// Defaults are the reference instance.
    #[new]
    #[pyo3(signature = (theta=8, mu=2.0, nu=2.0, kappa=5.0, beta=0.8, a_max=5.0, t_min=2.0, t_max=12.0, eps_kernel=kernels::DEFAULT_KERNEL_EPS, eps_vi=1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        theta: i64,
        mu: f64,
        nu: f64,
        kappa: f64,
        beta: f64,
        a_max: f64,
        t_min: f64,
        t_max: f64,
        eps_kernel: f64,
        eps_vi: f64,
    ) -> PyResult<Self> {
        let p = PyInventoryParams {
            theta,
            mu,
            nu,
            kappa,
            beta,
            a_max,
            t_min,
            t_max,
            eps_kernel,
            eps_vi,
        };
        InventoryParams::from(&p).validate().map_err(to_py)?;
        Ok(p)
    }

    /// `E[(X(t) − θ)²]` from `x` under a constant rate.
    fn deviation_cost(&self, x: i64, a: f64, t: f64) -> f64 {
        inventory::deviation_cost(x, t, &inventory::RateSchedule::constant(a, t), &self.into())
    }

    fn __repr__(&self) -> String {
        format!(
            "InventoryParams(theta={}, mu={}, nu={}, kappa={}, beta={}, a_max={}, t_min={}, t_max={})",
            self.theta, self.mu, self.nu, self.kappa, self.beta, self.a_max, self.t_min, self.t_max
        )
    }
}

/// Converged inventory values and policy.
#[pyclass(name = "InventorySolution")]
struct PyInventorySolution {
    params: InventoryParams,
    values: ValueTable,
    policy: StagePolicy,
}

#[pymethods]
impl PyInventorySolution {
    /// `(lo, hi)` of the state window.
    #[getter]
    fn window(&self) -> (i64, i64) {
        (self.values.window.lo, self.values.window.hi)
    }

    #[getter]
    fn states(&self) -> Vec<i64> {
        self.values.window.states().collect()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.values.values.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<f64> {
        self.policy.choices.iter().map(|c| c.action).collect()
    }

    #[getter]
    fn intervals(&self) -> Vec<f64> {
        self.policy.choices.iter().map(|c| c.interval).collect()
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.values.residual_history.clone()
    }

    fn value(&self, x: i64) -> PyResult<f64> {
        self.values
            .get(x)
            .ok_or_else(|| PyValueError::new_err(format!("state {x} outside the window")))
    }

    /// `(a*, T*)` at `x`.
    fn choice(&self, x: i64) -> PyResult<(f64, f64)> {
        self.policy
            .get(x)
            .map(|c| (c.action, c.interval))
            .ok_or_else(|| PyValueError::new_err(format!("state {x} outside the window")))
    }

    /// One path: `(events, observations, discounted_cost)`, with events as
    /// `(time, kind, state)` and observations as `(time, state, a, T)`.
    #[allow(clippy::type_complexity)]
    fn simulate(
        &self,
        x0: i64,
        horizon: f64,
        seed: u64,
    ) -> PyResult<(Vec<(f64, &'static str, i64)>, Vec<(f64, i64, f64, f64)>, f64)> {
        let tr = simulator::simulate_inventory(x0, &self.policy, horizon, seed, &self.params).map_err(to_py)?;
        Ok((
            tr.events.iter().map(|e| (e.time, e.kind.as_str(), e.state)).collect(),
            tr.observations.iter().map(|o| (o.time, o.state, o.action, o.interval)).collect(),
            tr.discounted_cost,
        ))
    }

    /// `(mean, std_error, truncation_bound)` of discounted rollout costs.
    #[pyo3(signature = (x0, n_rollouts=10_000, horizon=60.0, seed=0))]
    fn estimate(&self, py: Python<'_>, x0: i64, n_rollouts: usize, horizon: f64, seed: u64) -> PyResult<(f64, f64, f64)> {
        let (policy, params) = (&self.policy, &self.params);
        let est = py
            .detach(|| simulator::estimate_value(x0, policy, n_rollouts, horizon, seed, params))
            .map_err(to_py)?;
        Ok((est.mean, est.std_error, est.truncation_bound))
    }
}

/// Value iteration on `[θ − margin, θ + margin]`.
#[pyfunction]
#[pyo3(signature = (params, margin=None, max_iter=500, grid=41))]
fn solve_inventory(
    py: Python<'_>,
    params: &PyInventoryParams,
    margin: Option<i64>,
    max_iter: usize,
    grid: usize,
) -> PyResult<PyInventorySolution> {
    let p = InventoryParams::from(params);
    let search = SearchConfig {
        grid_a: grid,
        grid_t: grid,
        ..SearchConfig::default()
    };
    let (values, policy) = py
        .detach(|| {
            let model = InventoryModel::new(p.clone(), margin, search)?;
            let v0 = p.initial_values(model.window());
            value_iteration(&model, v0, p.eps_vi, max_iter)
        })
        .map_err(to_py)?;
    Ok(PyInventorySolution { params: p, values, policy })
}

/// Parameters of the gated queue; `g` is `"inverse"` (`κ/T`) or `"linear"`
/// (`−κT`).
#[pyclass(name = "QueueParams", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyQueueParams {
    lambda_: f64,
    eta: f64,
    beta: f64,
    t_min: f64,
    t_max: f64,
    g: String,
    kappa: f64,
    n_trunc: Option<u64>,
}

impl TryFrom<&PyQueueParams> for QueueParams {
    type Error = PyErr;

    fn try_from(p: &PyQueueParams) -> PyResult<Self> {
        let g = match p.g.as_str() {
            "inverse" => ObservationCost::Inverse { kappa: p.kappa },
            "linear" => ObservationCost::Linear { kappa: p.kappa },
            other => return Err(PyValueError::new_err(format!("g must be 'inverse' or 'linear', got '{other}'"))),
        };
        let q = QueueParams {
            lambda: p.lambda_,
            eta: p.eta,
            beta: p.beta,
            t_min: p.t_min,
            t_max: p.t_max,
            g,
            n_trunc: p.n_trunc,
            tail_eps: gated_queue::DEFAULT_TAIL_EPS,
        };
        q.validate().map_err(to_py)?;
        Ok(q)
    }
}

#[pymethods]
impl PyQueueParams {
    #[new]
    #[pyo3(signature = (lambda_=1.0, eta=1.0, beta=0.8, t_min=1.0, t_max=6.0, g="inverse".to_string(), kappa=1.0, n_trunc=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(lambda_: f64, eta: f64, beta: f64, t_min: f64, t_max: f64, g: String, kappa: f64, n_trunc: Option<u64>) -> PyResult<Self> {
        let p = PyQueueParams {
            lambda_,
            eta,
            beta,
            t_min,
            t_max,
            g,
            kappa,
            n_trunc,
        };
        QueueParams::try_from(&p)?;
        Ok(p)
    }

    /// `λT²/2 + (x² + x)/(2a)`.
    fn expected_cycle_waiting_cost(&self, x: u64, a: f64, t: f64) -> PyResult<f64> {
        gated_queue::expected_cycle_waiting_cost(x, a, t, &QueueParams::try_from(self)?).map_err(to_py)
    }

    /// `(waiting_sum, arrivals)` of one simulated cycle.
    fn simulate_cycle(&self, x: u64, a: f64, t: f64, seed: u64) -> PyResult<(f64, u64)> {
        simulator::simulate_gated_cycle(x, a, t, seed, &QueueParams::try_from(self)?).map_err(to_py)
    }
}

/// `(W*, T*, n_trunc)` of the scalar fixed point; `v(x) = r*(x) + W*`.
#[pyfunction]
#[pyo3(signature = (params, eps=1e-12, max_iter=10_000))]
fn solve_gated_queue(params: &PyQueueParams, eps: f64, max_iter: usize) -> PyResult<(f64, f64, u64)> {
    let q = QueueParams::try_from(params)?;
    let sol = gated_queue::solve_epoch_fixed_point(&q, eps, max_iter).map_err(to_py)?;
    Ok((sol.w_star, sol.t_star, sol.n_trunc))
}

#[pyfunction]
fn optimal_speed(x: u64, eta: f64) -> f64 {
    gated_queue::optimal_speed(x, eta)
}

#[pyfunction]
fn optimal_speed_cost(x: u64, eta: f64) -> f64 {
    gated_queue::optimal_speed_cost(x, eta)
}

#[pyfunction]
fn poisson_pmf(k: u64, mean: f64) -> PyResult<f64> {
    kernels::poisson_pmf(k, mean).map_err(to_py)
}

/// `(first_state, probabilities)` of the birth–death row from `x`.
#[pyfunction]
#[pyo3(signature = (x, arrival_mass, departure_mass, eps=kernels::DEFAULT_KERNEL_EPS))]
fn kernel_row(x: i64, arrival_mass: f64, departure_mass: f64, eps: f64) -> PyResult<(i64, Vec<f64>)> {
    let row = kernels::kernel_row(x, arrival_mass, departure_mass, eps).map_err(to_py)?;
    Ok((row.first, row.probs))
}

#[pymodule]
fn jumpobs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInventoryParams>()?;
    m.add_class::<PyInventorySolution>()?;
    m.add_class::<PyQueueParams>()?;
    m.add_function(wrap_pyfunction!(solve_inventory, m)?)?;
    m.add_function(wrap_pyfunction!(solve_gated_queue, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_speed, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_speed_cost, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_row, m)?)?;
    Ok(())
}
