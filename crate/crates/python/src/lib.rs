//! Python view of the solver, the flow and the experiments. Vectors cross
//! the boundary as lists of floats; configs as JSON strings.

use gatemod::boids::FlockConfig;
use gatemod::gateflow::{self, FlowConfig};
use gatemod::objective::total_objective;
use gatemod::verify::{self, Scope};
use gatemod::{CostVector, Integrator, ObjectiveInstance, PrimitiveMatrix, SimplexVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: gatemod::Error) -> PyErr {
    use gatemod::Error as E;
    match e {
        E::Numerical { .. } | E::NonConvergence { .. } | E::Domain(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `F(w) − εH(w)` over the simplex, with primitives given row-major.
#[pyclass(name = "Instance", frozen)]
struct PyInstance {
    inner: ObjectiveInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (rows, epsilon, cost=None))]
    fn new(rows: Vec<Vec<f64>>, epsilon: f64, cost: Option<Vec<f64>>) -> PyResult<Self> {
        let pm = PrimitiveMatrix::from_rows(&rows).map_err(to_py)?;
        let cost = match cost {
            Some(c) => CostVector::new(c).map_err(to_py)?,
            None => CostVector::zeros(pm.d_u()),
        };
        let inner = ObjectiveInstance::new(pm, cost, epsilon).map_err(to_py)?;
        Ok(PyInstance { inner })
    }

    #[getter]
    fn n_pi(&self) -> usize {
        self.inner.n_pi()
    }

    #[getter]
    fn d_u(&self) -> usize {
        self.inner.d_u()
    }

    fn objective(&self, w: Vec<f64>) -> PyResult<f64> {
        total_objective(&self.inner, &w).map_err(to_py)
    }

    fn gradient(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        gatemod::objective::grad_f(&self.inner, &w).map_err(to_py)
    }

    /// Returns `(weights, residual, iterations)`.
    fn solve(&self) -> PyResult<(Vec<f64>, f64, usize)> {
        let eq = gateflow::solve_equilibrium(&self.inner).map_err(to_py)?;
        Ok((eq.weights.into_vec(), eq.residual, eq.iterations))
    }

    /// Integrates the flow; returns `(times, weights, energy)`.
    #[pyo3(signature = (w0, tau=1.0, horizon=10.0, dt=None, euler=false))]
    fn flow(
        &self,
        w0: Vec<f64>,
        tau: f64,
        horizon: f64,
        dt: Option<f64>,
        euler: bool,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
        let cfg = FlowConfig {
            tau,
            dt: dt.unwrap_or(tau / 100.0),
            horizon,
            integrator: if euler { Integrator::Euler } else { Integrator::Rk4 },
            ..FlowConfig::default()
        };
        let w0 = SimplexVector::new(w0).map_err(to_py)?;
        let traj = gateflow::integrate(&self.inner, &cfg, &w0).map_err(to_py)?;
        let weights = traj.weights.into_iter().map(SimplexVector::into_vec).collect();
        Ok((traj.times, weights, traj.energy))
    }
}

#[pyfunction]
fn softmax(x: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(gatemod::softmax(&x).map_err(to_py)?.into_vec())
}

/// Runs a flock from a JSON config (missing keys take defaults) and
/// returns the polarization per step.
#[pyfunction]
#[pyo3(signature = (config_json="{}"))]
fn run_boids(config_json: &str) -> PyResult<Vec<f64>> {
    let cfg: FlockConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let run = gatemod::boids::run_flock(&cfg).map_err(to_py)?;
    Ok(run.polarization)
}

/// Runs a verification scope; returns `(name, passed, measured, bound)` rows.
#[pyfunction]
#[pyo3(signature = (scope="core", seed=0))]
fn run_verify(scope: &str, seed: u64) -> PyResult<Vec<(String, bool, f64, f64)>> {
    let scope: Scope = scope.parse().map_err(to_py)?;
    let rows = verify::run(scope, seed).map_err(to_py)?;
    Ok(rows.into_iter().map(|c| (c.name, c.passed, c.measured, c.bound)).collect())
}

#[pymodule]
fn gatemod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(run_boids, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
