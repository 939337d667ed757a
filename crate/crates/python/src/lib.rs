//! Python bindings for `stateaug_rrm`.
//!
//! Matrices cross the boundary as lists of row lists, vectors as lists of
//! floats. Configurations are JSON strings with the same schema the `rrm`
//! binary reads.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stateaug_rrm::baselines::{self, ItlinqConfig};
use stateaug_rrm::channel::{self, GeometryConfig, NetworkRealization};
use stateaug_rrm::config::RunConfig;
use stateaug_rrm::executor::{self, InitMode};
use stateaug_rrm::gnn::{PolicyNet, RegressorNet};
use stateaug_rrm::io::Checkpoint;
use stateaug_rrm::lagrangian::{self, DualVariables};
use stateaug_rrm::metrics;
use stateaug_rrm::rate::{self, ConstraintSlack};
use stateaug_rrm::trainer::Trainer;
use stateaug_rrm::RrmError;

fn py_err(e: RrmError) -> PyErr {
    match e {
        RrmError::Io { .. } => PyOSError::new_err(e.to_string()),
        RrmError::State(_) | RrmError::Numeric { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let m = rows.len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("gain matrix must be square"));
    }
    Array2::from_shape_vec((m, m), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_config(json: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match json {
        Some(text) => RunConfig::from_json(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// One network layout with its long-term gains.
#[pyclass(name = "Network", module = "stateaug_rrm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: NetworkRealization,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(long_term_gain: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = NetworkRealization::from_gains(matrix(long_term_gain)?).map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    /// Random layout; `density` is "fixed" or "variable".
    #[staticmethod]
    #[pyo3(signature = (users, seed, density = "fixed"))]
    fn generate(users: usize, seed: u64, density: &str) -> PyResult<Self> {
        let density = match density {
            "fixed" => channel::DensityMode::Fixed,
            "variable" => channel::DensityMode::Variable,
            other => return Err(PyValueError::new_err(format!("unknown density `{other}`"))),
        };
        let cfg = GeometryConfig {
            users,
            density,
            ..Default::default()
        };
        let inner = channel::generate_realization(&cfg, seed).map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    #[getter]
    fn users(&self) -> usize {
        self.inner.users()
    }

    #[getter]
    fn long_term_gain(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.long_term_gain)
    }

    #[getter]
    fn tx_positions(&self) -> Vec<[f64; 2]> {
        self.inner.tx_positions.clone()
    }

    #[getter]
    fn rx_positions(&self) -> Vec<[f64; 2]> {
        self.inner.rx_positions.clone()
    }

    /// Fast-fading gain matrices for `steps` time steps.
    #[pyo3(signature = (steps, seed, fading = true))]
    fn fading_sequence(&self, steps: usize, seed: u64, fading: bool) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let model = if fading { channel::FadingModel::Rayleigh } else { channel::FadingModel::None };
        let states = channel::sample_fading_sequence(&self.inner, steps, model, seed).map_err(py_err)?;
        Ok(states.iter().map(|s| rows(&s.gain)).collect())
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("realization serializes")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyNetwork { inner })
    }

    fn __repr__(&self) -> String {
        format!("Network(users={}, seed={})", self.inner.users(), self.inner.seed)
    }
}

/// Per-user rates `log2(1 + SINR)` for powers `p`.
#[pyfunction]
fn rates(gain: Vec<Vec<f64>>, p: Vec<f64>, noise: f64) -> PyResult<Vec<f64>> {
    Ok(rate::rates(&matrix(gain)?, &p, noise).map_err(py_err)?.0)
}

#[pyfunction]
fn dbm_to_watts(dbm: f64) -> f64 {
    rate::dbm_to_watts(dbm)
}

/// Projected dual descent step `max(mu - eta * slack, 0)`.
#[pyfunction]
fn dual_update(mu: Vec<f64>, slack: Vec<f64>, eta: f64) -> PyResult<Vec<f64>> {
    let mu = DualVariables::new(mu).map_err(py_err)?;
    Ok(lagrangian::dual_update(&mu, &ConstraintSlack(slack), eta).map_err(py_err)?.into_inner())
}

/// `(mean, min, p5)` of a pool of rates.
#[pyfunction]
fn rate_metrics(pool: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let m = metrics::rate_metrics(&pool).map_err(py_err)?;
    Ok((m.mean, m.min, m.p5))
}

#[pyfunction]
fn full_reuse(m: usize, p_max: f64) -> PyResult<Vec<f64>> {
    Ok(baselines::full_reuse(m, p_max).map_err(py_err)?.0)
}

#[pyfunction]
#[pyo3(signature = (gain, noise, p_max, margin_db = 25.0, eta = 0.7))]
fn itlinq_schedule(gain: Vec<Vec<f64>>, noise: f64, p_max: f64, margin_db: f64, eta: f64) -> PyResult<Vec<f64>> {
    let cfg = ItlinqConfig {
        margin_db,
        eta,
        ..Default::default()
    };
    Ok(baselines::itlinq_schedule(&matrix(gain)?, noise, p_max, &cfg).map_err(py_err)?.0)
}

/// A trained policy and dual regressor with their run configuration.
#[pyclass(name = "Model", module = "stateaug_rrm", frozen)]
struct PyModel {
    config: RunConfig,
    policy: PolicyNet,
    regressor: Option<RegressorNet>,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint written by `rrm train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(py_err)?;
        Ok(PyModel {
            config: ck.config,
            policy: ck.trainer.policy,
            regressor: ck.regressor,
        })
    }

    #[getter]
    fn config(&self) -> String {
        self.config.to_json()
    }

    /// Transmit powers in watts for gains `gain` and duals `mu`.
    fn policy(&self, gain: Vec<Vec<f64>>, mu: Vec<f64>) -> PyResult<Vec<f64>> {
        self.policy.forward(&matrix(gain)?, &mu).map_err(py_err)
    }

    /// Predicted duals for long-term gains.
    fn regressor(&self, long_term_gain: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let reg = self.regressor.as_ref().ok_or_else(|| PyRuntimeError::new_err("model has no regressor"))?;
        reg.forward(&matrix(long_term_gain)?).map_err(py_err)
    }

    /// Runs the policy online. Returns a dict with `powers`, `rates`,
    /// `duals` and `ergodic_rates`.
    #[pyo3(signature = (network, seed, steps = None, init = "regressor"))]
    fn execute<'py>(
        &self,
        py: Python<'py>,
        network: &PyNetwork,
        seed: u64,
        steps: Option<usize>,
        init: &str,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let mut cfg = self.config.execution.clone();
        cfg.init = match init {
            "regressor" => InitMode::Regressor,
            "zeros" => InitMode::Zeros,
            "uniform" => InitMode::Uniform,
            other => return Err(PyValueError::new_err(format!("unknown init `{other}`"))),
        };
        if let Some(s) = steps {
            cfg.steps = s;
        }
        let problem = self.config.problem();
        let trace = py
            .detach(|| {
                executor::execute(&self.policy, self.regressor.as_ref(), &network.inner, &cfg, &problem, self.config.fading, seed)
            })
            .map_err(py_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("powers", trace.powers.iter().map(|p| p.0.clone()).collect::<Vec<_>>())?;
        out.set_item("rates", trace.rates.iter().map(|r| r.0.clone()).collect::<Vec<_>>())?;
        out.set_item("duals", trace.duals.iter().map(|d| d.to_vec()).collect::<Vec<_>>())?;
        out.set_item("ergodic_rates", trace.ergodic_rates().map_err(py_err)?.0)?;
        Ok(out)
    }
}

/// Trains on `networks` with a JSON run configuration.
#[pyfunction]
#[pyo3(signature = (networks, config = None))]
fn train(py: Python<'_>, networks: Vec<PyRef<'_, PyNetwork>>, config: Option<&str>) -> PyResult<PyModel> {
    let cfg = parse_config(config)?;
    let data: Vec<NetworkRealization> = networks.iter().map(|n| n.inner.clone()).collect();
    let out = py
        .detach(|| {
            Trainer::new(cfg.train.clone(), &cfg.gnn, cfg.problem(), cfg.fading, &data, cfg.seed)?.run(&cfg.gnn)
        })
        .map_err(py_err)?;
    Ok(PyModel {
        config: cfg,
        policy: out.policy,
        regressor: Some(out.regressor),
    })
}

#[pymodule]
#[pyo3(name = "stateaug_rrm")]
fn stateaug_rrm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(dbm_to_watts, m)?)?;
    m.add_function(wrap_pyfunction!(dual_update, m)?)?;
    m.add_function(wrap_pyfunction!(rate_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(full_reuse, m)?)?;
    m.add_function(wrap_pyfunction!(itlinq_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
