//! Python bindings: config parsing, single runs of the particle and PDE
//! models, and the limit-theorem experiments (summaries come back as dicts).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use chemobranch::analysis::{coupling_experiment, measure_convergence_experiment, wilson_interval, yule_bound_check};
use chemobranch::config::ExperimentConfig;
use chemobranch::macroscopic::solve_pks;
use chemobranch::micro::{simulate_microscopic, Discretization, Recording};
use chemobranch::noise::NoiseUniverse;
use chemobranch::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::ConfigInvalid(_) | Error::InvalidParams(_) | Error::InvalidGrid(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Parsed experiment config (flat `key = value` text).
#[pyclass(frozen, module = "chemobranch")]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        ExperimentConfig::parse(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    /// SHA-256 of the canonical config text.
    #[getter]
    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[getter]
    fn n0(&self) -> u32 {
        self.inner.run.n0
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.params.dim
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.params.dt
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.params.steps()
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={}..)", &self.inner.hash()[..12])
    }
}

#[pyclass(frozen, get_all, module = "chemobranch")]
struct MicroRun {
    /// Live cells at every step.
    live_counts: Vec<usize>,
    /// Number of birth/death events.
    events: usize,
    /// Positions of the cells alive at the horizon.
    final_positions: Vec<Vec<f64>>,
    /// Field at the horizon on the grid nodes (empty when there is no field).
    final_field: Vec<f64>,
}

#[pyclass(frozen, get_all, module = "chemobranch")]
struct MacroRun {
    times: Vec<f64>,
    masses: Vec<f64>,
    final_density: Vec<f64>,
    final_field: Vec<f64>,
    max_cfl: f64,
    used_semi_lagrangian: bool,
}

/// One run of the individual-based model.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn simulate_micro(py: Python<'_>, config: &Config, seed: Option<u64>) -> PyResult<MicroRun> {
    let cfg = &config.inner;
    let seed = seed.unwrap_or(cfg.run.seed);
    let traj = py
        .detach(|| {
            let universe = NoiseUniverse::new(seed, cfg.params.dim);
            simulate_microscopic(&cfg.params, cfg.run.n0, universe, Recording::default())
        })
        .map_err(to_py)?;
    let dim = traj.dim;
    Ok(MicroRun {
        live_counts: traj.live_counts(),
        events: traj.events.len(),
        final_positions: traj
            .snapshots
            .last()
            .map(|s| s.cells.iter().map(|(_, p)| p.0[..dim].to_vec()).collect())
            .unwrap_or_default(),
        final_field: traj.fields.last().map(|f| f.values.clone()).unwrap_or_default(),
    })
}

/// Deterministic density/field solve.
#[pyfunction]
fn solve_macro(py: Python<'_>, config: &Config) -> PyResult<MacroRun> {
    let cfg = &config.inner;
    let sol = py
        .detach(|| {
            let p = &cfg.params;
            let disc = Discretization::new(p)?;
            let grid = disc.spectral.grid;
            let p0 = p.mu0.density(&grid, &disc.kernel)?;
            solve_pks(p, &disc, p0, p.rho0.sample(&grid), cfg.pks)
        })
        .map_err(to_py)?;
    Ok(MacroRun {
        times: sol.p.iter().map(|f| f.time).collect(),
        masses: sol.masses(),
        final_density: sol.p.last().map(|f| f.values.clone()).unwrap_or_default(),
        final_field: sol.rho.last().map(|f| f.values.clone()).unwrap_or_default(),
        max_cfl: sol.max_cfl,
        used_semi_lagrangian: sol.used_semi_lagrangian,
    })
}

fn summary_dict<'py>(py: Python<'py>, json: String) -> PyResult<Bound<'py, PyDict>> {
    py.import("json")?.call_method1("loads", (json,))?.cast_into::<PyDict>().map_err(Into::into)
}

/// Hydrodynamic-limit experiment over `run.n0_list`; returns the summary.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn converge<'py>(py: Python<'py>, config: &Config, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let u = NoiseUniverse::new(seed.unwrap_or(cfg.run.seed), cfg.params.dim);
    let r = py
        .detach(|| measure_convergence_experiment(&cfg.params, &cfg.run.n0_list, cfg.run.replicas, &u))
        .map_err(to_py)?;
    summary_dict(py, r.summary_json())
}

/// Pathwise coupling experiment over `run.n0_list` and `run.epsilon_list`.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn couple<'py>(py: Python<'py>, config: &Config, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let u = NoiseUniverse::new(seed.unwrap_or(cfg.run.seed), cfg.params.dim);
    let r = py
        .detach(|| coupling_experiment(&cfg.params, &cfg.run.n0_list, cfg.run.replicas, &cfg.run.epsilon_list, &u))
        .map_err(to_py)?;
    summary_dict(py, r.summary_json())
}

/// Yule bound on the population size with `run.n0` founders.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn yule<'py>(py: Python<'py>, config: &Config, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let u = NoiseUniverse::new(seed.unwrap_or(cfg.run.seed), cfg.params.dim);
    let r = py
        .detach(|| yule_bound_check(&cfg.params, cfg.run.n0, cfg.run.replicas, &u))
        .map_err(to_py)?;
    summary_dict(py, r.summary_json())
}

/// Wilson 95% interval: (estimate, lo, hi).
#[pyfunction(name = "wilson_interval")]
fn py_wilson_interval(successes: usize, n: usize) -> (f64, f64, f64) {
    wilson_interval(successes, n)
}

#[pymodule(name = "chemobranch")]
fn chemobranch_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<MicroRun>()?;
    m.add_class::<MacroRun>()?;
    m.add_function(wrap_pyfunction!(simulate_micro, m)?)?;
    m.add_function(wrap_pyfunction!(solve_macro, m)?)?;
    m.add_function(wrap_pyfunction!(converge, m)?)?;
    m.add_function(wrap_pyfunction!(couple, m)?)?;
    m.add_function(wrap_pyfunction!(yule, m)?)?;
    m.add_function(wrap_pyfunction!(py_wilson_interval, m)?)?;
    Ok(())
}
