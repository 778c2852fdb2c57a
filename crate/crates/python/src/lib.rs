//! Python module `lhpf`: scenario generation, closed-loop simulation and loss utilities.

use std::path::PathBuf;

use lhpf_core::ablation::consistency_metric;
use lhpf_core::checkpoint::load_checkpoint;
use lhpf_core::history::{HistoryPool as CorePool, PlanningEmbedding};
use lhpf_core::losses::comfort::{comfort_loss as core_comfort_loss, ComfortLimits, TrajPoint};
use lhpf_core::model::{ModelConfig, Planner as CorePlanner};
use lhpf_core::scenario::{generate_scenario as core_generate, ScenarioKind, ScenarioWorld, DT};
use lhpf_core::sim::episode::{run_episode, BaselinePlanner, ExpertReplay, HistoryPlanner, StepPlan};
use lhpf_core::sim::{EgoPlanner, EpisodeConfig, SimReport};
use lhpf_core::LhpfError;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: LhpfError) -> PyErr {
    match e {
        LhpfError::Io { .. } => PyIOError::new_err(e.to_string()),
        LhpfError::InvalidArgument(_)
        | LhpfError::OutOfRange(_)
        | LhpfError::Parse { .. }
        | LhpfError::Ordering(_)
        | LhpfError::InsufficientHorizon { .. }
        | LhpfError::UndefinedMetric(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_world(json: &str) -> PyResult<ScenarioWorld> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("scenario json: {e}")))
}

fn points(traj: Vec<Vec<f64>>) -> PyResult<Vec<TrajPoint>> {
    traj.into_iter()
        .map(|p| <[f64; 6]>::try_from(p.as_slice()).map_err(|_| PyValueError::new_err("each point needs 6 values: x, y, cos, sin, vx, vy")))
        .collect()
}

fn report_dict<'py>(py: Python<'py>, r: &SimReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let m = &r.metrics;
    d.set_item("scenario", &r.scenario)?;
    d.set_item("steps", r.steps)?;
    d.set_item("failed", r.failed)?;
    d.set_item("error", r.error.clone())?;
    d.set_item("at_fault_collision_free", m.at_fault_collision_free)?;
    d.set_item("drivable_compliance", m.drivable_compliance)?;
    d.set_item("progress_ratio", m.progress_ratio)?;
    d.set_item("comfort_ok", m.comfort_ok)?;
    d.set_item("speed_compliance", m.speed_compliance)?;
    d.set_item("direction_compliance", m.direction_compliance)?;
    d.set_item("composite_score", m.composite_score)?;
    d.set_item("consistency", r.consistency)?;
    Ok(d)
}

fn episode_config(mode: &str) -> PyResult<EpisodeConfig> {
    Ok(EpisodeConfig { mode: mode.parse().map_err(to_py)?, ..EpisodeConfig::default() })
}

#[pyfunction]
fn scenario_kinds() -> Vec<&'static str> {
    ScenarioKind::ALL.iter().map(|k| k.name()).collect()
}

/// Generates one scenario and returns it as JSON.
#[pyfunction]
fn generate_scenario(kind: &str, seed: u64) -> PyResult<String> {
    let w = core_generate(kind.parse().map_err(to_py)?, seed).map_err(to_py)?;
    serde_json::to_string(&w).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Comfort hinge loss of a `[T, 6]` trajectory under the default limits.
#[pyfunction]
#[pyo3(signature = (trajectory, dt = DT))]
fn comfort_loss(trajectory: Vec<Vec<f64>>, dt: f64) -> PyResult<f64> {
    core_comfort_loss(&points(trajectory)?, dt, &ComfortLimits::default()).map_err(to_py)
}

/// Mean overlap distance between successive world-frame plans.
#[pyfunction]
fn plan_consistency(plans: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let steps = plans
        .into_iter()
        .enumerate()
        .map(|(frame, p)| Ok(StepPlan { frame, world: points(p)?, selected: None, scores: Vec::new() }))
        .collect::<PyResult<Vec<_>>>()?;
    consistency_metric(&steps).map_err(to_py)
}

/// Replays the logged expert in the simulator.
#[pyfunction]
#[pyo3(signature = (scenario_json, mode = "reactive"))]
fn simulate_expert<'py>(py: Python<'py>, scenario_json: &str, mode: &str) -> PyResult<Bound<'py, PyDict>> {
    let w = parse_world(scenario_json)?;
    let cfg = episode_config(mode)?;
    let r = py.detach(|| run_episode(&w, "scenario", &mut ExpertReplay, &cfg)).map_err(to_py)?;
    report_dict(py, &r)
}

#[pyclass(module = "lhpf", frozen)]
struct Planner {
    inner: CorePlanner,
}

#[pymethods]
impl Planner {
    /// Untrained planner with the small default configuration.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn desk(seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig { seed, ..ModelConfig::desk() };
        Ok(Planner { inner: CorePlanner::new(cfg).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Planner { inner: load_checkpoint(&path).map_err(to_py)?.0 })
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars("")
    }

    /// Runs one closed-loop episode; `history=False` uses the planner without its history pool.
    #[pyo3(signature = (scenario_json, mode = "reactive", history = true))]
    fn simulate<'py>(&self, py: Python<'py>, scenario_json: &str, mode: &str, history: bool) -> PyResult<Bound<'py, PyDict>> {
        let w = parse_world(scenario_json)?;
        let cfg = EpisodeConfig { history_frames: self.inner.config.history_frames, ..episode_config(mode)? };
        let r = py
            .detach(|| {
                let mut p: Box<dyn EgoPlanner> =
                    if history { Box::new(HistoryPlanner::new(&self.inner)) } else { Box::new(BaselinePlanner { planner: &self.inner }) };
                run_episode(&w, "scenario", p.as_mut(), &cfg)
            })
            .map_err(to_py)?;
        report_dict(py, &r)
    }
}

/// Interval-gridded store of past planning embeddings.
#[pyclass(module = "lhpf")]
struct HistoryPool {
    inner: CorePool,
}

#[pymethods]
impl HistoryPool {
    #[new]
    fn new(capacity_frames: usize, interval: usize) -> PyResult<Self> {
        Ok(HistoryPool { inner: CorePool::new(capacity_frames, interval).map_err(to_py)? })
    }

    /// Offers an embedding of shape `[len(ref_line_ids), lon_modes, dim]`, flattened row-major.
    /// Returns whether it was stored.
    fn push(&mut self, t_frame: usize, ref_line_ids: Vec<usize>, lon_modes: usize, dim: usize, values: Vec<f64>) -> PyResult<bool> {
        if values.len() != ref_line_ids.len() * lon_modes * dim {
            return Err(PyValueError::new_err("values length does not match the embedding shape"));
        }
        self.inner.push(PlanningEmbedding { t_frame, ref_line_ids, lon_modes, dim, values }).map_err(to_py)
    }

    fn frames(&self) -> Vec<usize> {
        self.inner.frames()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }
}

#[pymodule]
fn lhpf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(scenario_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(comfort_loss, m)?)?;
    m.add_function(wrap_pyfunction!(plan_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_expert, m)?)?;
    m.add_class::<Planner>()?;
    m.add_class::<HistoryPool>()?;
    Ok(())
}
