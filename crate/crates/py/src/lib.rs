//! Python bindings: trajectories, keyframes, fusion with the scripted
//! teacher, the full pipeline and trained reward ensembles.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use preffuse_core::config::PipelineConfig as CoreConfig;
use preffuse_core::discriminability::StateEmbedder;
use preffuse_core::evaluators::{scripted_teacher, Modality, RewardFn, ScriptedTeacher};
use preffuse_core::keyframes::{extract_keyframes as core_keyframes, KeyframeConfig};
use preffuse_core::pipeline::{run_pipeline as core_run, Fuser, RunReport as CoreReport};
use preffuse_core::psl::PslConfig;
use preffuse_core::reward::loss;
use preffuse_core::reward::RewardEnsemble as CoreEnsemble;
use preffuse_core::synthesis::{EnvReward, EnvSpec};
use preffuse_core::trajectory::{load_dataset, save_dataset, EnvTag, Trajectory as CoreTrajectory, TrajectoryPair};
use preffuse_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Trajectory", module = "preffuse", skip_from_py_object)]
#[derive(Clone)]
struct Trajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl Trajectory {
    #[new]
    #[pyo3(signature = (id, states, actions, env_tag = "custom"))]
    fn new(id: String, states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, env_tag: &str) -> PyResult<Self> {
        let tag: EnvTag = env_tag.parse().map_err(py_err)?;
        let inner = CoreTrajectory::from_rows(id, tag, &states, &actions).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.states().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<Vec<f64>> {
        self.inner.actions().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(id={:?}, len={}, state_dim={}, action_dim={})",
            self.inner.id(),
            self.inner.len(),
            self.inner.state_dim(),
            self.inner.action_dim()
        )
    }
}

fn unwrap_all(trajs: &[PyRef<'_, Trajectory>]) -> Vec<CoreTrajectory> {
    trajs.iter().map(|t| t.inner.clone()).collect()
}

#[pyfunction]
fn load_trajectories(path: PathBuf) -> PyResult<Vec<Trajectory>> {
    Ok(load_dataset(path).map_err(py_err)?.into_iter().map(|inner| Trajectory { inner }).collect())
}

#[pyfunction]
fn save_trajectories(path: PathBuf, trajectories: Vec<PyRef<'_, Trajectory>>) -> PyResult<()> {
    save_dataset(path, &unwrap_all(&trajectories)).map_err(py_err)
}

/// 1-based keyframe indices with the default extraction settings.
#[pyfunction]
#[pyo3(signature = (trajectory, top_k = None))]
fn extract_keyframes(trajectory: PyRef<'_, Trajectory>, top_k: Option<usize>) -> PyResult<Vec<usize>> {
    let mut cfg = KeyframeConfig::default();
    if let Some(k) = top_k {
        cfg.top_k = k;
    }
    Ok(core_keyframes(&trajectory.inner, &cfg).map_err(py_err)?.indices().to_vec())
}

/// Bradley–Terry probability that `sum_a` is preferred over `sum_b`.
#[pyfunction]
fn preference_prob(sum_a: f64, sum_b: f64) -> PyResult<f64> {
    loss::preference_prob(sum_a, sum_b).map_err(py_err)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    preffuse_core::report::spearman(&a, &b).map_err(py_err)
}

fn env_reward(env: &str) -> PyResult<Arc<dyn RewardFn>> {
    let spec = EnvSpec::from_name(env).map_err(py_err)?;
    Ok(Arc::new(EnvReward(spec.build())))
}

/// Ground-truth label from the toy environment's returns: 1, 0 or -1.
#[pyfunction]
#[pyo3(signature = (a, b, env = "reach"))]
fn scripted_label(a: PyRef<'_, Trajectory>, b: PyRef<'_, Trajectory>, env: &str) -> PyResult<i8> {
    let pair = TrajectoryPair::new(a.inner.clone(), b.inner.clone()).map_err(py_err)?;
    Ok(scripted_teacher(&pair, env_reward(env)?.as_ref()).map_err(py_err)?.label.value())
}

/// Fuses one pair with scripted evaluators on both modalities and returns
/// `(label, soft_scores)` with scores ordered (indecision, B, A).
#[pyfunction]
#[pyo3(signature = (a, b, env = "reach", tau_v = 0.5, tau_t = 0.05, seed = 0))]
fn fuse_scripted(
    a: PyRef<'_, Trajectory>,
    b: PyRef<'_, Trajectory>,
    env: &str,
    tau_v: f64,
    tau_t: f64,
    seed: u64,
) -> PyResult<(i8, [f64; 3])> {
    let reward = env_reward(env)?;
    let fuser = Fuser {
        vlm: Arc::new(ScriptedTeacher::new(reward.clone(), Modality::Vlm)),
        llm: Arc::new(ScriptedTeacher::new(reward, Modality::Llm)),
        embedder: Arc::new(StateEmbedder { dim: a.inner.state_dim() }),
        tau_v,
        tau_t,
        crowd_size: 5,
        alpha: 0.5,
        psl: PslConfig::default(),
    };
    let cfg = KeyframeConfig::default();
    let ka = core_keyframes(&a.inner, &cfg).map_err(py_err)?;
    let kb = core_keyframes(&b.inner, &cfg).map_err(py_err)?;
    let pair = TrajectoryPair::new(a.inner.clone(), b.inner.clone()).map_err(py_err)?;
    let o = fuser.fuse(&pair, &ka, &kb, seed).map_err(py_err)?;
    Ok((o.label.value(), o.soft_scores))
}

#[pyclass(name = "PipelineConfig", module = "preffuse", skip_from_py_object)]
#[derive(Clone)]
struct PipelineConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PipelineConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: CoreConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::load(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = CoreConfig::from_toml(text).map_err(py_err)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.experiment.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.experiment.seed = seed;
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.experiment.rounds
    }

    #[setter]
    fn set_rounds(&mut self, rounds: usize) {
        self.inner.experiment.rounds = rounds;
    }
}

#[pyclass(name = "RunReport", module = "preffuse")]
struct RunReport {
    inner: CoreReport,
}

#[pymethods]
impl RunReport {
    #[getter]
    fn spearman(&self) -> f64 {
        self.inner.spearman
    }

    #[getter]
    fn stages(&self) -> Vec<String> {
        self.inner.stages.clone()
    }

    #[getter]
    fn counterfactuals(&self) -> usize {
        self.inner.counterfactuals
    }

    /// `(correct, incorrect, indecision)` fractions over all queries.
    #[getter]
    fn label_distribution(&self) -> (f64, f64, f64) {
        let d = self.inner.label_distribution;
        (d.correct, d.incorrect, d.indecision)
    }

    /// Held-out Spearman correlation after each round.
    #[getter]
    fn round_spearman(&self) -> Vec<f64> {
        self.inner.rounds.iter().map(|r| r.spearman).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Runs every stage; the GIL is released while the pipeline works.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn run_pipeline(py: Python<'_>, config: PyRef<'_, PipelineConfig>, out_dir: Option<PathBuf>) -> PyResult<RunReport> {
    let cfg = config.inner.clone();
    let inner = py.detach(move || core_run(&cfg, out_dir.as_deref())).map_err(py_err)?;
    Ok(RunReport { inner })
}

#[pyclass(name = "RewardEnsemble", module = "preffuse")]
struct RewardEnsemble {
    inner: CoreEnsemble,
}

#[pymethods]
impl RewardEnsemble {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreEnsemble::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.members.len()
    }

    /// Ensemble-mean reward per step.
    fn reward(&self, trajectory: PyRef<'_, Trajectory>) -> PyResult<Vec<f64>> {
        Ok(self.inner.reward(&trajectory.inner).map_err(py_err)?.to_vec())
    }

    /// Each member's probability that `a` is preferred over `b`.
    fn preference_probs(&self, a: PyRef<'_, Trajectory>, b: PyRef<'_, Trajectory>) -> PyResult<Vec<f64>> {
        let pair = TrajectoryPair::new(a.inner.clone(), b.inner.clone()).map_err(py_err)?;
        self.inner.preference_probs(&pair).map_err(py_err)
    }
}

#[pymodule]
pub fn preffuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trajectory>()?;
    m.add_class::<PipelineConfig>()?;
    m.add_class::<RunReport>()?;
    m.add_class::<RewardEnsemble>()?;
    m.add_function(wrap_pyfunction!(load_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(save_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(extract_keyframes, m)?)?;
    m.add_function(wrap_pyfunction!(preference_prob, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(scripted_label, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_scripted, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
