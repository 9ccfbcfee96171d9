//! Python bindings: config, simulator sessions, training, evaluation and the
//! gradient and MDP oracles. Structured results cross the boundary as plain
//! dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use liveroom::agents::{rank_actions, ActionScorer};
use liveroom::env::{Population, Session as CoreSession};
use liveroom::eval::{self, RankedQuery};
use liveroom::harness::{self, oracle, AgentKind, Checkpoint};
use liveroom::rng::{purpose, stream_rng};
use liveroom::{Action, Context, Error, ExperimentConfig, ExposureState};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ Error::Write { .. } => PyOSError::new_err(e.to_string()),
        e @ Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for liveroom::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn agent_kind(name: &str) -> PyResult<AgentKind> {
    name.parse().py()
}

/// Experiment configuration. Built from TOML text, or defaults when omitted.
#[pyclass(module = "pyliveroom", from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => ExperimentConfig::from_toml_str(text).py()?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(&path).py()?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn n_types(&self) -> usize {
        self.inner.n_types()
    }

    /// Sets one key, e.g. `set("env", "patience", 4.0)`. The result is validated.
    fn set(&mut self, section: &str, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut tree = serde_json::to_value(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let slot = tree
            .get_mut(section)
            .and_then(|s| s.as_object_mut())
            .ok_or_else(|| PyValueError::new_err(format!("no config section {section:?}")))?;
        slot.insert(key.to_string(), from_py(value)?);
        let updated: ExperimentConfig =
            serde_json::from_value(tree).map_err(|e| PyValueError::new_err(e.to_string()))?;
        updated.validate().py()?;
        self.inner = updated;
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().py()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, digest={})", self.inner.seed, &self.inner.digest()[..12])
    }
}

/// The seeded customer population.
#[pyclass(module = "pyliveroom")]
struct Environment {
    population: Population,
}

#[pymethods]
impl Environment {
    #[new]
    fn new(config: &Config) -> PyResult<Self> {
        Ok(Self {
            population: Population::new(&config.inner).py()?,
        })
    }

    /// Opens session `session_id`; its customer and randomness depend only
    /// on the config seed and the id.
    #[pyo3(signature = (session_id, start_time=0))]
    fn open(&self, session_id: u64, start_time: u64) -> PyResult<Session> {
        Ok(Session {
            inner: self.population.open_session(session_id, start_time).py()?,
        })
    }
}

#[pyclass(module = "pyliveroom")]
struct Session {
    inner: CoreSession,
}

#[pymethods]
impl Session {
    #[getter]
    fn user_id(&self) -> String {
        self.inner.context().user_id.clone()
    }

    #[getter]
    fn store_id(&self) -> String {
        self.inner.context().store_id.clone()
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.inner.state().counts().to_vec()
    }

    #[getter]
    fn alive(&self) -> bool {
        self.inner.is_alive()
    }

    #[getter]
    fn steps(&self) -> u32 {
        self.inner.steps()
    }

    /// Exposes content type `action`; returns the transition as a dict with a
    /// `deal` flag.
    fn step<'py>(&mut self, py: Python<'py>, action: usize) -> PyResult<Bound<'py, PyAny>> {
        let step = self.inner.steps();
        let out = self.inner.step(Action(action)).py()?;
        let record = harness::InteractionLogRecord::new(self.inner.id(), step, &out.transition, out.deal);
        to_py(py, &record)
    }
}

/// An interaction log.
#[pyclass(module = "pyliveroom")]
struct Dataset {
    inner: harness::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (config, workers=1))]
    fn generate(py: Python<'_>, config: &Config, workers: usize) -> PyResult<Self> {
        let inner = py.detach(|| harness::generate_dataset(&config.inner, workers)).py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (header, records) = harness::read_log(&path).py()?;
        Ok(Self {
            inner: harness::Dataset { header, records },
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::write_log(&path, &self.inner.header, &self.inner.records).py()
    }

    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.header)
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.records)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// A trained or untrained agent together with its checkpoint metadata.
#[pyclass(module = "pyliveroom")]
struct Agent {
    inner: Checkpoint,
}

#[pymethods]
impl Agent {
    /// The agent before any training. DFM and SlateQ need a dataset.
    #[staticmethod]
    #[pyo3(signature = (config, kind, dataset=None))]
    fn untrained(config: &Config, kind: &str, dataset: Option<&Dataset>) -> PyResult<Self> {
        let agent = harness::initial_agent(&config.inner, agent_kind(kind)?, dataset.map(|d| &d.inner)).py()?;
        Ok(Self {
            inner: Checkpoint::new(&config.inner, 0, agent),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::from_json(text).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.agent.kind().name()
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        self.inner.env_steps
    }

    /// Per-type scores for one decision; `seed` only matters for the random agent.
    #[pyo3(signature = (user_id, store_id, counts, seed=0))]
    fn scores(&self, user_id: &str, store_id: &str, counts: Vec<u32>, seed: u64) -> PyResult<Vec<f64>> {
        let ctx = Context::new(user_id, store_id).py()?;
        let state = ExposureState::from_counts(counts);
        if state.n_types() != self.inner.agent.n_types() {
            return Err(PyValueError::new_err(format!(
                "expected {} exposure counts, got {}",
                self.inner.agent.n_types(),
                state.n_types()
            )));
        }
        let mut rng = stream_rng(seed, purpose::EVAL, 0);
        self.inner.agent.score_actions(&ctx, &state, &mut rng).py()
    }

    /// Content types from best to worst.
    #[pyo3(signature = (user_id, store_id, counts, seed=0))]
    fn rank(&self, user_id: &str, store_id: &str, counts: Vec<u32>, seed: u64) -> PyResult<Vec<usize>> {
        let scores = self.scores(user_id, store_id, counts, seed)?;
        Ok(rank_actions(&scores).into_iter().map(|a| a.index()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Agent(kind={}, env_steps={})", self.kind(), self.inner.env_steps)
    }
}

/// Trains `kind` for `steps` environment steps (online agents) or on the
/// training split of `dataset` (DFM). Returns the agent and training stats.
#[pyfunction]
#[pyo3(signature = (config, kind, steps, dataset=None, workers=1))]
fn train<'py>(
    py: Python<'py>,
    config: &Config,
    kind: &str,
    steps: u64,
    dataset: Option<&Dataset>,
    workers: usize,
) -> PyResult<(Agent, Bound<'py, PyAny>)> {
    let kind = agent_kind(kind)?;
    let data = dataset.map(|d| &d.inner);
    let outcome = py
        .detach(|| harness::run_training(&config.inner, kind, data, steps, workers))
        .py()?;
    let stats = to_py(py, &outcome.stats)?;
    Ok((
        Agent {
            inner: Checkpoint::new(&config.inner, outcome.stats.env_steps, outcome.agent),
        },
        stats,
    ))
}

/// Ranking metrics on the validation split plus replayed conversion rate.
#[pyfunction]
#[pyo3(signature = (config, agent, dataset, workers=1))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &Config,
    agent: &Agent,
    dataset: &Dataset,
    workers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| harness::run_eval(&config.inner, &agent.inner, &dataset.inner, workers))
        .py()?;
    to_py(py, &report)
}

/// Mean undiscounted return of the greedy policy over `sessions` fresh sessions.
#[pyfunction]
#[pyo3(signature = (config, agent, sessions, workers=1))]
fn mean_return(py: Python<'_>, config: &Config, agent: &Agent, sessions: u64, workers: usize) -> PyResult<f64> {
    py.detach(|| harness::mean_return(&config.inner, &agent.inner.agent, sessions, workers))
        .py()
}

/// Per-seed comparison table of two lists of metrics reports (as returned by
/// `evaluate`); the last row holds the means.
#[pyfunction]
fn compare<'py>(py: Python<'py>, a: &Bound<'py, PyAny>, b: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let a: Vec<eval::MetricsReport> = from_py(a)?;
    let b: Vec<eval::MetricsReport> = from_py(b)?;
    to_py(py, &harness::compare(&a, &b).py()?)
}

fn queries(ranks: Vec<Option<usize>>, n: usize) -> PyResult<Vec<RankedQuery>> {
    ranks
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankedQuery::with_rank(i as u64, n, r).py())
        .collect()
}

/// Mean reciprocal rank from 1-based ranks; `None` marks a query without a
/// relevant action.
#[pyfunction]
#[pyo3(signature = (ranks, n_types=8))]
fn mrr(ranks: Vec<Option<usize>>, n_types: usize) -> PyResult<f64> {
    eval::mrr(&queries(ranks, n_types)?).py()
}

#[pyfunction]
#[pyo3(signature = (ranks, k, n_types=8))]
fn hits_at_k(ranks: Vec<Option<usize>>, k: usize, n_types: usize) -> PyResult<f64> {
    eval::hits_at_k(&queries(ranks, n_types)?, k).py()
}

#[pyfunction]
fn conversion_rate(converted: Vec<bool>) -> PyResult<f64> {
    eval::conversion_rate(&converted).py()
}

#[pyfunction]
#[pyo3(signature = (seeds=vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]))]
fn gradcheck<'py>(py: Python<'py>, seeds: Vec<u64>) -> PyResult<Bound<'py, PyAny>> {
    let rows = py.detach(|| oracle::run_gradcheck(&seeds)).py()?;
    to_py(py, &rows)
}

#[pyfunction]
#[pyo3(signature = (seed=0, sessions=2_500_000))]
fn sarsa_oracle<'py>(py: Python<'py>, seed: u64, sessions: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| oracle::run_sarsa_oracle(seed, sessions)).py()?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (seed=0, rollouts=100_000, instances=50))]
fn slateq_oracle<'py>(py: Python<'py>, seed: u64, rollouts: u64, instances: usize) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| oracle::run_slateq_oracle(seed, rollouts, instances)).py()?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (seed=0, slates=20, samples=100_000))]
fn choice_calibration<'py>(py: Python<'py>, seed: u64, slates: usize, samples: u64) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| oracle::run_choice_calibration(seed, slates, samples)).py()?;
    to_py(py, &report)
}

#[pymodule]
fn pyliveroom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Environment>()?;
    m.add_class::<Session>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mean_return, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(conversion_rate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(sarsa_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(slateq_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(choice_calibration, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
