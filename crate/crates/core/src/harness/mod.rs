//! Experiment runner: dataset generation, pooled online training,
//! evaluation, comparison and the reference oracles.

pub mod agent;
pub mod dataset;
pub mod evaluate;
pub mod log;
pub mod oracle;
pub mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use agent::{AgentKind, Checkpoint, TrainedAgent};
pub use dataset::{generate_dataset, Dataset};
pub use evaluate::{compare, mean_policy_entropy, mean_return, run_eval, Comparison};
pub use log::{parse_log, read_log, write_log, InteractionLogRecord, LogHeader};
pub use train::{initial_agent, run_training, TrainOutcome, TrainStats};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

/// Session-id namespaces. Logged sessions use ids from zero; the others are
/// offset so their random streams never coincide with logged ones.
pub const PILOT_SESSION_OFFSET: u64 = 1 << 40;
pub const TRAIN_SESSION_OFFSET: u64 = 2 << 40;
pub const EVAL_SESSION_OFFSET: u64 = 3 << 40;

/// Runs `f` on a dedicated pool of `workers` threads.
pub(crate) fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub const CODE_VERSION: &str = concat!("liveroom ", env!("CARGO_PKG_VERSION"));

/// Written next to every run's outputs. Paths are relative to the output
/// directory so manifests from identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub env_digest: String,
    pub seed: u64,
    pub code_version: String,
    pub agent: Option<AgentKind>,
    pub start_step: u64,
    pub end_step: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, agent: Option<AgentKind>) -> Self {
        Self {
            command: command.into(),
            config_digest: config.digest(),
            env_digest: config.env_digest(),
            seed: config.seed,
            code_version: CODE_VERSION.into(),
            agent,
            start_step: 0,
            end_step: 0,
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        write_file(&path, &(serde_json::to_string_pretty(self)? + "\n"))?;
        Ok(path)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub const LOG_FILE: &str = "interactions.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Reads the dataset at `path` if given, otherwise regenerates it from the config.
pub fn load_or_generate(config: &ExperimentConfig, path: Option<&Path>, workers: usize) -> Result<Dataset> {
    match path {
        Some(p) => {
            let (header, records) = read_log(p)?;
            Ok(Dataset { header, records })
        }
        None => generate_dataset(config, workers),
    }
}

/// `generate`: writes the interaction log, the resolved config and a manifest.
pub fn generate_to(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunManifest> {
    ensure_dir(out)?;
    let data = generate_dataset(config, workers)?;
    write_log(&out.join(LOG_FILE), &data.header, &data.records)?;
    config.save(&out.join(CONFIG_FILE))?;
    let mut m = RunManifest::new("generate", config, None);
    m.end_step = data.records.len() as u64;
    m.outputs = vec![LOG_FILE.into(), CONFIG_FILE.into()];
    m.save(out, "generate_manifest.json")?;
    Ok(m)
}

/// `train`: writes a checkpoint and a manifest.
pub fn train_to(
    config: &ExperimentConfig,
    kind: AgentKind,
    steps: u64,
    data: Option<&Path>,
    out: &Path,
    workers: usize,
) -> Result<(RunManifest, TrainStats)> {
    ensure_dir(out)?;
    let needs_data = matches!(kind, AgentKind::Dfm | AgentKind::Slateq);
    let dataset = if needs_data {
        Some(load_or_generate(config, data, workers)?)
    } else {
        None
    };
    let outcome = run_training(config, kind, dataset.as_ref(), steps, workers)?;
    let checkpoint = Checkpoint::new(config, outcome.stats.env_steps, outcome.agent);
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    config.save(&out.join(CONFIG_FILE))?;
    let mut m = RunManifest::new("train", config, Some(kind));
    m.end_step = outcome.stats.env_steps;
    m.outputs = vec![CHECKPOINT_FILE.into(), CONFIG_FILE.into()];
    m.save(out, "train_manifest.json")?;
    Ok((m, outcome.stats))
}

/// `eval`: writes the metrics report and a manifest.
pub fn eval_to(
    config: &ExperimentConfig,
    checkpoint: &Path,
    data: Option<&Path>,
    out: &Path,
    workers: usize,
) -> Result<MetricsReport> {
    let checkpoint = Checkpoint::load(checkpoint)?;
    eval_checkpoint_to(config, &checkpoint, data, out, workers)
}

pub fn eval_checkpoint_to(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    data: Option<&Path>,
    out: &Path,
    workers: usize,
) -> Result<MetricsReport> {
    ensure_dir(out)?;
    let dataset = load_or_generate(config, data, workers)?;
    let report = run_eval(config, checkpoint, &dataset, workers)?;
    write_file(&out.join(METRICS_FILE), &report.to_json()?)?;
    let mut m = RunManifest::new("eval", config, Some(checkpoint.agent.kind()));
    m.start_step = checkpoint.env_steps;
    m.end_step = checkpoint.env_steps;
    m.outputs = vec![METRICS_FILE.into()];
    m.save(out, "eval_manifest.json")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn files_round_trip_and_repeat() {
        let mut c = ExperimentConfig::default();
        c.seed = 3;
        c.harness.sessions = 120;
        c.harness.split_timestamp = 80;
        c.agent.hidden = vec![8];
        c.agent.warmup_transitions = 32;
        c.agent.batch_size = 8;
        let run = |dir: &Path| {
            generate_to(&c, dir, 1).unwrap();
            let log = dir.join(LOG_FILE);
            train_to(&c, AgentKind::Sac, 400, Some(&log), dir, 1).unwrap();
            eval_to(&c, &dir.join(CHECKPOINT_FILE), Some(&log), dir, 1).unwrap();
            std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(run(a.path()), run(b.path()));
        for f in [LOG_FILE, CHECKPOINT_FILE, "train_manifest.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        assert!(in_pool(0, || ()).is_err());
    }
}
