//! Experiment configuration.
//!
//! The on-disk format is TOML with four sections (`content`, `env`, `agent`,
//! `harness`) plus a top-level `seed`. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `Default` gives seed 0 and the section defaults; in TOML the seed is required.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub content: ContentConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentConfig {
    pub n_types: usize,
    /// Catalog items per content type, used by slate sessions.
    pub items_per_type: usize,
}

/// Customer population of the simulated live room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Population mean of the per-type base utility; one entry per content type.
    pub utility_mean: Vec<f64>,
    pub n_stores: usize,
    /// Spread of per-store preference offsets (drawn once per seed).
    pub store_utility_std: f64,
    /// Spread of per-user preference noise around the store preference.
    pub user_utility_std: f64,
    pub n_users: u64,
    pub satiation_mean: f64,
    pub satiation_std: f64,
    /// Exposures beyond this count no longer reduce utility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satiation_cap: Option<u32>,
    /// Expected session length under geometric departure.
    pub patience: f64,
    pub null_utility: f64,
    /// Probability that a click also closes a deal.
    pub deal_prob: f64,
    pub session_length_cap: u32,
    pub item_utility_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Entropy temperature.
    pub alpha: f64,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub warmup_transitions: usize,
    pub updates_per_tick: usize,
    pub hidden: Vec<usize>,
    pub user_buckets: usize,
    pub store_buckets: usize,
    /// Count cap for tabular state discretization and feature scaling.
    pub count_cap: u32,
    pub sarsa_lr: f64,
    pub epsilon: f64,
    pub slate_size: usize,
    pub slateq_lr: f64,
    pub dfm_factors: usize,
    pub dfm_hidden: Vec<usize>,
    pub dfm_lr: f64,
    pub dfm_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoggingPolicy {
    Uniform,
    Dfm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    /// Sessions in the generated interaction log.
    pub sessions: u64,
    /// Timestamp gap between consecutive session arrivals.
    pub arrival_interval: u64,
    /// Records with timestamp below this go to the training split.
    pub split_timestamp: u64,
    /// Concurrent sessions served per learner tick.
    pub sessions_per_tick: usize,
    pub logging_policy: LoggingPolicy,
    /// Environment transitions consumed by online training.
    pub train_steps: u64,
    pub hits_k: Vec<usize>,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            n_types: 8,
            items_per_type: 2,
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            utility_mean: vec![0.2, -0.3, 0.5, -0.6, 0.0, -0.9, 0.3, -1.2],
            n_stores: 4,
            store_utility_std: 1.0,
            user_utility_std: 0.3,
            n_users: 1_000_000,
            satiation_mean: 0.6,
            satiation_std: 0.1,
            satiation_cap: None,
            patience: 8.0,
            null_utility: 1.0,
            deal_prob: 0.2,
            session_length_cap: 30,
            item_utility_std: 0.3,
        }
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 0.05,
            critic_lr: 1e-3,
            policy_lr: 1e-3,
            tau: 0.01,
            batch_size: 64,
            replay_capacity: 100_000,
            warmup_transitions: 512,
            updates_per_tick: 1,
            hidden: vec![64, 64],
            user_buckets: 4,
            store_buckets: 8,
            count_cap: 5,
            sarsa_lr: 0.05,
            epsilon: 0.1,
            slate_size: 2,
            slateq_lr: 0.05,
            dfm_factors: 4,
            dfm_hidden: vec![16],
            dfm_lr: 0.02,
            dfm_epochs: 300,
        }
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            sessions: 4000,
            arrival_interval: 1,
            split_timestamp: 3200,
            sessions_per_tick: 32,
            logging_policy: LoggingPolicy::Uniform,
            train_steps: 100_000,
            hits_k: vec![1, 3, 5],
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn n_types(&self) -> usize {
        self.content.n_types
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        digest_str(&self.to_toml_string().expect("config always serializes"))
    }

    /// Digest of everything that defines the environment and its features:
    /// checkpoints trained under one digest are only valid under the same one.
    pub fn env_digest(&self) -> String {
        #[derive(Serialize)]
        struct EnvPart<'a> {
            seed: u64,
            content: &'a ContentConfig,
            env: &'a EnvConfig,
            user_buckets: usize,
            store_buckets: usize,
            count_cap: u32,
        }
        let part = EnvPart {
            seed: self.seed,
            content: &self.content,
            env: &self.env,
            user_buckets: self.agent.user_buckets,
            store_buckets: self.agent.store_buckets,
            count_cap: self.agent.count_cap,
        };
        digest_str(&toml::to_string(&part).expect("config always serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.content.n_types;
        let e = &self.env;
        let a = &self.agent;
        let h = &self.harness;
        check(n >= 2, || format!("content.n_types must be >= 2, got {n}"))?;
        check(self.content.items_per_type >= 1, || {
            "content.items_per_type must be >= 1".into()
        })?;
        check(e.utility_mean.len() == n, || {
            format!(
                "env.utility_mean has {} entries but n_types is {n}",
                e.utility_mean.len()
            )
        })?;
        check(e.utility_mean.iter().all(|u| u.is_finite()), || {
            "env.utility_mean must be finite".into()
        })?;
        check(e.n_stores >= 1, || "env.n_stores must be >= 1".into())?;
        check(e.n_users >= 1, || "env.n_users must be >= 1".into())?;
        for (name, v) in [
            ("env.store_utility_std", e.store_utility_std),
            ("env.user_utility_std", e.user_utility_std),
            ("env.satiation_mean", e.satiation_mean),
            ("env.satiation_std", e.satiation_std),
            ("env.item_utility_std", e.item_utility_std),
        ] {
            check(v.is_finite() && v >= 0.0, || {
                format!("{name} must be finite and >= 0, got {v}")
            })?;
        }
        check(e.patience >= 1.0, || {
            format!("env.patience must be >= 1, got {}", e.patience)
        })?;
        check(e.null_utility.is_finite(), || {
            "env.null_utility must be finite".into()
        })?;
        check((0.0..=1.0).contains(&e.deal_prob), || {
            format!("env.deal_prob must lie in [0, 1], got {}", e.deal_prob)
        })?;
        check(e.session_length_cap >= 1, || {
            "env.session_length_cap must be >= 1".into()
        })?;
        check((0.0..1.0).contains(&a.gamma), || {
            format!("agent.gamma must lie in [0, 1), got {}", a.gamma)
        })?;
        check(a.alpha > 0.0 && a.alpha.is_finite(), || {
            format!("agent.alpha must be > 0, got {}", a.alpha)
        })?;
        for (name, v) in [
            ("agent.critic_lr", a.critic_lr),
            ("agent.policy_lr", a.policy_lr),
            ("agent.dfm_lr", a.dfm_lr),
        ] {
            check(v > 0.0 && v.is_finite(), || format!("{name} must be > 0, got {v}"))?;
        }
        for (name, v) in [("agent.sarsa_lr", a.sarsa_lr), ("agent.slateq_lr", a.slateq_lr)] {
            check(v > 0.0 && v <= 1.0, || {
                format!("{name} must lie in (0, 1], got {v}")
            })?;
        }
        check(a.tau > 0.0 && a.tau <= 1.0, || {
            format!("agent.tau must lie in (0, 1], got {}", a.tau)
        })?;
        check((0.0..=1.0).contains(&a.epsilon), || {
            format!("agent.epsilon must lie in [0, 1], got {}", a.epsilon)
        })?;
        check(a.batch_size >= 1, || "agent.batch_size must be >= 1".into())?;
        check(a.replay_capacity >= a.batch_size, || {
            "agent.replay_capacity must be >= batch_size".into()
        })?;
        check(a.hidden.iter().all(|&w| w > 0), || {
            "agent.hidden widths must be positive".into()
        })?;
        check(a.dfm_hidden.iter().all(|&w| w > 0), || {
            "agent.dfm_hidden widths must be positive".into()
        })?;
        check(a.user_buckets >= 1 && a.store_buckets >= 1, || {
            "agent.user_buckets and agent.store_buckets must be >= 1".into()
        })?;
        check(a.count_cap >= 1 && a.count_cap <= 255, || {
            "agent.count_cap must lie in [1, 255]".into()
        })?;
        let catalog = n * self.content.items_per_type;
        check(a.slate_size >= 1 && a.slate_size <= catalog, || {
            format!(
                "agent.slate_size must lie in [1, {catalog}], got {}",
                a.slate_size
            )
        })?;
        check(a.dfm_factors >= 1, || "agent.dfm_factors must be >= 1".into())?;
        check(h.arrival_interval >= 1, || {
            "harness.arrival_interval must be >= 1".into()
        })?;
        check(h.sessions_per_tick >= 1, || {
            "harness.sessions_per_tick must be >= 1".into()
        })?;
        check(!h.hits_k.is_empty() && h.hits_k.iter().all(|&k| k >= 1), || {
            "harness.hits_k must be a non-empty list of K >= 1".into()
        })?;
        Ok(())
    }
}

pub fn digest_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}
