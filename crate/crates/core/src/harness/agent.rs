use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{ActionScorer, DfmAgent, RandomAgent, SacAgent, SarsaAgent, SlateQAgent};
use crate::config::ExperimentConfig;
use crate::env::{Catalog, Session, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::types::{Context, ExposureState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Sac,
    Sarsa,
    Slateq,
    Dfm,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [Self::Sac, Self::Sarsa, Self::Slateq, Self::Dfm, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sac => "sac",
            Self::Sarsa => "sarsa",
            Self::Slateq => "slateq",
            Self::Dfm => "dfm",
            Self::Random => "random",
        }
    }

    /// Learns from interaction logs instead of the live environment.
    pub fn is_offline(self) -> bool {
        self == Self::Dfm
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown agent {s:?}; expected sac|sarsa|slateq|dfm|random")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum TrainedAgent {
    Sac(SacAgent),
    Sarsa(SarsaAgent),
    Slateq(SlateQAgent),
    Dfm(DfmAgent),
    Random(RandomAgent),
}

impl TrainedAgent {
    pub fn kind(&self) -> AgentKind {
        match self {
            Self::Sac(_) => AgentKind::Sac,
            Self::Sarsa(_) => AgentKind::Sarsa,
            Self::Slateq(_) => AgentKind::Slateq,
            Self::Dfm(_) => AgentKind::Dfm,
            Self::Random(_) => AgentKind::Random,
        }
    }

    fn scorer(&self) -> &dyn ActionScorer {
        match self {
            Self::Sac(a) => a,
            Self::Sarsa(a) => a,
            Self::Slateq(a) => a,
            Self::Dfm(a) => a,
            Self::Random(a) => a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Sac(a) => a.validate(),
            Self::Sarsa(a) => a.table.validate(),
            Self::Slateq(a) => a.validate(),
            Self::Dfm(a) => a.model.validate(),
            Self::Random(_) => Ok(()),
        }
    }

    /// One round served without exploration, as in deployment.
    pub fn serve(&self, session: &mut Session, catalog: &Catalog) -> Result<StepOutcome> {
        match self {
            Self::Sac(a) => {
                let (ctx, state) = (session.context().clone(), session.state().clone());
                let action = a.act(&ctx, &state, false, session.policy_rng())?;
                session.step(action)
            }
            Self::Sarsa(a) => session.step(a.table.greedy(session.state())),
            Self::Slateq(a) => {
                let slate = a.best_slate(session.state())?;
                Ok(session.step_slate(catalog, &slate)?.step)
            }
            Self::Dfm(a) => {
                let action = a.act(session.context(), session.state())?;
                session.step(action)
            }
            Self::Random(a) => {
                let action = a.act(session.policy_rng());
                session.step(action)
            }
        }
    }
}

impl ActionScorer for TrainedAgent {
    fn n_types(&self) -> usize {
        self.scorer().n_types()
    }

    fn score_actions(&self, context: &Context, state: &ExposureState, rng: &mut SimRng) -> Result<Vec<f64>> {
        self.scorer().score_actions(context, state, rng)
    }
}

pub const CHECKPOINT_FORMAT: &str = "liveroom-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained agent. Parameters are written with
/// round-trip float formatting, so loading restores them bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env_digest: String,
    pub config_digest: String,
    pub seed: u64,
    pub env_steps: u64,
    pub agent: TrainedAgent,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, env_steps: u64, agent: TrainedAgent) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            env_digest: config.env_digest(),
            config_digest: config.digest(),
            seed: config.seed,
            env_steps,
            agent,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.agent.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The checkpoint must come from an environment with the same digest.
    pub fn check_compatible(&self, config: &ExperimentConfig) -> Result<()> {
        let expected = config.env_digest();
        if self.env_digest != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on environment {} but the config describes environment {expected} (check seed and env settings)",
                self.env_digest
            )));
        }
        if self.agent.n_types() != config.n_types() {
            return Err(Error::Checkpoint("checkpoint content types differ from config".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn kinds_parse() {
        for k in AgentKind::ALL {
            assert_eq!(k.name().parse::<AgentKind>().unwrap(), k);
        }
        assert!("ppo".parse::<AgentKind>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let config = ExperimentConfig::default();
        let agent = SacAgent::from_config(&config, &mut seeded_rng(2)).unwrap();
        let c = Checkpoint::new(&config, 0, TrainedAgent::Sac(agent));
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        back.check_compatible(&config).unwrap();

        let mut other = config.clone();
        other.env.patience = 3.0;
        assert!(back.check_compatible(&other).is_err());
        let mut bumped = c.clone();
        bumped.version = 99;
        assert!(Checkpoint::from_json(&bumped.to_json().unwrap()).is_err());
    }
}
