//! One-to-many training: a pool of concurrent sessions feeds one learner.
//!
//! Each tick, every active session picks its action from a read-only snapshot
//! of the agent and advances one round; that phase may run on many threads.
//! The learner then consumes the outcomes in pool-slot order on one thread,
//! so results do not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    DfmAgent, EpsilonSchedule, FittedChoiceModel, LearningRateSchedule, RandomAgent, ReplayBuffer, SacAgent,
    SacLosses, SarsaAgent, SlateQAgent,
};
use crate::config::ExperimentConfig;
use crate::env::{Catalog, Population, Session, StepOutcome};
use crate::error::{Error, Result};
use crate::eval::time_split;
use crate::rng::{purpose, stream_rng};
use crate::types::{Action, ExposureState, Transition};

use super::agent::{AgentKind, TrainedAgent};
use super::dataset::Dataset;
use super::{in_pool, TRAIN_SESSION_OFFSET};

/// Gradient steps used to fit the SlateQ choice model.
const CHOICE_FIT_ITERATIONS: usize = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub env_steps: u64,
    pub sessions_completed: u64,
    /// Mean undiscounted return of the sessions that finished during training.
    pub mean_return: f64,
    pub updates: u64,
    pub last_losses: Option<SacLosses>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: TrainedAgent,
    pub stats: TrainStats,
}

fn training_logs(config: &ExperimentConfig, dataset: Option<&Dataset>, kind: AgentKind) -> Result<Vec<Transition>> {
    let dataset = dataset.ok_or_else(|| Error::InvalidArgument(format!("agent {kind} needs a generated dataset")))?;
    if dataset.header.n_types != config.n_types() {
        return Err(Error::InvalidArgument("dataset content types differ from config".into()));
    }
    let (train, _) = time_split(&dataset.records, config.harness.split_timestamp);
    if train.is_empty() {
        return Err(Error::Empty("training split of the dataset"));
    }
    train.iter().map(|r| r.transition()).collect()
}

/// The untrained agent; `run_training` with zero steps returns exactly this.
pub fn initial_agent(config: &ExperimentConfig, kind: AgentKind, dataset: Option<&Dataset>) -> Result<TrainedAgent> {
    config.validate()?;
    let a = &config.agent;
    let n = config.n_types();
    let mut init = stream_rng(config.seed, purpose::INIT, 0);
    Ok(match kind {
        AgentKind::Sac => TrainedAgent::Sac(SacAgent::from_config(config, &mut init)?),
        AgentKind::Sarsa => TrainedAgent::Sarsa(SarsaAgent::new(
            n,
            a.count_cap,
            a.gamma,
            EpsilonSchedule::Constant { epsilon: a.epsilon },
            LearningRateSchedule::Constant { lr: a.sarsa_lr },
        )),
        AgentKind::Slateq => {
            let logs = training_logs(config, dataset, kind)?;
            let catalog = Population::new(config)?.catalog().clone();
            let item_types = (0..catalog.len()).map(|i| catalog.type_of(i).index()).collect();
            let choice = FittedChoiceModel::fit(item_types, n, &logs, CHOICE_FIT_ITERATIONS)?;
            TrainedAgent::Slateq(SlateQAgent::new(
                choice,
                n,
                a.count_cap,
                a.slate_size,
                a.gamma,
                a.slateq_lr,
                a.epsilon,
            )?)
        }
        AgentKind::Dfm => {
            let featurizer = crate::agents::Featurizer::from_config(config);
            let model = crate::agents::DfmModel::new(
                DfmAgent::n_features(&featurizer),
                3,
                a.dfm_factors,
                &a.dfm_hidden,
                &mut init,
            )?;
            TrainedAgent::Dfm(DfmAgent { featurizer, model })
        }
        AgentKind::Random => TrainedAgent::Random(RandomAgent { n_types: n }),
    })
}

/// What a session did in one tick.
enum Played {
    Single(StepOutcome),
    Slate {
        slate: Vec<usize>,
        chosen: Option<usize>,
        outcome: StepOutcome,
    },
}

impl Played {
    fn outcome(&self) -> &StepOutcome {
        match self {
            Self::Single(o) | Self::Slate { outcome: o, .. } => o,
        }
    }
}

/// Learner-side memory for on-policy updates that wait for the next action.
enum Pending {
    Sarsa(Transition),
    Slate {
        state: ExposureState,
        slate: Vec<usize>,
        chosen: Option<usize>,
        reward: f64,
        next_state: ExposureState,
    },
}

struct Slot {
    session: Session,
    pending: Option<Pending>,
    session_return: f64,
}

fn play(agent: &TrainedAgent, session: &mut Session, catalog: &Catalog) -> Result<Played> {
    let (ctx, state) = (session.context().clone(), session.state().clone());
    Ok(match agent {
        TrainedAgent::Sac(a) => {
            let action = a.act(&ctx, &state, true, session.policy_rng())?;
            Played::Single(session.step(action)?)
        }
        TrainedAgent::Sarsa(a) => {
            let eps = match a.epsilon {
                EpsilonSchedule::Constant { epsilon } => epsilon,
                EpsilonSchedule::VisitDecay { .. } => {
                    return Err(Error::InvalidConfig("pooled SARSA needs a constant epsilon".into()))
                }
            };
            let action = a.explore_with(&state, eps, session.policy_rng());
            Played::Single(session.step(action)?)
        }
        TrainedAgent::Slateq(a) => {
            let slate = a.act(&state, true, session.policy_rng())?;
            let out = session.step_slate(catalog, &slate)?;
            Played::Slate {
                slate,
                chosen: out.chosen,
                outcome: out.step,
            }
        }
        TrainedAgent::Random(a) => {
            let action = a.act(session.policy_rng());
            Played::Single(session.step(action)?)
        }
        TrainedAgent::Dfm(_) => return Err(Error::InvalidArgument("dfm trains offline".into())),
    })
}

fn learn_pending(agent: &mut TrainedAgent, pending: Pending, played_now: Option<&Played>) -> Result<()> {
    match (agent, pending) {
        (TrainedAgent::Sarsa(a), Pending::Sarsa(t)) => {
            let next = match played_now {
                Some(p) => p.outcome().transition.action,
                None => Action(0),
            };
            a.learn(&t, next)
        }
        (
            TrainedAgent::Slateq(a),
            Pending::Slate {
                state,
                slate,
                chosen,
                reward,
                next_state,
            },
        ) => {
            let next_slate = match played_now {
                Some(Played::Slate { slate, .. }) => Some(slate.as_slice()),
                _ => None,
            };
            a.learn(&state, &slate, chosen, reward, &next_state, next_slate)
        }
        _ => Err(Error::InvalidArgument("pending update does not match the agent".into())),
    }
}

/// Trains `kind` for `steps` environment rounds (online agents) or on the
/// training split of `dataset` (DFM).
pub fn run_training(
    config: &ExperimentConfig,
    kind: AgentKind,
    dataset: Option<&Dataset>,
    steps: u64,
    workers: usize,
) -> Result<TrainOutcome> {
    let mut agent = initial_agent(config, kind, dataset)?;
    if let TrainedAgent::Dfm(dfm) = &mut agent {
        let logs = training_logs(config, dataset, kind)?;
        let data = dfm.examples(&logs)?;
        let history = dfm.model.train(&data, config.agent.dfm_epochs, config.agent.dfm_lr)?;
        let stats = TrainStats {
            env_steps: 0,
            sessions_completed: 0,
            mean_return: 0.0,
            updates: history.len() as u64,
            last_losses: None,
        };
        return Ok(TrainOutcome { agent, stats });
    }

    let population = Population::new(config)?;
    let catalog = population.catalog().clone();
    let h = &config.harness;
    let a = &config.agent;
    let mut next_id = 0u64;
    let open = |next_id: &mut u64| -> Result<Slot> {
        let session = population.open_session(TRAIN_SESSION_OFFSET + *next_id, *next_id * h.arrival_interval)?;
        *next_id += 1;
        Ok(Slot {
            session,
            pending: None,
            session_return: 0.0,
        })
    };
    let mut slots: Vec<Slot> = (0..h.sessions_per_tick).map(|_| open(&mut next_id)).collect::<Result<_>>()?;
    let mut replay = ReplayBuffer::new(a.replay_capacity);
    let mut learner_rng = stream_rng(config.seed, purpose::LEARNER, 0);
    let mut stats = TrainStats {
        env_steps: 0,
        sessions_completed: 0,
        mean_return: 0.0,
        updates: 0,
        last_losses: None,
    };
    let mut return_sum = 0.0;

    while stats.env_steps < steps {
        let active = (steps - stats.env_steps).min(slots.len() as u64) as usize;
        let snapshot = &agent;
        let played: Vec<Result<Played>> = in_pool(workers, || {
            slots[..active]
                .par_iter_mut()
                .map(|slot| play(snapshot, &mut slot.session, &catalog))
                .collect()
        })?;

        for (slot, played) in slots[..active].iter_mut().zip(played) {
            let played = played?;
            if let Some(p) = slot.pending.take() {
                learn_pending(&mut agent, p, Some(&played))?;
            }
            let out = played.outcome();
            let t = &out.transition;
            slot.session_return += t.reward;
            stats.env_steps += 1;
            let pending = match (&agent, &played) {
                (TrainedAgent::Sac(_), _) => {
                    replay.push(t.clone());
                    None
                }
                (TrainedAgent::Sarsa(_), _) => Some(Pending::Sarsa(t.clone())),
                (TrainedAgent::Slateq(_), Played::Slate { slate, chosen, .. }) => Some(Pending::Slate {
                    state: t.state.clone(),
                    slate: slate.clone(),
                    chosen: *chosen,
                    reward: t.reward,
                    next_state: t.next_state.clone(),
                }),
                _ => None,
            };
            if t.done {
                if let Some(p) = pending {
                    learn_pending(&mut agent, p, None)?;
                }
                stats.sessions_completed += 1;
                return_sum += slot.session_return;
                *slot = open(&mut next_id)?;
            } else {
                slot.pending = pending;
            }
        }

        if let TrainedAgent::Sac(sac) = &mut agent {
            if replay.len() >= a.warmup_transitions.max(a.batch_size) {
                for _ in 0..a.updates_per_tick {
                    let batch = replay.sample(a.batch_size, &mut learner_rng);
                    let losses = sac.learn(&batch).map_err(|e| {
                        Error::NonFinite(format!("training stopped after {} updates: {e}", stats.updates))
                    })?;
                    stats.last_losses = Some(losses);
                    stats.updates += 1;
                }
            }
        }
    }
    if stats.sessions_completed > 0 {
        stats.mean_return = return_sum / stats.sessions_completed as f64;
    }
    Ok(TrainOutcome { agent, stats })
}
