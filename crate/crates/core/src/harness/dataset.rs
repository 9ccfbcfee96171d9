use rayon::prelude::*;

use crate::agents::DfmAgent;
use crate::config::{ExperimentConfig, LoggingPolicy};
use crate::env::{Population, Session};
use crate::error::Result;
use crate::rng::{stream_rng, purpose};
use crate::types::{Action, Transition};

use super::log::{InteractionLogRecord, LogHeader};
use super::{in_pool, PILOT_SESSION_OFFSET};

/// A generated interaction log held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: LogHeader,
    pub records: Vec<InteractionLogRecord>,
}

impl Dataset {
    pub fn transitions(&self) -> Result<Vec<Transition>> {
        self.records.iter().map(InteractionLogRecord::transition).collect()
    }
}

/// Runs sessions `ids` to completion under `policy`, in parallel over
/// `workers` threads. Records come back ordered by session id then step,
/// whatever the scheduling.
pub fn simulate_sessions<P>(
    population: &Population,
    ids: std::ops::Range<u64>,
    arrival_interval: u64,
    policy: &P,
    workers: usize,
) -> Result<Vec<InteractionLogRecord>>
where
    P: Fn(&mut Session) -> Result<Action> + Sync,
{
    let per_session: Vec<Result<Vec<InteractionLogRecord>>> = in_pool(workers, || {
        ids.into_par_iter()
            .map(|id| {
                let mut session = population.open_session(id, id * arrival_interval)?;
                let mut records = Vec::new();
                while session.is_alive() {
                    let action = policy(&mut session)?;
                    let step = session.steps();
                    let out = session.step(action)?;
                    records.push(InteractionLogRecord::new(id, step, &out.transition, out.deal));
                }
                Ok(records)
            })
            .collect()
    })?;
    let mut records = Vec::new();
    for r in per_session {
        records.extend(r?);
    }
    Ok(records)
}

fn uniform(session: &mut Session) -> Result<Action> {
    use rand::Rng;
    let n = session.state().n_types();
    Ok(Action(session.policy_rng().random_range(0..n)))
}

/// DFM fitted on a uniformly logged pilot run whose session ids do not
/// overlap the main log.
pub fn pilot_dfm(config: &ExperimentConfig, population: &Population, workers: usize) -> Result<DfmAgent> {
    let n = config.harness.sessions.max(1);
    let pilot = simulate_sessions(
        population,
        PILOT_SESSION_OFFSET..PILOT_SESSION_OFFSET + n,
        config.harness.arrival_interval,
        &uniform,
        workers,
    )?;
    let transitions: Vec<Transition> = pilot.iter().map(InteractionLogRecord::transition).collect::<Result<_>>()?;
    DfmAgent::fit(config, &transitions, &mut stream_rng(config.seed, purpose::INIT, 1))
}

/// Simulates `config.harness.sessions` arrivals under the configured logging
/// policy. Session `i` arrives at `i * arrival_interval`.
pub fn generate_dataset(config: &ExperimentConfig, workers: usize) -> Result<Dataset> {
    config.validate()?;
    let population = Population::new(config)?;
    let h = &config.harness;
    let ids = 0..h.sessions;
    let records = match h.logging_policy {
        LoggingPolicy::Uniform => simulate_sessions(&population, ids, h.arrival_interval, &uniform, workers)?,
        LoggingPolicy::Dfm => {
            let dfm = pilot_dfm(config, &population, workers)?;
            let policy = |s: &mut Session| {
                let ctx = s.context().clone();
                dfm.sample(&ctx, s.policy_rng())
            };
            simulate_sessions(&population, ids, h.arrival_interval, &policy, workers)?
        }
    };
    Ok(Dataset {
        header: LogHeader::new(config.digest(), config.seed, config.n_types(), h.sessions, h.logging_policy),
        records,
    })
}
