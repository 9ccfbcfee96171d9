use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{entropy, rank_actions, ActionScorer};
use crate::config::ExperimentConfig;
use crate::env::Population;
use crate::error::{Error, Result};
use crate::eval::{time_split, MetricsReport, RankedQuery};
use crate::rng::{purpose, stream_rng};
use crate::types::{Action, Context, ExposureState};

use super::agent::{Checkpoint, TrainedAgent};
use super::dataset::Dataset;
use super::{in_pool, EVAL_SESSION_OFFSET};

/// Ranks every action for each validation round. Query ids are positions in
/// the validation split; the relevant action is the logged one when it was
/// clicked.
pub fn validation_queries(
    config: &ExperimentConfig,
    agent: &TrainedAgent,
    dataset: &Dataset,
    workers: usize,
) -> Result<(Vec<RankedQuery>, Vec<u64>)> {
    let (_, validation) = time_split(&dataset.records, config.harness.split_timestamp);
    let queries: Vec<Result<RankedQuery>> = in_pool(workers, || {
        validation
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let ctx = Context::new(r.user_id.clone(), r.store_id.clone())?;
                let state = ExposureState::from_counts(r.state.clone());
                let mut rng = stream_rng(config.seed, purpose::EVAL, i as u64);
                let scores = agent.score_actions(&ctx, &state, &mut rng)?;
                let relevant = (r.reward == 1.0).then_some(Action(r.action));
                RankedQuery::new(i as u64, rank_actions(&scores), relevant)
            })
            .collect()
    })?;
    let sessions: BTreeSet<u64> = validation.iter().map(|r| r.session_id).collect();
    Ok((queries.into_iter().collect::<Result<_>>()?, sessions.into_iter().collect()))
}

/// Serves each listed session afresh with the agent's greedy policy; returns
/// whether each converted and its undiscounted return.
pub fn replay_sessions(
    config: &ExperimentConfig,
    agent: &TrainedAgent,
    session_ids: &[u64],
    workers: usize,
) -> Result<Vec<(bool, f64)>> {
    let population = Population::new(config)?;
    let catalog = population.catalog();
    let results: Vec<Result<(bool, f64)>> = in_pool(workers, || {
        session_ids
            .par_iter()
            .map(|&id| {
                let mut session = population.open_session(id, id * config.harness.arrival_interval)?;
                let (mut converted, mut total) = (false, 0.0);
                while session.is_alive() {
                    let out = agent.serve(&mut session, catalog)?;
                    converted |= out.deal;
                    total += out.transition.reward;
                }
                Ok((converted, total))
            })
            .collect()
    })?;
    results.into_iter().collect()
}

/// Mean undiscounted greedy return over `n` sessions drawn from a namespace
/// disjoint from logging and training.
pub fn mean_return(config: &ExperimentConfig, agent: &TrainedAgent, n: u64, workers: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Empty("evaluation sessions"));
    }
    let ids: Vec<u64> = (EVAL_SESSION_OFFSET..EVAL_SESSION_OFFSET + n).collect();
    let results = replay_sessions(config, agent, &ids, workers)?;
    Ok(results.iter().map(|r| r.1).sum::<f64>() / n as f64)
}

/// Mean entropy of the SAC policy over the states its greedy policy visits
/// in `n` evaluation sessions.
pub fn mean_policy_entropy(config: &ExperimentConfig, agent: &TrainedAgent, n: u64, workers: usize) -> Result<f64> {
    let TrainedAgent::Sac(sac) = agent else {
        return Err(Error::InvalidArgument(format!("{} has no stochastic policy", agent.kind())));
    };
    if n == 0 {
        return Err(Error::Empty("evaluation sessions"));
    }
    let population = Population::new(config)?;
    let catalog = population.catalog();
    let per_session: Vec<Result<(f64, usize)>> = in_pool(workers, || {
        (EVAL_SESSION_OFFSET..EVAL_SESSION_OFFSET + n)
            .into_par_iter()
            .map(|id| {
                let mut session = population.open_session(id, id * config.harness.arrival_interval)?;
                let (mut sum, mut count) = (0.0, 0);
                while session.is_alive() {
                    sum += entropy(&sac.action_probabilities(session.context(), session.state())?);
                    count += 1;
                    agent.serve(&mut session, catalog)?;
                }
                Ok((sum, count))
            })
            .collect()
    })?;
    let (mut sum, mut count) = (0.0, 0);
    for r in per_session {
        let (s, c) = r?;
        sum += s;
        count += c;
    }
    Ok(sum / count as f64)
}

/// Offline ranking metrics on the validation split plus the conversion rate
/// of replaying the validation sessions under the agent.
pub fn run_eval(config: &ExperimentConfig, checkpoint: &Checkpoint, dataset: &Dataset, workers: usize) -> Result<MetricsReport> {
    checkpoint.check_compatible(config)?;
    if dataset.header.config_digest != config.digest() {
        log::warn!("dataset was generated under a different config digest");
    }
    let agent = &checkpoint.agent;
    let (queries, sessions) = validation_queries(config, agent, dataset, workers)?;
    if queries.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let converted: Vec<bool> = replay_sessions(config, agent, &sessions, workers)?
        .into_iter()
        .map(|r| r.0)
        .collect();
    MetricsReport::build(
        agent.kind().name(),
        &queries,
        &config.harness.hits_k,
        &converted,
        &config.digest(),
        config.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub conversion_rate: f64,
}

impl MetricTriple {
    fn of(r: &MetricsReport) -> Result<Self> {
        Ok(Self {
            mrr: r.mrr,
            hits_at_1: *r
                .hits_at_k
                .get(&1)
                .ok_or_else(|| Error::InvalidArgument("reports lack hits@1".into()))?,
            conversion_rate: r.conversion_rate,
        })
    }

    fn minus(&self, o: &Self) -> Self {
        Self {
            mrr: self.mrr - o.mrr,
            hits_at_1: self.hits_at_1 - o.hits_at_1,
            conversion_rate: self.conversion_rate - o.conversion_rate,
        }
    }

    fn mean(rows: &[&Self]) -> Self {
        let n = rows.len() as f64;
        Self {
            mrr: rows.iter().map(|r| r.mrr).sum::<f64>() / n,
            hits_at_1: rows.iter().map(|r| r.hits_at_1).sum::<f64>() / n,
            conversion_rate: rows.iter().map(|r| r.conversion_rate).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `None` on the mean row.
    pub seed: Option<u64>,
    pub a: MetricTriple,
    pub b: MetricTriple,
    pub delta: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub agent_a: String,
    pub agent_b: String,
    /// One row per seed followed by the mean row.
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn mean(&self) -> &ComparisonRow {
        self.rows.last().expect("comparison has a mean row")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let (a, b) = (&self.agent_a, &self.agent_b);
        let _ = writeln!(
            s,
            "| seed | {a} MRR | {b} MRR | ΔMRR | {a} Hits@1 | {b} Hits@1 | ΔHits@1 | {a} conv | {b} conv | Δconv |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let seed = r.seed.map_or("mean".to_string(), |x| x.to_string());
            let _ = writeln!(
                s,
                "| {seed} | {:.4} | {:.4} | {:+.4} | {:.2}% | {:.2}% | {:+.2} pt | {:.4} | {:.4} | {:+.4} |",
                r.a.mrr,
                r.b.mrr,
                r.delta.mrr,
                100.0 * r.a.hits_at_1,
                100.0 * r.b.hits_at_1,
                100.0 * r.delta.hits_at_1,
                r.a.conversion_rate,
                r.b.conversion_rate,
                r.delta.conversion_rate
            );
        }
        s
    }
}

/// Pairs reports by seed; `delta = a - b`.
pub fn compare(a: &[MetricsReport], b: &[MetricsReport]) -> Result<Comparison> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "need the same non-zero number of reports on both sides, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let name = |rs: &[MetricsReport]| -> Result<String> {
        let n = &rs[0].agent;
        if rs.iter().any(|r| &r.agent != n) {
            return Err(Error::InvalidArgument("one side mixes agents".into()));
        }
        Ok(n.clone())
    };
    let mut rows = Vec::with_capacity(a.len() + 1);
    for (ra, rb) in a.iter().zip(b) {
        if ra.seed != rb.seed || ra.config_digest != rb.config_digest {
            return Err(Error::InvalidArgument(format!(
                "reports for seeds {} and {} come from different configs",
                ra.seed, rb.seed
            )));
        }
        let ks_a: Vec<_> = ra.hits_at_k.keys().collect();
        let ks_b: Vec<_> = rb.hits_at_k.keys().collect();
        if ks_a != ks_b {
            return Err(Error::InvalidArgument("reports carry different hits@k sets".into()));
        }
        let (ma, mb) = (MetricTriple::of(ra)?, MetricTriple::of(rb)?);
        rows.push(ComparisonRow {
            seed: Some(ra.seed),
            delta: ma.minus(&mb),
            a: ma,
            b: mb,
        });
    }
    let ma = MetricTriple::mean(&rows.iter().map(|r| &r.a).collect::<Vec<_>>());
    let mb = MetricTriple::mean(&rows.iter().map(|r| &r.b).collect::<Vec<_>>());
    rows.push(ComparisonRow {
        seed: None,
        delta: ma.minus(&mb),
        a: ma,
        b: mb,
    });
    Ok(Comparison {
        agent_a: name(a)?,
        agent_b: name(b)?,
        rows,
    })
}
