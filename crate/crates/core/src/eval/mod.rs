//! Offline ranking metrics and the train/validation time split.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Action;

/// One ranking produced by a model, with the 1-based rank of the relevant
/// action if the round had one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query_id: u64,
    pub ranking: Vec<Action>,
    pub relevant_rank: Option<usize>,
}

impl RankedQuery {
    /// `ranking` must be a permutation of `0..ranking.len()`.
    pub fn new(query_id: u64, ranking: Vec<Action>, relevant: Option<Action>) -> Result<Self> {
        let n = ranking.len();
        let mut seen = vec![false; n];
        for a in &ranking {
            let i = Action::checked(a.index(), n)?.index();
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("action {i} ranked twice")));
            }
        }
        let relevant_rank = match relevant {
            None => None,
            Some(r) => Some(
                ranking
                    .iter()
                    .position(|&a| a == r)
                    .ok_or(Error::InvalidAction { index: r.index(), n_types: n })?
                    + 1,
            ),
        };
        Ok(Self {
            query_id,
            ranking,
            relevant_rank,
        })
    }

    /// A query over `n` actions whose relevant action sits at `rank`.
    pub fn with_rank(query_id: u64, n: usize, rank: Option<usize>) -> Result<Self> {
        if let Some(r) = rank {
            if r == 0 || r > n {
                return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
            }
        }
        let ranking = (0..n).map(Action).collect();
        Self::new(query_id, ranking, rank.map(|r| Action(r - 1)))
    }

    pub fn reciprocal_rank(&self) -> f64 {
        self.relevant_rank.map_or(0.0, |r| 1.0 / r as f64)
    }
}

/// Mean reciprocal rank; queries without a relevant action count as 0.
pub fn mrr(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty("query list"));
    }
    Ok(queries.iter().map(RankedQuery::reciprocal_rank).sum::<f64>() / queries.len() as f64)
}

/// Fraction of queries whose relevant action is ranked `k` or better.
pub fn hits_at_k(queries: &[RankedQuery], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("hits@k needs k >= 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::Empty("query list"));
    }
    let hits = queries
        .iter()
        .filter(|q| q.relevant_rank.is_some_and(|r| r <= k))
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Fraction of sessions with at least one deal.
pub fn conversion_rate(converted: &[bool]) -> Result<f64> {
    if converted.is_empty() {
        return Err(Error::Empty("session list"));
    }
    Ok(converted.iter().filter(|&&c| c).count() as f64 / converted.len() as f64)
}

/// Anything that belongs to a session and happened at a point in time.
pub trait SessionRecord {
    fn session_id(&self) -> u64;
    fn timestamp(&self) -> u64;
}

/// Splits whole sessions by the timestamp of their first record: sessions
/// starting before `split` go to training, the rest to validation. Input
/// order is preserved on both sides.
pub fn time_split<T: SessionRecord + Clone>(records: &[T], split: u64) -> (Vec<T>, Vec<T>) {
    let mut first: HashMap<u64, u64> = HashMap::new();
    for r in records {
        first
            .entry(r.session_id())
            .and_modify(|t| *t = (*t).min(r.timestamp()))
            .or_insert(r.timestamp());
    }
    if let (Some(lo), Some(hi)) = (first.values().min(), first.values().max()) {
        if split <= *lo || split > *hi {
            log::warn!("split timestamp {split} lies outside the observed session starts [{lo}, {hi}]");
        }
    }
    records
        .iter()
        .cloned()
        .partition(|r| first[&r.session_id()] < split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub agent: String,
    /// Mean reciprocal rank over all validation rounds.
    pub mrr: f64,
    /// Mean reciprocal rank over rounds that had a click.
    pub mrr_on_relevant: f64,
    pub hits_at_k: BTreeMap<usize, f64>,
    /// Hits@K over rounds that had a click.
    pub hits_at_k_on_relevant: BTreeMap<usize, f64>,
    pub conversion_rate: f64,
    pub queries: usize,
    pub relevant_queries: usize,
    pub sessions: usize,
    pub config_digest: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn build(
        agent: &str,
        queries: &[RankedQuery],
        ks: &[usize],
        converted: &[bool],
        config_digest: &str,
        seed: u64,
    ) -> Result<Self> {
        let relevant: Vec<RankedQuery> = queries
            .iter()
            .filter(|q| q.relevant_rank.is_some())
            .cloned()
            .collect();
        let on_relevant = |f: &dyn Fn(&[RankedQuery]) -> Result<f64>| {
            if relevant.is_empty() {
                Ok(0.0)
            } else {
                f(&relevant)
            }
        };
        let mut hits = BTreeMap::new();
        let mut hits_rel = BTreeMap::new();
        for &k in ks {
            hits.insert(k, hits_at_k(queries, k)?);
            hits_rel.insert(k, on_relevant(&|q| hits_at_k(q, k))?);
        }
        Ok(Self {
            agent: agent.to_string(),
            mrr: mrr(queries)?,
            mrr_on_relevant: on_relevant(&|q| mrr(q))?,
            hits_at_k: hits,
            hits_at_k_on_relevant: hits_rel,
            conversion_rate: conversion_rate(converted)?,
            queries: queries.len(),
            relevant_queries: relevant.len(),
            sessions: converted.len(),
            config_digest: config_digest.to_string(),
            seed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn queries(ranks: &[Option<usize>]) -> Vec<RankedQuery> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| RankedQuery::with_rank(i as u64, 10, r).unwrap())
            .collect()
    }

    #[test]
    fn mrr_fixtures() {
        assert_eq!(mrr(&queries(&[Some(1), Some(1)])).unwrap(), 1.0);
        assert_eq!(mrr(&queries(&[Some(2)])).unwrap(), 0.5);
        assert_eq!(mrr(&queries(&[Some(1), Some(2), Some(4)])).unwrap(), (1.0 + 0.5 + 0.25) / 3.0);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn hits_fixtures() {
        assert_eq!(hits_at_k(&queries(&[Some(3)]), 1).unwrap(), 0.0);
        assert_eq!(hits_at_k(&queries(&[Some(3)]), 3).unwrap(), 1.0);
        assert_eq!(hits_at_k(&queries(&[None, None]), 3).unwrap(), 0.0);
        assert_eq!(hits_at_k(&queries(&[Some(1), Some(5), Some(2), Some(9)]), 2).unwrap(), 0.5);
        assert!(hits_at_k(&queries(&[Some(1)]), 0).is_err());
    }

    #[test]
    fn conversion_fixtures() {
        assert_eq!(conversion_rate(&[false; 4]).unwrap(), 0.0);
        assert_eq!(conversion_rate(&[true; 4]).unwrap(), 1.0);
        let mut eight = [false; 8];
        eight[1] = true;
        eight[4] = true;
        eight[7] = true;
        assert_eq!(conversion_rate(&eight).unwrap(), 0.375);
        assert!(conversion_rate(&[]).is_err());
    }

    #[test]
    fn query_validation() {
        assert!(RankedQuery::new(0, vec![Action(0), Action(0)], None).is_err());
        assert!(RankedQuery::new(0, vec![Action(0), Action(2)], None).is_err());
        let q = RankedQuery::new(0, vec![Action(2), Action(0), Action(1)], Some(Action(1))).unwrap();
        assert_eq!(q.relevant_rank, Some(3));
        assert!(RankedQuery::new(0, vec![Action(1), Action(0)], Some(Action(5))).is_err());
    }

    #[derive(Debug, Clone, PartialEq)]
    struct Rec {
        session: u64,
        t: u64,
    }

    impl SessionRecord for Rec {
        fn session_id(&self) -> u64 {
            self.session
        }
        fn timestamp(&self) -> u64 {
            self.t
        }
    }

    fn sessions() -> Vec<Rec> {
        // session s starts at 10 s and lasts s % 4 + 1 rounds, so sessions overlap the split
        (0..10u64)
            .flat_map(|s| (0..s % 4 + 1).map(move |k| Rec { session: s, t: 10 * s + 7 * k }))
            .collect()
    }

    #[test]
    fn split_extremes() {
        let data = sessions();
        let (train, val) = time_split(&data, 0);
        assert!(train.is_empty());
        assert_eq!(val, data);
        let (train, val) = time_split(&data, 1000);
        assert!(val.is_empty());
        assert_eq!(train, data);
    }

    #[test]
    fn split_at_median_start() {
        let data = sessions();
        let mut starts: Vec<u64> = (0..10).map(|s| 10 * s).collect();
        starts.sort_unstable();
        let median = starts[5];
        let (train, val) = time_split(&data, median);
        let brute_train: Vec<Rec> = data.iter().filter(|r| r.session < 5).cloned().collect();
        let brute_val: Vec<Rec> = data.iter().filter(|r| r.session >= 5).cloned().collect();
        assert_eq!(train, brute_train);
        assert_eq!(val, brute_val);
        // session 4 has records after the split yet stays whole in training
        assert!(train.iter().any(|r| r.t >= median));
    }

    #[test]
    fn report_round_trip() {
        let q = queries(&[Some(1), None, Some(4)]);
        let report = MetricsReport::build("sac", &q, &[1, 3], &[true, false], "abc", 7).unwrap();
        assert_eq!(report.mrr, (1.0 + 0.25) / 3.0);
        assert_eq!(report.mrr_on_relevant, (1.0 + 0.25) / 2.0);
        assert_eq!(report.hits_at_k[&1], 1.0 / 3.0);
        assert_eq!(report.hits_at_k_on_relevant[&3], 0.5);
        assert_eq!(report.conversion_rate, 0.5);
        let text = report.to_json().unwrap();
        assert_eq!(MetricsReport::from_json(&text).unwrap(), report);
    }

    fn rank_lists() -> impl Strategy<Value = Vec<Option<usize>>> {
        prop::collection::vec(prop::option::of(1usize..=8), 1..60)
    }

    proptest! {
        #[test]
        fn metrics_ignore_query_order(ranks in rank_lists(), seed in any::<u64>()) {
            let q = queries(&ranks);
            let mut shuffled = q.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::seeded_rng(seed));
            prop_assert!((mrr(&q).unwrap() - mrr(&shuffled).unwrap()).abs() < 1e-12);
            for k in 1..=8 {
                prop_assert_eq!(hits_at_k(&q, k).unwrap(), hits_at_k(&shuffled, k).unwrap());
            }
        }

        #[test]
        fn hits_monotone_and_mrr_bounded(ranks in rank_lists()) {
            let q: Vec<RankedQuery> = ranks
                .iter()
                .enumerate()
                .map(|(i, &r)| RankedQuery::with_rank(i as u64, 8, r).unwrap())
                .collect();
            let mut prev = 0.0;
            for k in 1..=8 {
                let h = hits_at_k(&q, k).unwrap();
                prop_assert!(h >= prev);
                prev = h;
            }
            let any = ranks.iter().filter(|r| r.is_some()).count() as f64 / ranks.len() as f64;
            prop_assert_eq!(prev, any);
            let h1 = hits_at_k(&q, 1).unwrap();
            let m = mrr(&q).unwrap();
            let brute = ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64;
            prop_assert!((m - brute).abs() < 1e-12);
            prop_assert!(m <= h1 + 0.5 * (1.0 - h1) + 1e-12);
        }

        #[test]
        fn split_is_partition(split in 0u64..120) {
            let data = sessions();
            let (train, val) = time_split(&data, split);
            prop_assert_eq!(train.len() + val.len(), data.len());
            for r in &data {
                prop_assert!(train.contains(r) != val.contains(r));
            }
            for r in &train {
                prop_assert!(val.iter().all(|v| v.session != r.session));
            }
        }
    }
}
