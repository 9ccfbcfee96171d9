//! Exact dynamic programs over small, enumerable versions of the simulator.
//! These are reference values for tests and the `oracle` command, not
//! something agents can see.

use std::collections::BTreeMap;

use crate::env::choice::{check_distinct, Catalog, ChoiceModel, ProfileChoiceModel};
use crate::env::CustomerProfile;
use crate::error::{Error, Result};
use crate::types::{Action, ExposureState};

/// Optimal finite-horizon action values of one customer.
///
/// The horizon counts rounds from session start, so a state whose counts sum
/// to `k` has `horizon - k` rounds left; states with no rounds left have
/// value zero.
#[derive(Debug, Clone)]
pub struct GroundTruthQ {
    n_types: usize,
    horizon: u32,
    values: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl GroundTruthQ {
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn q(&self, state: &ExposureState, action: Action) -> f64 {
        self.values
            .get(state.counts())
            .map_or(0.0, |v| v[action.index()])
    }

    /// Action values of a state with at least one round left.
    pub fn values(&self, state: &ExposureState) -> Option<&[f64]> {
        self.values.get(state.counts()).map(Vec::as_slice)
    }

    /// Optimal action, ties to the lowest index.
    pub fn greedy_action(&self, state: &ExposureState) -> Option<Action> {
        self.values(state).map(|v| Action(argmax(v)))
    }

    pub fn decision_states(&self) -> impl Iterator<Item = ExposureState> + '_ {
        self.values
            .keys()
            .map(|c| ExposureState::from_counts(c.clone()))
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Number of count vectors over `n` types summing to at most `total`, saturating.
fn states_up_to(n: usize, total: u64) -> usize {
    // C(total + n, n)
    let mut acc: u128 = 1;
    for i in 1..=n as u128 {
        acc = acc * (u128::from(total) + i) / i;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Exact `Q*` by backward induction:
/// `Q(s,a) = p_click(s,a) + gamma * (1 - p_depart) * max_a' Q(s + e_a, a')`.
pub fn ground_truth_q(
    profile: &CustomerProfile,
    gamma: f64,
    horizon: u32,
    limit: usize,
) -> Result<GroundTruthQ> {
    let n = profile.n_types();
    let mut values = BTreeMap::new();
    if horizon == 0 {
        return Ok(GroundTruthQ {
            n_types: n,
            horizon,
            values,
        });
    }
    let states = states_up_to(n, u64::from(horizon - 1));
    if states > limit {
        return Err(Error::EnumerationLimit { states, limit });
    }
    let continuation = gamma * (1.0 - profile.departure_probability());
    for layer in (0..horizon).rev() {
        let mut layer_states = Vec::new();
        compositions(layer, n, &mut Vec::with_capacity(n), &mut layer_states);
        for counts in layer_states {
            let state = ExposureState::from_counts(counts.clone());
            let q: Vec<f64> = (0..n)
                .map(|a| {
                    let action = Action(a);
                    let mut next = counts.clone();
                    next[a] += 1;
                    let future = values
                        .get(&next)
                        .map_or(0.0, |v: &Vec<f64>| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    profile.click_probability(&state, action) + continuation * future
                })
                .collect();
            values.insert(counts, q);
        }
    }
    Ok(GroundTruthQ {
        n_types: n,
        horizon,
        values,
    })
}

/// Item-level long-term values `Qbar(s, i)` of a slate policy on the capped
/// state space `counts[t] <= cap`.
#[derive(Debug, Clone)]
pub struct ItemValues {
    cap: u32,
    values: BTreeMap<Vec<u8>, Vec<f64>>,
    slates: BTreeMap<Vec<u8>, Vec<usize>>,
}

impl ItemValues {
    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn item_value(&self, state: &ExposureState, item: usize) -> f64 {
        self.values
            .get(&state.discretize(self.cap))
            .map_or(0.0, |v| v[item])
    }

    /// The slate the evaluated (or optimal) policy shows in `state`.
    pub fn slate(&self, state: &ExposureState) -> Option<&[usize]> {
        self.slates
            .get(&state.discretize(self.cap))
            .map(Vec::as_slice)
    }

    pub fn states(&self) -> impl Iterator<Item = ExposureState> + '_ {
        self.values
            .keys()
            .map(|k| ExposureState::from_counts(k.iter().map(|&c| u32::from(c)).collect()))
    }
}

fn capped_states(n: usize, cap: u32, limit: usize) -> Result<Vec<Vec<u8>>> {
    let count = (cap as usize + 1).checked_pow(n as u32).unwrap_or(usize::MAX);
    if count > limit {
        return Err(Error::EnumerationLimit {
            states: count,
            limit,
        });
    }
    let mut states = vec![Vec::new()];
    for _ in 0..n {
        states = states
            .into_iter()
            .flat_map(|prefix| {
                (0..=cap as u8).map(move |c| {
                    let mut s = prefix.clone();
                    s.push(c);
                    s
                })
            })
            .collect();
    }
    Ok(states)
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

enum SlatePolicy<'a> {
    Fixed(&'a dyn Fn(&ExposureState) -> Vec<usize>),
    Optimal(Vec<Vec<usize>>),
}

fn solve_item_values(
    profile: &CustomerProfile,
    catalog: &Catalog,
    gamma: f64,
    cap: u32,
    limit: usize,
    policy: SlatePolicy<'_>,
) -> Result<ItemValues> {
    match profile.satiation_cap {
        Some(c) if c <= cap => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "item-level oracle needs satiation to saturate at or below the cap {cap}"
            )))
        }
    }
    let n = profile.n_types();
    let states = capped_states(n, cap, limit)?;
    let model = ProfileChoiceModel { profile, catalog };
    let continuation = gamma * (1.0 - profile.departure_probability());
    let index: BTreeMap<&Vec<u8>, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let exposure = |s: &Vec<u8>| ExposureState::from_counts(s.iter().map(|&c| u32::from(c)).collect());

    // successor state index for every (state, item)
    let successors: Vec<Vec<usize>> = states
        .iter()
        .map(|s| {
            (0..catalog.len())
                .map(|i| {
                    let mut next = s.clone();
                    let t = catalog.type_of(i).index();
                    next[t] = (next[t] + 1).min(cap as u8);
                    index[&next]
                })
                .collect()
        })
        .collect();

    // candidate slates with their choice probabilities, per state
    let candidates: Vec<Vec<(Vec<usize>, Vec<f64>)>> = states
        .iter()
        .map(|s| {
            let es = exposure(s);
            let slates = match &policy {
                SlatePolicy::Fixed(f) => vec![f(&es)],
                SlatePolicy::Optimal(all) => all.clone(),
            };
            slates
                .into_iter()
                .map(|slate| {
                    check_distinct(&slate)?;
                    let probs = model.choice_probabilities(&es, &slate)?;
                    Ok((slate, probs.items))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut q = vec![vec![0.0; catalog.len()]; states.len()];
    let mut chosen = vec![0usize; states.len()];
    for _ in 0..1_000_000 {
        let v: Vec<f64> = (0..states.len())
            .map(|si| {
                let mut best = f64::NEG_INFINITY;
                for (ci, (slate, probs)) in candidates[si].iter().enumerate() {
                    let value: f64 = slate.iter().zip(probs).map(|(&i, p)| p * q[si][i]).sum();
                    if value > best {
                        best = value;
                        chosen[si] = ci;
                    }
                }
                best
            })
            .collect();
        let mut delta: f64 = 0.0;
        for si in 0..states.len() {
            for i in 0..catalog.len() {
                let updated = 1.0 + continuation * v[successors[si][i]];
                delta = delta.max((updated - q[si][i]).abs());
                q[si][i] = updated;
            }
        }
        if delta < 1e-14 {
            break;
        }
    }
    let slates = states
        .iter()
        .zip(&chosen)
        .zip(&candidates)
        .map(|((s, &c), cands)| (s.clone(), cands[c].0.clone()))
        .collect();
    Ok(ItemValues {
        cap,
        values: states.into_iter().zip(q).collect(),
        slates,
    })
}

/// `Qbar` of a fixed slate policy: `Qbar(s,i) = 1 + gamma (1 - p_depart) V(s')`
/// with `V(s) = sum_{j in A(s)} P(j | s, A(s)) Qbar(s, j)`. No click ends the
/// session with value zero.
pub fn slate_policy_item_values(
    profile: &CustomerProfile,
    catalog: &Catalog,
    gamma: f64,
    cap: u32,
    limit: usize,
    policy: &dyn Fn(&ExposureState) -> Vec<usize>,
) -> Result<ItemValues> {
    solve_item_values(profile, catalog, gamma, cap, limit, SlatePolicy::Fixed(policy))
}

/// `Qbar` of the optimal slate policy over all `k`-subsets of the catalog.
pub fn optimal_slate_item_values(
    profile: &CustomerProfile,
    catalog: &Catalog,
    gamma: f64,
    cap: u32,
    k: usize,
    limit: usize,
) -> Result<ItemValues> {
    if k == 0 || k > catalog.len() {
        return Err(Error::InvalidArgument(format!(
            "slate size {k} must lie in [1, {}]",
            catalog.len()
        )));
    }
    let slates = k_subsets(catalog.len(), k);
    solve_item_values(profile, catalog, gamma, cap, limit, SlatePolicy::Optimal(slates))
}
