//! SlateQ: slate values decomposed into item-level values weighted by a user
//! choice model, `Q(s, A) = sum_{i in A} P(i | s, A) Qbar(s, i)`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{check_distinct, logistic, ChoiceModel};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::types::{Action, Context, ExposureState, Transition};

use super::{ActionScorer, QTable};

/// `sum_{i in slate} P(i | s, slate) q_row[i]`; the no-click option adds nothing.
pub fn slate_value(
    state: &ExposureState,
    slate: &[usize],
    q_row: &[f64],
    model: &dyn ChoiceModel,
) -> Result<f64> {
    let probs = model.choice_probabilities(state, slate)?;
    let mut value = 0.0;
    for (&item, p) in slate.iter().zip(&probs.items) {
        let q = *q_row.get(item).ok_or_else(|| {
            Error::InvalidArgument(format!("item {item} has no value entry ({} items)", q_row.len()))
        })?;
        if *p > 0.0 {
            value += p * q;
        }
    }
    Ok(value)
}

/// One on-policy TD step on the clicked item's value:
/// `Qbar(s,i) += lr (r + gamma sum_{j in A'} P(j|s',A') Qbar(s',j) - Qbar(s,i))`.
/// A no-click round changes nothing; `next_slate` is ignored when `done`.
#[allow(clippy::too_many_arguments)]
pub fn slateq_update(
    table: &mut QTable,
    model: &dyn ChoiceModel,
    gamma: f64,
    state: &ExposureState,
    slate: &[usize],
    chosen: Option<usize>,
    reward: f64,
    next_state: &ExposureState,
    next_slate: Option<&[usize]>,
    lr: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
    }
    check_distinct(slate)?;
    let Some(item) = chosen else {
        return Ok(());
    };
    if !slate.contains(&item) {
        return Err(Error::ItemNotInSlate(item));
    }
    if item >= table.width() {
        return Err(Error::InvalidArgument(format!("item {item} outside the value table")));
    }
    if lr == 0.0 {
        return Ok(());
    }
    let bootstrap = match next_slate {
        Some(next) if gamma > 0.0 => slate_value(next_state, next, &table.row(next_state), model)?,
        _ => 0.0,
    };
    let q = table.value(state, item);
    let updated = q + lr * (reward + gamma * bootstrap - q);
    if !updated.is_finite() {
        return Err(Error::NonFinite("slateq update".into()));
    }
    table.set_value(state, item, updated);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlateMode {
    Exhaustive,
    Greedy,
}

fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Picks `k` candidates. Exhaustive mode returns the best k-subset, ties to
/// the lexicographically smallest sorted id set; greedy mode adds the item
/// with the best marginal slate value `k` times, ties to the lowest id.
pub fn select_slate(
    state: &ExposureState,
    candidates: &[usize],
    k: usize,
    q_row: &[f64],
    model: &dyn ChoiceModel,
    mode: SlateMode,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("slate size must be at least 1".into()));
    }
    if k > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "slate size {k} exceeds {} candidates",
            candidates.len()
        )));
    }
    check_distinct(candidates)?;
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    match mode {
        SlateMode::Exhaustive => {
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut slate = vec![0; k];
            let mut failure = None;
            for_each_subset(sorted.len(), k, |idx| {
                for (s, &i) in slate.iter_mut().zip(idx) {
                    *s = sorted[i];
                }
                match slate_value(state, &slate, q_row, model) {
                    Ok(v) => {
                        if best.as_ref().is_none_or(|(b, _)| v > *b) {
                            best = Some((v, slate.clone()));
                        }
                    }
                    Err(e) => failure = failure.take().or(Some(e)),
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(best.expect("at least one subset").1)
        }
        SlateMode::Greedy => {
            let mut slate: Vec<usize> = Vec::with_capacity(k);
            for _ in 0..k {
                let mut best: Option<(f64, usize)> = None;
                for &c in &sorted {
                    if slate.contains(&c) {
                        continue;
                    }
                    slate.push(c);
                    let v = slate_value(state, &slate, q_row, model)?;
                    slate.pop();
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, c));
                    }
                }
                slate.push(best.expect("candidates remain").1);
            }
            Ok(slate)
        }
    }
}

/// Logistic click model learned from single-exposure logs:
/// `u(s, i) = theta[type(i)] - beta * count[type(i)]`, no-click utility 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedChoiceModel {
    pub item_types: Vec<usize>,
    pub type_utility: Vec<f64>,
    pub satiation: f64,
}

impl FittedChoiceModel {
    /// Full-batch gradient descent on the mean log-loss of `click ~ logistic(u)`.
    pub fn fit<'a>(
        item_types: Vec<usize>,
        n_types: usize,
        logs: impl IntoIterator<Item = &'a Transition>,
        iterations: usize,
    ) -> Result<Self> {
        // (type, count) -> (clicks, exposures)
        let mut cells: std::collections::BTreeMap<(usize, u32), (f64, f64)> = Default::default();
        for t in logs {
            let a = Action::checked(t.action.index(), n_types)?;
            let e = cells.entry((a.index(), t.state.count(a))).or_insert((0.0, 0.0));
            e.0 += t.reward;
            e.1 += 1.0;
        }
        let total: f64 = cells.values().map(|c| c.1).sum();
        if total == 0.0 {
            return Err(Error::Empty("choice-model training logs"));
        }
        let mut params = vec![0.0; n_types + 1];
        let mut opt = crate::nn::Adam::new(n_types + 1, 0.05);
        for _ in 0..iterations {
            let mut grads = vec![0.0; n_types + 1];
            for (&(a, c), &(clicks, n)) in &cells {
                let p = logistic(params[a] - params[n_types] * f64::from(c));
                let g = (n * p - clicks) / total;
                grads[a] += g;
                grads[n_types] -= g * f64::from(c);
            }
            opt.step(&mut params, &grads)?;
        }
        Ok(Self {
            item_types,
            satiation: params[n_types],
            type_utility: params[..n_types].to_vec(),
        })
    }
}

impl ChoiceModel for FittedChoiceModel {
    fn item_utility(&self, state: &ExposureState, item: usize) -> f64 {
        let t = self.item_types[item];
        self.type_utility[t] - self.satiation * f64::from(state.counts()[t])
    }

    fn null_utility(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateQAgent {
    /// One column per catalog item.
    pub table: QTable,
    pub choice: FittedChoiceModel,
    pub slate_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon: f64,
}

/// Exhaustive search is used while the number of subsets stays below this.
const EXHAUSTIVE_LIMIT: u128 = 20_000;

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

impl SlateQAgent {
    pub fn new(choice: FittedChoiceModel, n_types: usize, cap: u32, slate_size: usize, gamma: f64, lr: f64, epsilon: f64) -> Result<Self> {
        let n_items = choice.item_types.len();
        if slate_size == 0 || slate_size > n_items {
            return Err(Error::InvalidConfig(format!(
                "slate size {slate_size} must lie in [1, {n_items}]"
            )));
        }
        if choice.type_utility.len() != n_types || choice.item_types.iter().any(|&t| t >= n_types) {
            return Err(Error::InvalidConfig("choice model does not match content types".into()));
        }
        Ok(Self {
            table: QTable::with_width(n_types, n_items, cap),
            choice,
            slate_size,
            gamma,
            lr,
            epsilon,
        })
    }

    pub fn n_items(&self) -> usize {
        self.table.width()
    }

    pub fn mode(&self) -> SlateMode {
        if binomial(self.n_items(), self.slate_size) <= EXHAUSTIVE_LIMIT {
            SlateMode::Exhaustive
        } else {
            SlateMode::Greedy
        }
    }

    pub fn best_slate(&self, state: &ExposureState) -> Result<Vec<usize>> {
        let candidates: Vec<usize> = (0..self.n_items()).collect();
        select_slate(state, &candidates, self.slate_size, &self.table.row(state), &self.choice, self.mode())
    }

    /// Epsilon-greedy over slates: a uniformly random k-subset with probability epsilon.
    pub fn act<R: Rng + ?Sized>(&self, state: &ExposureState, explore: bool, rng: &mut R) -> Result<Vec<usize>> {
        if explore && rng.random::<f64>() < self.epsilon {
            let mut slate = sample(rng, self.n_items(), self.slate_size).into_vec();
            slate.sort_unstable();
            return Ok(slate);
        }
        self.best_slate(state)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn learn(
        &mut self,
        state: &ExposureState,
        slate: &[usize],
        chosen: Option<usize>,
        reward: f64,
        next_state: &ExposureState,
        next_slate: Option<&[usize]>,
    ) -> Result<()> {
        slateq_update(
            &mut self.table,
            &self.choice,
            self.gamma,
            state,
            slate,
            chosen,
            reward,
            next_state,
            next_slate,
            self.lr,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.table.validate()?;
        if self.choice.item_types.len() != self.table.width() {
            return Err(Error::Checkpoint("choice model and value table disagree on items".into()));
        }
        Ok(())
    }
}

impl ActionScorer for SlateQAgent {
    fn n_types(&self) -> usize {
        self.table.n_types()
    }

    /// A type scores the best single-item slate value among its items.
    fn score_actions(&self, _context: &Context, state: &ExposureState, _rng: &mut SimRng) -> Result<Vec<f64>> {
        let row = self.table.row(state);
        let mut scores = vec![f64::NEG_INFINITY; self.n_types()];
        for (item, &t) in self.choice.item_types.iter().enumerate() {
            let v = slate_value(state, &[item], &row, &self.choice)?;
            scores[t] = scores[t].max(v);
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{slate_policy_item_values, Catalog, CustomerProfile, ProfileChoiceModel};
    use crate::rng::seeded_rng;

    struct Fixed {
        utilities: Vec<f64>,
        null: f64,
    }

    impl ChoiceModel for Fixed {
        fn item_utility(&self, _state: &ExposureState, item: usize) -> f64 {
            self.utilities[item]
        }

        fn null_utility(&self) -> f64 {
            self.null
        }
    }

    fn random_model(rng: &mut SimRng, n: usize) -> (Fixed, Vec<f64>) {
        let model = Fixed {
            utilities: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            null: rng.random_range(-1.0..1.0),
        };
        let q = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        (model, q)
    }

    #[test]
    fn value_edge_cases() {
        let s = ExposureState::zeros(2);
        let certain = Fixed {
            utilities: vec![0.0, 0.0, 0.0],
            null: f64::NEG_INFINITY,
        };
        assert_eq!(slate_value(&s, &[1], &[0.3, 0.7, 0.1], &certain).unwrap(), 0.7);
        let (m, _) = random_model(&mut seeded_rng(1), 3);
        assert_eq!(slate_value(&s, &[0, 2], &[0.0; 3], &m).unwrap(), 0.0);
        assert!(matches!(
            slate_value(&s, &[0, 0], &[0.0; 3], &m),
            Err(Error::DuplicateItem(0))
        ));
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        let mut rng = seeded_rng(7);
        let s = ExposureState::zeros(1);
        for _ in 0..50 {
            let n = rng.random_range(2..=9);
            let (m, q) = random_model(&mut rng, n);
            let k = rng.random_range(1..=n);
            let candidates: Vec<usize> = (0..n).collect();
            let got = select_slate(&s, &candidates, k, &q, &m, SlateMode::Exhaustive).unwrap();
            // brute force over bitmasks
            let mut best: Option<(f64, Vec<usize>)> = None;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let slate: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let v = slate_value(&s, &slate, &q, &m).unwrap();
                let better = match &best {
                    None => true,
                    Some((b, bs)) => v > *b || (v == *b && slate < *bs),
                };
                if better {
                    best = Some((v, slate));
                }
            }
            assert_eq!(got, best.unwrap().1);
        }
    }

    #[test]
    fn full_candidate_set_and_errors() {
        let (m, q) = random_model(&mut seeded_rng(2), 4);
        let s = ExposureState::zeros(1);
        assert_eq!(
            select_slate(&s, &[3, 1, 0, 2], 4, &q, &m, SlateMode::Exhaustive).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(select_slate(&s, &[0, 1], 0, &q, &m, SlateMode::Exhaustive).is_err());
        assert!(select_slate(&s, &[0, 1], 3, &q, &m, SlateMode::Greedy).is_err());
    }

    #[test]
    fn ties_pick_smallest_ids() {
        let m = Fixed {
            utilities: vec![0.0; 4],
            null: 0.0,
        };
        let s = ExposureState::zeros(1);
        let slate = select_slate(&s, &[2, 3, 0, 1], 2, &[1.0; 4], &m, SlateMode::Exhaustive).unwrap();
        assert_eq!(slate, vec![0, 1]);
        let slate = select_slate(&s, &[2, 3, 0, 1], 2, &[1.0; 4], &m, SlateMode::Greedy).unwrap();
        assert_eq!(slate, vec![0, 1]);
    }

    #[test]
    fn greedy_close_to_exhaustive() {
        let mut rng = seeded_rng(11);
        let s = ExposureState::zeros(1);
        let mut worst: f64 = 1.0;
        for _ in 0..20 {
            let (m, q) = random_model(&mut rng, 8);
            let candidates: Vec<usize> = (0..8).collect();
            let ex = select_slate(&s, &candidates, 3, &q, &m, SlateMode::Exhaustive).unwrap();
            let gr = select_slate(&s, &candidates, 3, &q, &m, SlateMode::Greedy).unwrap();
            let ratio = slate_value(&s, &gr, &q, &m).unwrap() / slate_value(&s, &ex, &q, &m).unwrap();
            worst = worst.min(ratio);
        }
        assert!(worst >= 0.9, "worst greedy/exhaustive ratio {worst}");
    }

    #[test]
    fn update_rules() {
        let m = Fixed {
            utilities: vec![0.0, 1.0, -1.0],
            null: 0.0,
        };
        let s = ExposureState::zeros(2);
        let s2 = ExposureState::from_counts(vec![1, 0]);
        let mut table = QTable::with_width(2, 3, 5);
        slateq_update(&mut table, &m, 0.5, &s, &[0, 1], Some(1), 1.0, &s2, Some(&[0, 2]), 0.5).unwrap();
        assert_eq!(table.value(&s, 1), 0.5);
        table.set_value(&s2, 0, 2.0);
        let before = table.clone();
        slateq_update(&mut table, &m, 0.5, &s, &[0, 1], None, 0.0, &s2, Some(&[0, 2]), 0.5).unwrap();
        assert_eq!(table, before);
        slateq_update(&mut table, &m, 0.5, &s, &[0, 1], Some(0), 1.0, &s2, Some(&[0, 2]), 0.0).unwrap();
        assert_eq!(table, before);
        assert!(matches!(
            slateq_update(&mut table, &m, 0.5, &s, &[0, 1], Some(2), 1.0, &s2, None, 0.5),
            Err(Error::ItemNotInSlate(2))
        ));
        // bootstrap: P(0 | [0,2]) = 1 / (1 + 1 + e^-1)
        slateq_update(&mut table, &m, 0.5, &s, &[0, 1], Some(0), 1.0, &s2, Some(&[0, 2]), 1.0).unwrap();
        let p0 = 1.0 / (2.0 + (-1f64).exp());
        assert!((table.value(&s, 0) - (1.0 + 0.5 * p0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn myopic_values_regress_to_reward() {
        let m = Fixed {
            utilities: vec![0.0, 0.0],
            null: 0.0,
        };
        let s = ExposureState::zeros(1);
        let mut table = QTable::with_width(1, 2, 5);
        let mut rng = seeded_rng(3);
        for n in 1..=20_000u32 {
            let r = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
            slateq_update(&mut table, &m, 0.0, &s, &[0, 1], Some(1), r, &s, Some(&[0, 1]), 1.0 / f64::from(n)).unwrap();
        }
        assert!((table.value(&s, 1) - 0.3).abs() < 0.02);
    }

    fn oracle_setup() -> (CustomerProfile, Catalog) {
        let profile = CustomerProfile {
            base_utility: vec![0.6, -0.2],
            satiation_rate: 0.8,
            satiation_cap: Some(1),
            patience: 4.0,
            null_utility: 0.0,
            deal_prob: 0.0,
        };
        let catalog = Catalog::new(
            vec![
                crate::types::ContentItem { content_id: "a".into(), content_type: 0, content_tab: None },
                crate::types::ContentItem { content_id: "b".into(), content_type: 0, content_tab: None },
                crate::types::ContentItem { content_id: "c".into(), content_type: 1, content_tab: None },
            ],
            vec![0.0, -0.4, 0.3],
        )
        .unwrap();
        (profile, catalog)
    }

    #[test]
    fn learned_item_values_match_dynamic_programming() {
        let (profile, catalog) = oracle_setup();
        let policy = |s: &ExposureState| if s.counts()[0] == 0 { vec![0, 2] } else { vec![1, 2] };
        let gamma = 0.8;
        let oracle = slate_policy_item_values(&profile, &catalog, gamma, 1, 100, &policy).unwrap();
        let model = ProfileChoiceModel { profile: &profile, catalog: &catalog };
        let mut table = QTable::with_width(2, 3, 1);
        let mut visits = std::collections::HashMap::new();
        for id in 0..100_000u64 {
            let mut session = crate::env::Session::new(id, Context::new("u", "s").unwrap(), profile.clone(), 5, 0, u32::MAX);
            while session.is_alive() {
                let state = session.state().clone();
                let slate = policy(&state);
                let out = session.step_slate(&catalog, &slate).unwrap();
                let t = &out.step.transition;
                let next = (!t.done).then(|| policy(&t.next_state));
                let n = visits.entry((t.state.discretize(1), out.chosen)).or_insert(0u32);
                *n += 1;
                slateq_update(&mut table, &model, gamma, &state, &slate, out.chosen, t.reward, &t.next_state, next.as_deref(), 1.0 / f64::from(*n)).unwrap();
            }
        }
        for s in oracle.states() {
            for &i in &policy(&s) {
                let (got, want) = (table.value(&s, i), oracle.item_value(&s, i));
                assert!((got - want).abs() < 1e-2, "state {:?} item {i}: {got} vs {want}", s.counts());
            }
        }
    }

    #[test]
    fn fitted_model_recovers_logistic_parameters() {
        let (theta, beta) = ([0.4, -0.8], 0.5);
        let mut rng = seeded_rng(21);
        let mut logs = Vec::new();
        for i in 0..40_000 {
            let a = Action(rng.random_range(0..2));
            let counts = vec![rng.random_range(0..4), rng.random_range(0..4)];
            let state = ExposureState::from_counts(counts);
            let p = logistic(theta[a.index()] - beta * f64::from(state.count(a)));
            logs.push(Transition {
                context: Context::new("u", "s").unwrap(),
                next_state: crate::types::increment_exposure(&state, a).unwrap(),
                state,
                action: a,
                reward: if rng.random::<f64>() < p { 1.0 } else { 0.0 },
                done: false,
                timestamp: i,
            });
        }
        let fitted = FittedChoiceModel::fit(vec![0, 0, 1], 2, &logs, 2000).unwrap();
        assert!((fitted.type_utility[0] - 0.4).abs() < 0.08, "{fitted:?}");
        assert!((fitted.type_utility[1] + 0.8).abs() < 0.08, "{fitted:?}");
        assert!((fitted.satiation - 0.5).abs() < 0.05, "{fitted:?}");
        assert!(FittedChoiceModel::fit(vec![0], 2, &[], 10).is_err());
    }

    #[test]
    fn agent_scores_and_slates() {
        let choice = FittedChoiceModel {
            item_types: vec![0, 0, 1, 2],
            type_utility: vec![0.0, 0.0, 0.0],
            satiation: 0.0,
        };
        let mut agent = SlateQAgent::new(choice, 3, 5, 2, 0.5, 0.1, 0.0).unwrap();
        let s = ExposureState::zeros(3);
        agent.table.set_value(&s, 1, 2.0);
        agent.table.set_value(&s, 3, 1.0);
        let mut rng = seeded_rng(0);
        let scores = agent.score_actions(&Context::new("u", "s").unwrap(), &s, &mut rng).unwrap();
        assert_eq!(scores, vec![1.0, 0.0, 0.5]);
        assert_eq!(agent.act(&s, true, &mut rng).unwrap(), vec![1, 3]);
        assert!(SlateQAgent::new(agent.choice.clone(), 3, 5, 5, 0.5, 0.1, 0.0).is_err());
    }
}
