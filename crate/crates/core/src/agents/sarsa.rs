use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::oracle::argmax;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::types::{Action, Context, ExposureState, Transition};

use super::ActionScorer;

/// Tabular action values over exposure states with counts clipped at `cap`.
/// Unvisited entries read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_types: usize,
    /// Entries per row: one per action, or one per catalog item for SlateQ.
    width: usize,
    cap: u32,
    #[serde(with = "sorted_entries")]
    values: HashMap<Vec<u8>, Vec<f64>>,
}

/// Stores the table as a list sorted by state so serialization is deterministic.
mod sorted_entries {
    use std::collections::HashMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &HashMap<Vec<u8>, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let mut entries: Vec<_> = map.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<HashMap<Vec<u8>, Vec<f64>>, D::Error> {
        let entries: Vec<(Vec<u8>, Vec<f64>)> = Vec::deserialize(d)?;
        Ok(entries.into_iter().collect())
    }
}

impl QTable {
    pub fn new(n_types: usize, cap: u32) -> Self {
        Self::with_width(n_types, n_types, cap)
    }

    pub fn with_width(n_types: usize, width: usize, cap: u32) -> Self {
        Self {
            n_types,
            width,
            cap,
            values: HashMap::new(),
        }
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self, state: &ExposureState) -> Vec<u8> {
        state.discretize(self.cap)
    }

    fn lookup(&self, state: &ExposureState) -> Option<&Vec<f64>> {
        with_key(state, self.cap, |k| self.values.get(k))
    }

    pub fn get(&self, state: &ExposureState, action: Action) -> f64 {
        self.value(state, action.index())
    }

    pub fn value(&self, state: &ExposureState, column: usize) -> f64 {
        self.lookup(state).map_or(0.0, |v| v[column])
    }

    pub fn row(&self, state: &ExposureState) -> Vec<f64> {
        self.lookup(state)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.width])
    }

    pub fn set(&mut self, state: &ExposureState, action: Action, value: f64) {
        self.set_value(state, action.index(), value);
    }

    pub fn set_value(&mut self, state: &ExposureState, column: usize, value: f64) {
        let n = self.width;
        if let Some(row) = with_key(state, self.cap, |k| self.values.get_mut(k)) {
            row[column] = value;
            return;
        }
        self.values.entry(self.key(state)).or_insert_with(|| vec![0.0; n])[column] = value;
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy(&self, state: &ExposureState) -> Action {
        self.lookup(state).map_or(Action(0), |row| Action(argmax(row)))
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.values {
            if k.len() != self.n_types || v.len() != self.width {
                return Err(Error::Checkpoint("q-table row has the wrong width".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("q-table value".into()));
            }
        }
        Ok(())
    }
}

/// Runs `f` on the discretized key without allocating for small type counts.
pub(crate) fn with_key<R>(state: &ExposureState, cap: u32, f: impl FnOnce(&[u8]) -> R) -> R {
    let counts = state.counts();
    if counts.len() <= 32 {
        let mut buf = [0u8; 32];
        for (b, &c) in buf.iter_mut().zip(counts) {
            *b = c.min(cap) as u8;
        }
        f(&buf[..counts.len()])
    } else {
        f(&state.discretize(cap))
    }
}

/// `Q(s,a) <- Q(s,a) + lr * (r + gamma * Q(s',a') - Q(s,a))`, with no
/// bootstrap when the transition ends the session.
pub fn sarsa_update(table: &mut QTable, t: &Transition, next_action: Action, lr: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1)")));
    }
    Action::checked(t.action.index(), table.n_types)?;
    Action::checked(next_action.index(), table.n_types)?;
    if lr == 0.0 {
        return Ok(());
    }
    let bootstrap = if t.done {
        0.0
    } else {
        table.get(&t.next_state, next_action)
    };
    let q = table.get(&t.state, t.action);
    let updated = q + lr * (t.reward + gamma * bootstrap - q);
    if !updated.is_finite() {
        return Err(Error::NonFinite("sarsa update".into()));
    }
    table.set(&t.state, t.action, updated);
    Ok(())
}

/// Exploration rate as a function of how often the state has been visited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsilonSchedule {
    Constant { epsilon: f64 },
    /// `min(1, scale / visits^power)`
    VisitDecay { scale: f64, power: f64 },
}

impl EpsilonSchedule {
    pub fn epsilon(&self, visits: u64) -> f64 {
        match *self {
            Self::Constant { epsilon } => epsilon,
            Self::VisitDecay { scale, power } => (scale / (visits.max(1) as f64).powf(power)).min(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRateSchedule {
    Constant { lr: f64 },
    /// `1 / visits(s,a)`: each entry is the running mean of its targets.
    InverseVisits,
}

/// On-policy TD(0) control with epsilon-greedy exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarsaAgent {
    pub table: QTable,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub lr: LearningRateSchedule,
    #[serde(skip)]
    state_visits: HashMap<Vec<u8>, u64>,
    #[serde(skip)]
    pair_visits: HashMap<(Vec<u8>, usize), u64>,
}

impl SarsaAgent {
    pub fn new(n_types: usize, cap: u32, gamma: f64, epsilon: EpsilonSchedule, lr: LearningRateSchedule) -> Self {
        Self {
            table: QTable::new(n_types, cap),
            gamma,
            epsilon,
            lr,
            state_visits: HashMap::new(),
            pair_visits: HashMap::new(),
        }
    }

    /// Epsilon-greedy action; also counts the state visit when exploring.
    pub fn act(&mut self, state: &ExposureState, explore: bool, rng: &mut SimRng) -> Action {
        if !explore {
            return self.table.greedy(state);
        }
        let visits = self.state_visits.entry(self.table.key(state)).or_insert(0);
        *visits += 1;
        let eps = self.epsilon.epsilon(*visits);
        self.explore_with(state, eps, rng)
    }

    /// Epsilon-greedy draw with a fixed rate; needs no mutable state.
    pub fn explore_with(&self, state: &ExposureState, epsilon: f64, rng: &mut SimRng) -> Action {
        if rng.random::<f64>() < epsilon {
            Action(rng.random_range(0..self.table.n_types()))
        } else {
            self.table.greedy(state)
        }
    }

    pub fn learn(&mut self, t: &Transition, next_action: Action) -> Result<()> {
        let lr = match self.lr {
            LearningRateSchedule::Constant { lr } => lr,
            LearningRateSchedule::InverseVisits => {
                let n = self
                    .pair_visits
                    .entry((self.table.key(&t.state), t.action.index()))
                    .or_insert(0);
                *n += 1;
                1.0 / *n as f64
            }
        };
        sarsa_update(&mut self.table, t, next_action, lr, self.gamma)
    }
}

impl ActionScorer for SarsaAgent {
    fn n_types(&self) -> usize {
        self.table.n_types()
    }

    fn score_actions(&self, _context: &Context, state: &ExposureState, _rng: &mut SimRng) -> Result<Vec<f64>> {
        Ok(self.table.row(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Context;

    fn transition(reward: f64, done: bool) -> Transition {
        Transition {
            context: Context::new("u", "s").unwrap(),
            state: ExposureState::zeros(2),
            action: Action(1),
            reward,
            next_state: ExposureState::from_counts(vec![0, 1]),
            done,
            timestamp: 0,
        }
    }

    #[test]
    fn update_formula() {
        let mut table = QTable::new(2, 5);
        sarsa_update(&mut table, &transition(1.0, false), Action(0), 0.5, 0.9).unwrap();
        assert_eq!(table.get(&ExposureState::zeros(2), Action(1)), 0.5);

        let next = ExposureState::from_counts(vec![0, 1]);
        table.set(&next, Action(0), 2.0);
        sarsa_update(&mut table, &transition(0.0, false), Action(0), 0.5, 0.9).unwrap();
        // 0.5 + 0.5 * (0 + 0.9 * 2 - 0.5)
        assert!((table.get(&ExposureState::zeros(2), Action(1)) - 1.15).abs() < 1e-15);
        sarsa_update(&mut table, &transition(0.0, true), Action(0), 1.0, 0.9).unwrap();
        assert_eq!(table.get(&ExposureState::zeros(2), Action(1)), 0.0);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut table = QTable::new(2, 5);
        table.set(&ExposureState::zeros(2), Action(1), 0.25);
        let before = table.clone();
        sarsa_update(&mut table, &transition(1.0, false), Action(0), 0.0, 0.9).unwrap();
        assert_eq!(table, before);
    }

    #[test]
    fn invalid_ranges() {
        let mut table = QTable::new(2, 5);
        assert!(sarsa_update(&mut table, &transition(1.0, false), Action(0), 1.5, 0.9).is_err());
        assert!(sarsa_update(&mut table, &transition(1.0, false), Action(0), 0.5, 1.0).is_err());
        assert!(sarsa_update(&mut table, &transition(1.0, false), Action(2), 0.5, 0.5).is_err());
    }

    #[test]
    fn discretization_caps_counts() {
        let mut table = QTable::new(2, 2);
        table.set(&ExposureState::from_counts(vec![7, 1]), Action(0), 1.0);
        assert_eq!(table.get(&ExposureState::from_counts(vec![2, 1]), Action(0)), 1.0);
        assert_eq!(table.greedy(&ExposureState::from_counts(vec![3, 1])), Action(0));
        assert_eq!(table.greedy(&ExposureState::zeros(2)), Action(0));
    }

    #[test]
    fn serialization_is_sorted() {
        let mut a = QTable::new(2, 5);
        let mut b = QTable::new(2, 5);
        let states = [vec![0, 1], vec![3, 0], vec![1, 1]];
        for s in &states {
            a.set(&ExposureState::from_counts(s.clone()), Action(0), 1.0);
        }
        for s in states.iter().rev() {
            b.set(&ExposureState::from_counts(s.clone()), Action(0), 1.0);
        }
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let back: QTable = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn schedules() {
        let e = EpsilonSchedule::VisitDecay { scale: 2.0, power: 0.5 };
        assert_eq!(e.epsilon(1), 1.0);
        assert_eq!(e.epsilon(16), 0.5);
        assert_eq!(EpsilonSchedule::Constant { epsilon: 0.1 }.epsilon(99), 0.1);
    }
}
