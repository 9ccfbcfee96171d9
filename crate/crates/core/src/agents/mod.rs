//! Decision agents: discrete soft actor-critic, tabular SARSA, SlateQ and the
//! static DeepFM baseline.

pub mod dfm;
mod features;
mod replay;
pub mod sac;
pub mod sarsa;
pub mod slateq;

pub use dfm::{DfmAgent, DfmExample, DfmModel};
pub use features::Featurizer;
pub use replay::ReplayBuffer;
pub use sac::{entropy, SacAgent, SacLosses, SacParams};
pub use sarsa::{sarsa_update, EpsilonSchedule, LearningRateSchedule, QTable, SarsaAgent};
pub use slateq::{select_slate, slate_value, slateq_update, FittedChoiceModel, SlateMode, SlateQAgent};

use crate::env::oracle::argmax;
use crate::error::Result;
use crate::rng::SimRng;
use crate::types::{Action, Context, ExposureState};

/// Anything that can score every content type for a customer; higher is better.
pub trait ActionScorer {
    fn n_types(&self) -> usize;

    fn score_actions(&self, context: &Context, state: &ExposureState, rng: &mut SimRng) -> Result<Vec<f64>>;

    /// Best-scoring action, ties to the lowest index.
    fn greedy_action(&self, context: &Context, state: &ExposureState, rng: &mut SimRng) -> Result<Action> {
        Ok(Action(argmax(&self.score_actions(context, state, rng)?)))
    }
}

/// Scores every action with an independent uniform draw, so rankings are
/// uniformly random permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RandomAgent {
    pub n_types: usize,
}

impl RandomAgent {
    pub fn act(&self, rng: &mut SimRng) -> Action {
        use rand::Rng;
        Action(rng.random_range(0..self.n_types))
    }
}

impl ActionScorer for RandomAgent {
    fn n_types(&self) -> usize {
        self.n_types
    }

    fn score_actions(&self, _context: &Context, _state: &ExposureState, rng: &mut SimRng) -> Result<Vec<f64>> {
        use rand::Rng;
        Ok((0..self.n_types).map(|_| rng.random::<f64>()).collect())
    }
}

/// Actions ordered by descending score, ties to the lowest index.
pub fn rank_actions(scores: &[f64]) -> Vec<Action> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(Action).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_index() {
        let ranked = rank_actions(&[0.1, 0.5, 0.1, 0.5]);
        assert_eq!(ranked, vec![Action(1), Action(3), Action(0), Action(2)]);
    }
}
