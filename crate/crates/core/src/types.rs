//! Domain types shared by the environment, the agents and the harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels used for the first content types; further types are named `type_<i>`.
const TYPE_NAMES: [&str; 8] = [
    "discount_card",
    "detail_picture",
    "shopping",
    "product_card",
    "live_slice",
    "video_slice",
    "color_test",
    "commodity_display",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContentType {
    pub index: usize,
    pub name: String,
}

/// Dense, uniquely indexed content types `0..n_types`.
pub fn content_types(n_types: usize) -> Vec<ContentType> {
    (0..n_types)
        .map(|index| ContentType {
            index,
            name: TYPE_NAMES
                .get(index)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("type_{index}")),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContentItem {
    pub content_id: String,
    pub content_type: usize,
    /// Only some items carry a tab label.
    pub content_tab: Option<String>,
}

/// Who is being served: the customer and the store they interact with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    pub user_id: String,
    pub store_id: String,
}

impl Context {
    pub fn new(user_id: impl Into<String>, store_id: impl Into<String>) -> Result<Self> {
        let (user_id, store_id) = (user_id.into(), store_id.into());
        if user_id.is_empty() {
            return Err(Error::Empty("user_id"));
        }
        if store_id.is_empty() {
            return Err(Error::Empty("store_id"));
        }
        Ok(Self { user_id, store_id })
    }
}

/// Per-content-type exposure counts within one session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExposureState {
    counts: Vec<u32>,
}

impl ExposureState {
    pub fn zeros(n_types: usize) -> Self {
        Self {
            counts: vec![0; n_types],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_types(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, action: Action) -> u32 {
        self.counts[action.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Counts clipped at `cap`, the key used by tabular learners.
    pub fn discretize(&self, cap: u32) -> Vec<u8> {
        self.counts.iter().map(|&c| c.min(cap) as u8).collect()
    }
}

/// Which content type to expose next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub usize);

impl Action {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn checked(index: usize, n_types: usize) -> Result<Self> {
        if index < n_types {
            Ok(Self(index))
        } else {
            Err(Error::InvalidAction { index, n_types })
        }
    }
}

/// Returns `state` with the exposure count of `action` incremented by one.
pub fn increment_exposure(state: &ExposureState, action: Action) -> Result<ExposureState> {
    let n_types = state.n_types();
    Action::checked(action.index(), n_types)?;
    let mut next = state.clone();
    next.counts[action.index()] += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub context: Context,
    pub state: ExposureState,
    pub action: Action,
    pub reward: f64,
    pub next_state: ExposureState,
    pub done: bool,
    pub timestamp: u64,
}

impl Transition {
    /// Checks the exposure +1 rule and the binary reward.
    pub fn validate(&self) -> Result<()> {
        if self.reward != 0.0 && self.reward != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "reward must be 0 or 1, got {}",
                self.reward
            )));
        }
        let expected = increment_exposure(&self.state, self.action)?;
        if expected != self.next_state {
            return Err(Error::InvalidArgument(format!(
                "next state {:?} is not {:?} plus one exposure of type {}",
                self.next_state.counts(),
                self.state.counts(),
                self.action.index()
            )));
        }
        Ok(())
    }
}
