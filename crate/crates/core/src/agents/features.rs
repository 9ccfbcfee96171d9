use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::rng::fnv1a;
use crate::types::{Context, ExposureState};

/// Network input: exposure counts scaled by `1 / (1 + count_cap)`, then
/// one-hot user and store hash buckets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub n_types: usize,
    pub count_cap: u32,
    pub user_buckets: usize,
    pub store_buckets: usize,
}

impl Featurizer {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            n_types: config.n_types(),
            count_cap: config.agent.count_cap,
            user_buckets: config.agent.user_buckets,
            store_buckets: config.agent.store_buckets,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_types + self.user_buckets + self.store_buckets
    }

    pub fn user_bucket(&self, context: &Context) -> usize {
        (fnv1a(context.user_id.as_bytes()) % self.user_buckets as u64) as usize
    }

    pub fn store_bucket(&self, context: &Context) -> usize {
        (fnv1a(context.store_id.as_bytes()) % self.store_buckets as u64) as usize
    }

    pub fn encode(&self, context: &Context, state: &ExposureState) -> Vec<f64> {
        let scale = 1.0 / (1.0 + f64::from(self.count_cap));
        let mut x = Vec::with_capacity(self.dim());
        x.extend(state.counts().iter().map(|&c| f64::from(c) * scale));
        x.resize(self.dim(), 0.0);
        x[self.n_types + self.user_bucket(context)] = 1.0;
        x[self.n_types + self.user_buckets + self.store_bucket(context)] = 1.0;
        x
    }
}
