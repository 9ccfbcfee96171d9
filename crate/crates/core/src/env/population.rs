use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, ExperimentConfig};
use crate::env::{Catalog, Session};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};
use crate::types::{Action, Context, ExposureState};

/// Hidden ground-truth preferences of one customer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    pub base_utility: Vec<f64>,
    pub satiation_rate: f64,
    /// Exposure count beyond which satiation stops growing.
    pub satiation_cap: Option<u32>,
    pub patience: f64,
    pub null_utility: f64,
    pub deal_prob: f64,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl CustomerProfile {
    pub fn n_types(&self) -> usize {
        self.base_utility.len()
    }

    fn satiated_count(&self, count: u32) -> f64 {
        f64::from(self.satiation_cap.map_or(count, |cap| count.min(cap)))
    }

    /// Utility of exposing content type `action` in `state`.
    pub fn utility(&self, state: &ExposureState, action: Action) -> f64 {
        self.base_utility[action.index()]
            - self.satiation_rate * self.satiated_count(state.count(action))
    }

    pub fn click_probability(&self, state: &ExposureState, action: Action) -> f64 {
        logistic(self.utility(state, action) - self.null_utility)
    }

    /// Per-step probability of leaving; gives a geometric session length with mean `patience`.
    pub fn departure_probability(&self) -> f64 {
        (1.0 / self.patience).clamp(0.0, 1.0)
    }
}

/// Seeded customer population: store preference offsets, the item catalog and
/// per-user latent traits.
#[derive(Debug, Clone)]
pub struct Population {
    seed: u64,
    n_types: usize,
    params: EnvConfig,
    store_offsets: Vec<Vec<f64>>,
    catalog: Catalog,
}

impl Population {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let n_types = config.n_types();
        let params = config.env.clone();
        let mut rng = stream_rng(config.seed, purpose::POPULATION, 0);
        let store_dist = normal(params.store_utility_std)?;
        let store_offsets = (0..params.n_stores)
            .map(|_| (0..n_types).map(|_| store_dist.sample(&mut rng)).collect())
            .collect();
        let catalog = Catalog::generate(
            n_types,
            config.content.items_per_type,
            params.item_utility_std,
            &mut stream_rng(config.seed, purpose::POPULATION, 1),
        )?;
        Ok(Self {
            seed: config.seed,
            n_types,
            params,
            store_offsets,
            catalog,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn params(&self) -> &EnvConfig {
        &self.params
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store_offsets(&self) -> &[Vec<f64>] {
        &self.store_offsets
    }

    /// Population mean of `base_utility`, averaging over the realized stores.
    pub fn mean_base_utility(&self) -> Vec<f64> {
        let n_stores = self.store_offsets.len() as f64;
        (0..self.n_types)
            .map(|t| {
                self.params.utility_mean[t]
                    + self.store_offsets.iter().map(|o| o[t]).sum::<f64>() / n_stores
            })
            .collect()
    }

    /// Population variance of `base_utility` per type.
    pub fn base_utility_variance(&self) -> Vec<f64> {
        let mean = self.mean_base_utility();
        let n_stores = self.store_offsets.len() as f64;
        (0..self.n_types)
            .map(|t| {
                let centered = mean[t] - self.params.utility_mean[t];
                let store_var = self
                    .store_offsets
                    .iter()
                    .map(|o| (o[t] - centered).powi(2))
                    .sum::<f64>()
                    / n_stores;
                store_var + self.params.user_utility_std.powi(2)
            })
            .collect()
    }

    /// Profile of `user` visiting `store`; a returning user keeps their traits.
    pub fn profile(&self, user: u64, store: usize) -> Result<CustomerProfile> {
        let offsets = self.store_offsets.get(store).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "store {store} out of range for {} stores",
                self.store_offsets.len()
            ))
        })?;
        let mut rng = stream_rng(self.seed, purpose::PROFILE, user);
        let user_dist = normal(self.params.user_utility_std)?;
        let base_utility = (0..self.n_types)
            .map(|t| self.params.utility_mean[t] + offsets[t] + user_dist.sample(&mut rng))
            .collect();
        let satiation_rate =
            (self.params.satiation_mean + self.params.satiation_std * standard_normal(&mut rng))
                .max(0.0);
        Ok(CustomerProfile {
            base_utility,
            satiation_rate,
            satiation_cap: self.params.satiation_cap,
            patience: self.params.patience,
            null_utility: self.params.null_utility,
            deal_prob: self.params.deal_prob,
        })
    }

    /// A fresh session for customer arrival `session_id`.
    ///
    /// The user, store and all within-session randomness are functions of
    /// `(seed, session_id)` only.
    pub fn open_session(&self, session_id: u64, start_time: u64) -> Result<Session> {
        let mut rng = stream_rng(self.seed, purpose::SESSION, session_id);
        let user = rng.random_range(0..self.params.n_users);
        let store = rng.random_range(0..self.store_offsets.len());
        let context = Context::new(format!("u{user}"), format!("s{store}"))?;
        let profile = self.profile(user, store)?;
        Ok(Session::new(
            session_id,
            context,
            profile,
            self.seed,
            start_time,
            self.params.session_length_cap,
        ))
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ExposureState;

    fn profile(base: Vec<f64>, sat: f64, null: f64) -> CustomerProfile {
        CustomerProfile {
            base_utility: base,
            satiation_rate: sat,
            satiation_cap: None,
            patience: 5.0,
            null_utility: null,
            deal_prob: 0.0,
        }
    }

    #[test]
    fn symmetric_logit_is_half() {
        let p = profile(vec![0.7, 0.0], 0.0, 0.7);
        let s = ExposureState::from_counts(vec![4, 0]);
        assert_eq!(p.click_probability(&s, Action(0)), 0.5);
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(-1e4), 0.0);
        assert_eq!(logistic(1e4), 1.0);
        assert!((logistic(0.3) - 0.574_442_516_811_659_9).abs() < 1e-15);
    }

    #[test]
    fn satiation_monotone_and_capped() {
        let mut p = profile(vec![1.0, 0.0], 0.5, 0.0);
        let probs: Vec<f64> = (0..6)
            .map(|c| p.click_probability(&ExposureState::from_counts(vec![c, 0]), Action(0)))
            .collect();
        assert!(probs.windows(2).all(|w| w[1] < w[0]));
        p.satiation_cap = Some(2);
        let at = |c| p.click_probability(&ExposureState::from_counts(vec![c, 0]), Action(0));
        assert_eq!(at(2), at(5));
        assert!(at(1) > at(2));
    }

    #[test]
    fn same_seed_same_profile() {
        let config = ExperimentConfig::default();
        let a = Population::new(&config).unwrap();
        let b = Population::new(&config).unwrap();
        let sa = a.open_session(17, 0).unwrap();
        let sb = b.open_session(17, 0).unwrap();
        assert_eq!(sa.oracle_profile(), sb.oracle_profile());
        assert_eq!(sa.context(), sb.context());
        assert_eq!(sa.state().counts(), &[0; 8]);
    }

    #[test]
    fn profile_mean_matches_population() {
        let config = ExperimentConfig::default();
        let pop = Population::new(&config).unwrap();
        let n = 10_000;
        let mut sums = vec![0.0; pop.n_types()];
        for id in 0..n {
            let s = pop.open_session(id, 0).unwrap();
            for (acc, u) in sums.iter_mut().zip(&s.oracle_profile().base_utility) {
                *acc += u;
            }
        }
        let mean = pop.mean_base_utility();
        let var = pop.base_utility_variance();
        for t in 0..pop.n_types() {
            let empirical = sums[t] / n as f64;
            let se = (var[t] / n as f64).sqrt();
            assert!(
                (empirical - mean[t]).abs() < 3.0 * se,
                "type {t}: empirical {empirical} vs {} (se {se})",
                mean[t]
            );
        }
    }
}
