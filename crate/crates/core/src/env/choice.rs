//! Multinomial-logit slate choice with a no-click option.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::CustomerProfile;
use crate::error::{Error, Result};
use crate::types::{Action, ContentItem, ExposureState};

/// Content items a slate can be assembled from, with the per-item utility
/// offset the simulator adds on top of the customer's type preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    items: Vec<ContentItem>,
    utility_offsets: Vec<f64>,
}

const TABS: [&str; 3] = ["commodity_display", "color_test", "detailed_display"];

impl Catalog {
    pub fn new(items: Vec<ContentItem>, utility_offsets: Vec<f64>) -> Result<Self> {
        if items.len() != utility_offsets.len() {
            return Err(Error::ShapeMismatch {
                what: "catalog utility offsets",
                expected: items.len(),
                got: utility_offsets.len(),
            });
        }
        let mut ids: Vec<&str> = items.iter().map(|i| i.content_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate content_id in catalog".into()));
        }
        Ok(Self {
            items,
            utility_offsets,
        })
    }

    pub fn generate<R: Rng + ?Sized>(
        n_types: usize,
        items_per_type: usize,
        offset_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let dist = Normal::new(0.0, offset_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut items = Vec::with_capacity(n_types * items_per_type);
        let mut offsets = Vec::with_capacity(n_types * items_per_type);
        for t in 0..n_types {
            for j in 0..items_per_type {
                // only the first item of every other type carries a tab
                let content_tab = (j == 0 && t % 2 == 0).then(|| TABS[t / 2 % TABS.len()].to_string());
                items.push(ContentItem {
                    content_id: format!("c{t}-{j}"),
                    content_type: t,
                    content_tab,
                });
                offsets.push(dist.sample(rng));
            }
        }
        Self::new(items, offsets)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ContentItem] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &ContentItem {
        &self.items[index]
    }

    pub fn type_of(&self, index: usize) -> Action {
        Action(self.items[index].content_type)
    }

    pub fn utility_offset(&self, index: usize) -> f64 {
        self.utility_offsets[index]
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index < self.items.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "item {index} out of range for catalog of {}",
                self.items.len()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities {
    /// Probability of each slate position being chosen.
    pub items: Vec<f64>,
    pub null: f64,
}

/// Errors on duplicate entries.
pub fn check_distinct(slate: &[usize]) -> Result<()> {
    for (i, a) in slate.iter().enumerate() {
        if slate[..i].contains(a) {
            return Err(Error::DuplicateItem(*a));
        }
    }
    Ok(())
}

/// `P(i) = exp(u_i) / (exp(u_null) + sum_j exp(u_j))`, computed with a shared
/// max shift. Utilities of `-inf` get probability zero.
pub fn mnl_probabilities(utilities: &[f64], null_utility: f64) -> ChoiceProbabilities {
    let shift = utilities
        .iter()
        .copied()
        .filter(|u| u.is_finite())
        .fold(null_utility, f64::max);
    let weights: Vec<f64> = utilities.iter().map(|u| (u - shift).exp()).collect();
    let null_weight = (null_utility - shift).exp();
    let total = null_weight + weights.iter().sum::<f64>();
    ChoiceProbabilities {
        items: weights.iter().map(|w| w / total).collect(),
        null: null_weight / total,
    }
}

/// A user choice model over catalog items in a given exposure state.
pub trait ChoiceModel {
    fn item_utility(&self, state: &ExposureState, item: usize) -> f64;

    fn null_utility(&self) -> f64;

    fn choice_probabilities(
        &self,
        state: &ExposureState,
        slate: &[usize],
    ) -> Result<ChoiceProbabilities> {
        if slate.is_empty() {
            return Err(Error::Empty("slate"));
        }
        check_distinct(slate)?;
        let utilities: Vec<f64> = slate.iter().map(|&i| self.item_utility(state, i)).collect();
        Ok(mnl_probabilities(&utilities, self.null_utility()))
    }
}

/// The simulator's true choice model for one customer.
#[derive(Debug, Clone, Copy)]
pub struct ProfileChoiceModel<'a> {
    pub profile: &'a CustomerProfile,
    pub catalog: &'a Catalog,
}

impl ChoiceModel for ProfileChoiceModel<'_> {
    fn item_utility(&self, state: &ExposureState, item: usize) -> f64 {
        self.profile.utility(state, self.catalog.type_of(item)) + self.catalog.utility_offset(item)
    }

    fn null_utility(&self) -> f64 {
        self.profile.null_utility
    }
}

/// Draws a slate position from `probs`, or `None` for no click.
pub fn sample_choice<R: Rng + ?Sized>(probs: &ChoiceProbabilities, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.items.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    None
}

pub(crate) fn validate_slate(catalog: &Catalog, slate: &[usize]) -> Result<()> {
    if slate.is_empty() {
        return Err(Error::Empty("slate"));
    }
    for &i in slate {
        catalog.check_index(i)?;
    }
    check_distinct(slate)
}
