//! DeepFM click model used as the static baseline.
//!
//! `logit(x) = w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j + deep([v_f x_f for each field f])`
//! and the predicted click probability is the logistic of that sum.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::logistic;
use crate::error::{Error, Result};
use crate::nn::{Adam, Head, Mlp};
use crate::rng::SimRng;
use crate::types::{Action, Context, ExposureState, Transition};

use super::{ActionScorer, Featurizer};

/// One active feature per field: `(feature index, value)`.
pub type SparseRow = [(usize, f64)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmExample {
    pub features: Vec<(usize, f64)>,
    pub label: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmModel {
    n_features: usize,
    n_fields: usize,
    factors: usize,
    bias: f64,
    linear: Vec<f64>,
    /// Row-major `n_features x factors`.
    embeddings: Vec<f64>,
    deep: Mlp,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl DfmModel {
    /// All parameters zero, so every prediction is exactly 0.5.
    pub fn zeros(n_features: usize, n_fields: usize, factors: usize, hidden: &[usize]) -> Result<Self> {
        if n_features == 0 || n_fields == 0 || factors == 0 {
            return Err(Error::InvalidArgument("deepfm needs features, fields and factors".into()));
        }
        let mut sizes = vec![n_fields * factors];
        sizes.extend(hidden);
        sizes.push(1);
        Ok(Self {
            n_features,
            n_fields,
            factors,
            bias: 0.0,
            linear: vec![0.0; n_features],
            embeddings: vec![0.0; n_features * factors],
            deep: Mlp::zeros(&sizes, Head::Identity)?,
        })
    }

    /// Small random embeddings and Glorot deep weights; linear terms start at zero.
    pub fn new<R: Rng + ?Sized>(
        n_features: usize,
        n_fields: usize,
        factors: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(n_features, n_fields, factors, hidden)?;
        let normal = Normal::new(0.0, 0.05).expect("valid normal");
        for v in &mut model.embeddings {
            *v = normal.sample(rng);
        }
        let sizes = model.deep.sizes().to_vec();
        model.deep = Mlp::new(&sizes, Head::Identity, rng)?;
        Ok(model)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn n_params(&self) -> usize {
        1 + self.linear.len() + self.embeddings.len() + self.deep.n_params()
    }

    /// Flat parameter vector: bias, linear weights, embeddings, deep network.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.push(self.bias);
        p.extend(&self.linear);
        p.extend(&self.embeddings);
        p.extend(self.deep.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                what: "deepfm parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let (n, e) = (self.linear.len(), self.embeddings.len());
        self.bias = params[0];
        self.linear.copy_from_slice(&params[1..1 + n]);
        self.embeddings.copy_from_slice(&params[1 + n..1 + n + e]);
        self.deep.params_mut().copy_from_slice(&params[1 + n + e..]);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.deep.validate()?;
        if self.linear.len() != self.n_features
            || self.embeddings.len() != self.n_features * self.factors
            || self.deep.input_size() != self.n_fields * self.factors
            || self.deep.output_size() != 1
        {
            return Err(Error::Checkpoint("deepfm shapes are inconsistent".into()));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("deepfm parameter".into()));
        }
        Ok(())
    }

    fn check_row(&self, x: &SparseRow) -> Result<()> {
        if x.len() != self.n_fields {
            return Err(Error::ShapeMismatch {
                what: "deepfm fields",
                expected: self.n_fields,
                got: x.len(),
            });
        }
        for &(i, v) in x {
            if i >= self.n_features {
                return Err(Error::UnknownFeature {
                    index: i,
                    n_features: self.n_features,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("feature {i} value")));
            }
        }
        Ok(())
    }

    fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.factors..(i + 1) * self.factors]
    }

    /// Pairwise term in O(fields * factors):
    /// `0.5 * sum_f [(sum_i v_if x_i)^2 - sum_i v_if^2 x_i^2]`.
    pub fn pairwise(&self, x: &SparseRow) -> Result<f64> {
        self.check_row(x)?;
        let mut total = 0.0;
        for f in 0..self.factors {
            let (mut s, mut sq) = (0.0, 0.0);
            for &(i, v) in x {
                let t = self.embedding(i)[f] * v;
                s += t;
                sq += t * t;
            }
            total += 0.5 * (s * s - sq);
        }
        Ok(total)
    }

    fn deep_input(&self, x: &SparseRow) -> Vec<f64> {
        x.iter()
            .flat_map(|&(i, v)| self.embedding(i).iter().map(move |e| e * v))
            .collect()
    }

    pub fn logit(&self, x: &SparseRow) -> Result<f64> {
        self.check_row(x)?;
        let linear: f64 = x.iter().map(|&(i, v)| self.linear[i] * v).sum();
        let pairwise = self.pairwise(x)?;
        let deep = self.deep.forward(&self.deep_input(x))?[0];
        Ok(self.bias + linear + pairwise + deep)
    }

    pub fn predict(&self, x: &SparseRow) -> Result<f64> {
        Ok(logistic(self.logit(x)?))
    }

    /// Weighted mean log-loss and its gradient in [`DfmModel::params`] order.
    pub fn loss_and_grad(&self, data: &[DfmExample]) -> Result<(f64, Vec<f64>)> {
        let total_weight: f64 = data.iter().map(|e| e.weight).sum();
        if data.is_empty() || total_weight <= 0.0 {
            return Err(Error::Empty("deepfm training data"));
        }
        let (n, e) = (self.linear.len(), self.embeddings.len());
        let mut grads = vec![0.0; self.n_params()];
        let mut deep_grads = self.deep.zero_grads();
        let mut loss = 0.0;
        for ex in data {
            if !(0.0..=1.0).contains(&ex.label) || ex.weight < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "label {} or weight {} out of range",
                    ex.label, ex.weight
                )));
            }
            let x = &ex.features;
            self.check_row(x)?;
            let cache = self.deep.forward_cached(&self.deep_input(x))?;
            let linear: f64 = x.iter().map(|&(i, v)| self.linear[i] * v).sum();
            let z = self.bias + linear + self.pairwise(x)? + cache.output()[0];
            let w = ex.weight / total_weight;
            loss += w * (softplus(z) - ex.label * z);
            let g = w * (logistic(z) - ex.label);
            grads[0] += g;
            for &(i, v) in x.iter() {
                grads[1 + i] += g * v;
            }
            let d_input = self.deep.backward(&cache, &[g], &mut deep_grads)?;
            for f in 0..self.factors {
                let s: f64 = x.iter().map(|&(i, v)| self.embedding(i)[f] * v).sum();
                for (field, &(i, v)) in x.iter().enumerate() {
                    let vif = self.embedding(i)[f];
                    grads[1 + n + i * self.factors + f] +=
                        g * (v * s - vif * v * v) + d_input[field * self.factors + f] * v;
                }
            }
        }
        grads[1 + n + e..].copy_from_slice(&deep_grads);
        Ok((loss, grads))
    }

    /// Full-batch Adam on the weighted log-loss; returns the loss before each epoch.
    pub fn train(&mut self, data: &[DfmExample], epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let mut opt = Adam::new(self.n_params(), lr);
        let mut params = self.params();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let (loss, grads) = self.loss_and_grad(data)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("deepfm loss {loss}")));
            }
            history.push(loss);
            opt.step(&mut params, &grads)?;
            self.set_params(&params)?;
        }
        Ok(history)
    }
}

/// Three one-hot fields: user bucket, store bucket and content type.
/// Exposure history is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmAgent {
    pub featurizer: Featurizer,
    pub model: DfmModel,
}

impl DfmAgent {
    pub fn n_features(featurizer: &Featurizer) -> usize {
        featurizer.user_buckets + featurizer.store_buckets + featurizer.n_types
    }

    pub fn untrained(featurizer: Featurizer, factors: usize, hidden: &[usize]) -> Result<Self> {
        let model = DfmModel::zeros(Self::n_features(&featurizer), 3, factors, hidden)?;
        Ok(Self { featurizer, model })
    }

    pub fn row(&self, context: &Context, action: Action) -> Vec<(usize, f64)> {
        let f = &self.featurizer;
        vec![
            (f.user_bucket(context), 1.0),
            (f.user_buckets + f.store_bucket(context), 1.0),
            (f.user_buckets + f.store_buckets + action.index(), 1.0),
        ]
    }

    /// Groups identical feature rows so one full-batch pass is exact and cheap.
    pub fn examples<'a>(&self, logs: impl IntoIterator<Item = &'a Transition>) -> Result<Vec<DfmExample>> {
        let mut counts: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for t in logs {
            Action::checked(t.action.index(), self.featurizer.n_types)?;
            let key: Vec<usize> = self.row(&t.context, t.action).into_iter().map(|(i, _)| i).collect();
            let entry = counts.entry(key).or_insert((0.0, 0.0));
            entry.0 += t.reward;
            entry.1 += 1.0 - t.reward;
        }
        let mut out = Vec::new();
        for (key, (clicks, misses)) in counts {
            let features: Vec<(usize, f64)> = key.into_iter().map(|i| (i, 1.0)).collect();
            for (label, weight) in [(1.0, clicks), (0.0, misses)] {
                if weight > 0.0 {
                    out.push(DfmExample {
                        features: features.clone(),
                        label,
                        weight,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn fit<'a>(
        config: &ExperimentConfig,
        logs: impl IntoIterator<Item = &'a Transition>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let featurizer = Featurizer::from_config(config);
        let a = &config.agent;
        let model = DfmModel::new(Self::n_features(&featurizer), 3, a.dfm_factors, &a.dfm_hidden, rng)?;
        let mut agent = Self { featurizer, model };
        let data = agent.examples(logs)?;
        agent.model.train(&data, a.dfm_epochs, a.dfm_lr)?;
        Ok(agent)
    }

    pub fn click_probabilities(&self, context: &Context) -> Result<Vec<f64>> {
        (0..self.featurizer.n_types)
            .map(|a| self.model.predict(&self.row(context, Action(a))))
            .collect()
    }

    /// Highest predicted click probability, ties to the lowest index. The
    /// exposure state is ignored.
    pub fn act(&self, context: &Context, _state: &ExposureState) -> Result<Action> {
        Ok(Action(crate::env::oracle::argmax(&self.click_probabilities(context)?)))
    }

    /// Draws an action with probability proportional to its predicted click rate.
    pub fn sample<R: Rng + ?Sized>(&self, context: &Context, rng: &mut R) -> Result<Action> {
        let probs = self.click_probabilities(context)?;
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (a, p) in probs.iter().enumerate() {
            if u < *p {
                return Ok(Action(a));
            }
            u -= p;
        }
        Ok(Action(probs.len() - 1))
    }
}

impl ActionScorer for DfmAgent {
    fn n_types(&self) -> usize {
        self.featurizer.n_types
    }

    fn score_actions(&self, context: &Context, _state: &ExposureState, _rng: &mut SimRng) -> Result<Vec<f64>> {
        self.click_probabilities(context)
    }
}
