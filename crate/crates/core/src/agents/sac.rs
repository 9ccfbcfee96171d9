//! Discrete-action soft actor-critic.
//!
//! With a finite action set the soft value and the policy objective are exact
//! expectations over actions, so no reparameterized sampling is needed:
//!
//! - critic target: `y = r + gamma * sum_a' pi(a'|s') (min_k Qtarg_k(s',a') - alpha log pi(a'|s'))`
//! - policy loss:   `sum_a pi(a|s) (alpha log pi(a|s) - min_k Q_k(s,a))`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::oracle::argmax;
use crate::error::{Error, Result};
use crate::nn::{Adam, Head, Mlp};
use crate::rng::SimRng;
use crate::types::{Action, Context, ExposureState, Transition};

use super::{ActionScorer, Featurizer};

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-8;

fn floored_log(logp: f64) -> f64 {
    logp.max(PROB_FLOOR.ln())
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|&p| p * floored_log(p.max(0.0).ln()))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacParams {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub hidden: Vec<usize>,
}

impl SacParams {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let a = &config.agent;
        Self {
            alpha: a.alpha,
            gamma: a.gamma,
            tau: a.tau,
            critic_lr: a.critic_lr,
            policy_lr: a.policy_lr,
            hidden: a.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: [f64; 2],
    pub policy: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub featurizer: Featurizer,
    pub params: SacParams,
    pub policy: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    policy_opt: Adam,
    critic_opts: [Adam; 2],
}

/// Squared-error critic loss `mean_b 0.5 (Q(s_b, a_b) - y_b)^2` and its gradient.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    featurizer: &Featurizer,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = critic.zero_grads();
    let mut loss = 0.0;
    let mut upstream = vec![0.0; critic.output_size()];
    for (t, &y) in batch.iter().zip(targets) {
        let cache = critic.forward_cached(&featurizer.encode(&t.context, &t.state))?;
        let a = t.action.index();
        let err = cache.output()[a] - y;
        loss += 0.5 * err * err * scale;
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[a] = err * scale;
        critic.backward(&cache, &upstream, &mut grads)?;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub mean_entropy: f64,
    pub grads: Vec<f64>,
}

/// Policy loss `mean_b sum_a pi(a|s)(alpha log pi(a|s) - min_k Q_k(s,a))` and
/// its gradient with respect to the policy parameters.
pub fn policy_loss_and_grad(
    policy: &Mlp,
    critics: [&Mlp; 2],
    featurizer: &Featurizer,
    alpha: f64,
    batch: &[&Transition],
) -> Result<PolicyLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = policy.zero_grads();
    let (mut loss, mut mean_entropy) = (0.0, 0.0);
    let floor = PROB_FLOOR.ln();
    for t in batch {
        let x = featurizer.encode(&t.context, &t.state);
        let q1 = critics[0].forward(&x)?;
        let q2 = critics[1].forward(&x)?;
        let cache = policy.forward_cached(&x)?;
        let logp = cache.output();
        let mut upstream = Vec::with_capacity(logp.len());
        for a in 0..logp.len() {
            let p = logp[a].exp();
            let l = floored_log(logp[a]);
            let term = alpha * l - q1[a].min(q2[a]);
            loss += p * term * scale;
            mean_entropy -= p * l * scale;
            // d/dlogp [p (alpha l - q)] = p (alpha l - q) + alpha p dl/dlogp
            let dl = if logp[a] > floor { 1.0 } else { 0.0 };
            upstream.push((p * term + alpha * p * dl) * scale);
        }
        policy.backward(&cache, &upstream, &mut grads)?;
    }
    Ok(PolicyLoss {
        loss,
        mean_entropy,
        grads,
    })
}

impl SacAgent {
    /// Critics get Glorot weights; the policy's output layer starts at zero,
    /// so the untrained policy is exactly uniform.
    pub fn new(featurizer: Featurizer, params: SacParams, rng: &mut SimRng) -> Result<Self> {
        let mut sizes = vec![featurizer.dim()];
        sizes.extend(&params.hidden);
        sizes.push(featurizer.n_types);
        let mut policy = Mlp::new(&sizes, Head::LogSoftmax, rng)?;
        let last = sizes[sizes.len() - 2] * featurizer.n_types + featurizer.n_types;
        let n = policy.n_params();
        policy.params_mut()[n - last..].iter_mut().for_each(|p| *p = 0.0);
        let critics = [
            Mlp::new(&sizes, Head::Identity, rng)?,
            Mlp::new(&sizes, Head::Identity, rng)?,
        ];
        let targets = critics.clone();
        Ok(Self {
            policy_opt: Adam::new(policy.n_params(), params.policy_lr),
            critic_opts: [
                Adam::new(critics[0].n_params(), params.critic_lr),
                Adam::new(critics[1].n_params(), params.critic_lr),
            ],
            featurizer,
            params,
            policy,
            critics,
            targets,
        })
    }

    pub fn from_config(config: &ExperimentConfig, rng: &mut SimRng) -> Result<Self> {
        Self::new(Featurizer::from_config(config), SacParams::from_config(config), rng)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        for m in self.critics.iter().chain(&self.targets) {
            m.validate()?;
            if m.sizes() != self.policy.sizes() {
                return Err(Error::Checkpoint("critic and policy shapes differ".into()));
            }
        }
        if self.policy.input_size() != self.featurizer.dim() {
            return Err(Error::Checkpoint("policy input does not match featurizer".into()));
        }
        Ok(())
    }

    pub fn action_probabilities(&self, context: &Context, state: &ExposureState) -> Result<Vec<f64>> {
        let logp = self.policy.forward(&self.featurizer.encode(context, state))?;
        Ok(logp.iter().map(|l| l.exp()).collect())
    }

    /// Samples from the policy when exploring, otherwise the most probable
    /// action (ties to the lowest index).
    pub fn act<R: Rng + ?Sized>(
        &self,
        context: &Context,
        state: &ExposureState,
        explore: bool,
        rng: &mut R,
    ) -> Result<Action> {
        let probs = self.action_probabilities(context, state)?;
        if !explore {
            return Ok(Action(argmax(&probs)));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(Action(a));
            }
        }
        Ok(Action(probs.len() - 1))
    }

    /// Soft Bellman targets from the target critics and the current policy.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let (alpha, gamma) = (self.params.alpha, self.params.gamma);
        batch
            .iter()
            .map(|t| {
                if t.done || gamma == 0.0 {
                    return Ok(t.reward);
                }
                let x = self.featurizer.encode(&t.context, &t.next_state);
                let logp = self.policy.forward(&x)?;
                let q1 = self.targets[0].forward(&x)?;
                let q2 = self.targets[1].forward(&x)?;
                let soft_value: f64 = (0..logp.len())
                    .map(|a| logp[a].exp() * (q1[a].min(q2[a]) - alpha * floored_log(logp[a])))
                    .sum();
                Ok(t.reward + gamma * soft_value)
            })
            .collect()
    }

    /// One gradient step on both critics, then the policy, then Polyak
    /// averaging of the target critics.
    pub fn learn(&mut self, batch: &[&Transition]) -> Result<SacLosses> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let targets = self.critic_targets(batch)?;
        let mut critic_losses = [0.0; 2];
        for k in 0..2 {
            let (loss, grads) = critic_loss_and_grad(&self.critics[k], &self.featurizer, batch, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("critic {k} loss {loss}")));
            }
            critic_losses[k] = loss;
            self.critic_opts[k].step(self.critics[k].params_mut(), &grads)?;
        }
        let policy = policy_loss_and_grad(
            &self.policy,
            [&self.critics[0], &self.critics[1]],
            &self.featurizer,
            self.params.alpha,
            batch,
        )?;
        if !policy.loss.is_finite() {
            return Err(Error::NonFinite(format!("policy loss {}", policy.loss)));
        }
        self.policy_opt.step(self.policy.params_mut(), &policy.grads)?;
        for k in 0..2 {
            self.targets[k].soft_update_from(&self.critics[k], self.params.tau)?;
        }
        Ok(SacLosses {
            critic: critic_losses,
            policy: policy.loss,
            mean_entropy: policy.mean_entropy,
        })
    }
}

impl ActionScorer for SacAgent {
    fn n_types(&self) -> usize {
        self.featurizer.n_types
    }

    fn score_actions(&self, context: &Context, state: &ExposureState, _rng: &mut SimRng) -> Result<Vec<f64>> {
        self.action_probabilities(context, state)
    }
}
