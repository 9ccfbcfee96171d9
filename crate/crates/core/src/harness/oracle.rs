//! Brute-force reference checks: SARSA against dynamic programming, the
//! SlateQ decomposition against Monte-Carlo rollouts, choice-model
//! calibration, and analytic gradients against finite differences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::sac::{critic_loss_and_grad, policy_loss_and_grad};
use crate::agents::{
    select_slate, slate_value, DfmExample, DfmModel, EpsilonSchedule, Featurizer, LearningRateSchedule, SacAgent,
    SacParams, SarsaAgent, SlateMode,
};
use crate::env::{
    ground_truth_q, mnl_probabilities, slate_policy_item_values, Catalog, ChoiceModel, CustomerProfile,
    ProfileChoiceModel, Session,
};
use crate::error::Result;
use crate::nn::gradcheck::{central_differences, max_relative_error};
use crate::nn::{Head, Mlp};
use crate::rng::{purpose, seeded_rng, stream_rng, SimRng};
use crate::types::{increment_exposure, Action, ContentItem, Context, ExposureState, Transition};

/// Finite-difference step and the magnitude below which entries are skipped.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub seed: u64,
    pub critic: f64,
    pub policy: f64,
    pub dfm: f64,
}

impl GradcheckRow {
    pub fn worst(&self) -> f64 {
        self.critic.max(self.policy).max(self.dfm)
    }
}

fn random_batch(rng: &mut SimRng, n_types: usize, n: usize) -> Vec<Transition> {
    (0..n)
        .map(|i| {
            let state = ExposureState::from_counts((0..n_types).map(|_| rng.random_range(0..4)).collect());
            let action = Action(rng.random_range(0..n_types));
            Transition {
                context: Context::new(format!("u{}", rng.random_range(0..50)), format!("s{}", i % 3))
                    .expect("non-empty ids"),
                next_state: increment_exposure(&state, action).expect("valid action"),
                state,
                action,
                reward: f64::from(rng.random_range(0..2u8)),
                done: rng.random::<f64>() < 0.2,
                timestamp: i as u64,
            }
        })
        .collect()
}

/// Compares the analytic critic, policy and DFM gradients with central
/// differences on small random models, one row per seed.
pub fn run_gradcheck(seeds: &[u64]) -> Result<Vec<GradcheckRow>> {
    seeds.iter().map(|&seed| gradcheck_seed(seed)).collect()
}

fn gradcheck_seed(seed: u64) -> Result<GradcheckRow> {
    let mut rng = seeded_rng(seed);
    let featurizer = Featurizer {
        n_types: 8,
        count_cap: 5,
        user_buckets: 2,
        store_buckets: 3,
    };
    let params = SacParams {
        alpha: 0.2,
        gamma: 0.9,
        tau: 0.05,
        critic_lr: 1e-3,
        policy_lr: 1e-3,
        hidden: vec![8, 8],
    };
    let mut agent = SacAgent::new(featurizer, params, &mut rng)?;
    // Off the ReLU kinks: zero biases behind a dead layer sit exactly on one.
    for p in agent.policy.params_mut().iter_mut().chain(agent.critics[0].params_mut()) {
        *p += rng.random_range(-0.3..0.3);
    }
    let batch = random_batch(&mut rng, 8, 8);
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets = agent.critic_targets(&refs)?;

    let critic = &agent.critics[0];
    let (_, analytic) = critic_loss_and_grad(critic, &agent.featurizer, &refs, &targets)?;
    let f = |p: &[f64]| {
        let m = Mlp::from_params(critic.sizes(), Head::Identity, p.to_vec()).expect("same shape");
        critic_loss_and_grad(&m, &agent.featurizer, &refs, &targets).map_or(f64::NAN, |r| r.0)
    };
    let numeric = central_differences(&f, critic.params(), GRADCHECK_STEP);
    let (critic_err, _) = max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR);

    let critics = [&agent.critics[0], &agent.critics[1]];
    let alpha = agent.params.alpha;
    let out = policy_loss_and_grad(&agent.policy, critics, &agent.featurizer, alpha, &refs)?;
    let f = |p: &[f64]| {
        let m = Mlp::from_params(agent.policy.sizes(), Head::LogSoftmax, p.to_vec()).expect("same shape");
        policy_loss_and_grad(&m, critics, &agent.featurizer, alpha, &refs).map_or(f64::NAN, |r| r.loss)
    };
    let numeric = central_differences(&f, agent.policy.params(), GRADCHECK_STEP);
    let (policy_err, _) = max_relative_error(&out.grads, &numeric, GRADCHECK_FLOOR);

    let mut dfm = DfmModel::new(9, 3, 3, &[6], &mut rng)?;
    let mut p = dfm.params();
    for v in &mut p {
        *v += rng.random_range(-0.5..0.5);
    }
    dfm.set_params(&p)?;
    let data: Vec<DfmExample> = (0..16)
        .map(|_| DfmExample {
            features: vec![
                (rng.random_range(0..3), 1.0),
                (rng.random_range(3..6), 1.0),
                (rng.random_range(6..9), 1.0),
            ],
            label: f64::from(rng.random_range(0..2u8)),
            weight: 1.0,
        })
        .collect();
    let (_, analytic) = dfm.loss_and_grad(&data)?;
    let f = |q: &[f64]| {
        let mut m = dfm.clone();
        m.set_params(q).expect("same shape");
        m.loss_and_grad(&data).map_or(f64::NAN, |r| r.0)
    };
    let numeric = central_differences(&f, &p, GRADCHECK_STEP);
    let (dfm_err, _) = max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR);

    Ok(GradcheckRow {
        seed,
        critic: critic_err,
        policy: policy_err,
        dfm: dfm_err,
    })
}

/// Discount of the SARSA chain check.
pub const CHAIN_GAMMA: f64 = 0.9;

/// Two content types and two rounds: decision states `(0,0)`, `(1,0)` and
/// `(0,1)`. Strong satiation and near-deterministic clicks keep the return
/// variance small.
pub fn chain_profile() -> CustomerProfile {
    CustomerProfile {
        base_utility: vec![5.0, 3.0],
        satiation_rate: 8.0,
        satiation_cap: None,
        patience: f64::INFINITY,
        null_utility: 0.0,
        deal_prob: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarsaOracleReport {
    pub sessions: u64,
    /// Max-norm distance between learned Q and DP Q* over decision states.
    pub max_error: f64,
    pub greedy_matches: bool,
    /// `(state counts, learned Q row, DP Q row)`.
    pub states: Vec<(Vec<u32>, Vec<f64>, Vec<f64>)>,
}

/// SARSA with exploring starts on the chain: every session starts in a
/// uniformly drawn decision state with a uniformly drawn first action, then
/// follows epsilon-greedy with `epsilon = 1 / visits(s)`; step sizes are
/// `1 / visits(s, a)`.
pub fn run_sarsa_oracle(seed: u64, sessions: u64) -> Result<SarsaOracleReport> {
    const LENGTH: u32 = 2;
    let profile = chain_profile();
    let q_star = ground_truth_q(&profile, CHAIN_GAMMA, LENGTH, 100)?;
    let starts: Vec<ExposureState> = q_star.decision_states().collect();
    let mut agent = SarsaAgent::new(
        2,
        5,
        CHAIN_GAMMA,
        EpsilonSchedule::VisitDecay { scale: 1.0, power: 1.0 },
        LearningRateSchedule::InverseVisits,
    );
    let ctx = Context::new("oracle", "chain")?;
    for id in 0..sessions {
        let mut rng = stream_rng(seed, purpose::POLICY, id);
        let start = starts[rng.random_range(0..starts.len())].clone();
        let mut session = Session::resume(id, ctx.clone(), profile.clone(), seed, start, 0, LENGTH);
        let mut action = Action(rng.random_range(0..2));
        loop {
            let t = session.step(action)?.transition;
            if t.done {
                agent.learn(&t, action)?;
                break;
            }
            let next = agent.act(&t.next_state, true, &mut rng);
            agent.learn(&t, next)?;
            action = next;
        }
    }
    let mut max_error: f64 = 0.0;
    let mut greedy_matches = true;
    let mut states = Vec::new();
    for s in &starts {
        let learned = agent.table.row(s);
        let exact = q_star.values(s).expect("decision state").to_vec();
        for (l, e) in learned.iter().zip(&exact) {
            max_error = max_error.max((l - e).abs());
        }
        greedy_matches &= Some(agent.table.greedy(s)) == q_star.greedy_action(s);
        states.push((s.counts().to_vec(), learned, exact));
    }
    Ok(SarsaOracleReport {
        sessions,
        max_error,
        greedy_matches,
        states,
    })
}

pub const SLATE_GAMMA: f64 = 0.8;

/// Two types, three items, slates of two, satiation saturating after one
/// exposure: four states `{0,1}^2`.
pub fn slate_setup() -> Result<(CustomerProfile, Catalog)> {
    let profile = CustomerProfile {
        base_utility: vec![0.6, -0.2],
        satiation_rate: 0.8,
        satiation_cap: Some(1),
        patience: 4.0,
        null_utility: 0.0,
        deal_prob: 0.0,
    };
    let item = |id: &str, t| ContentItem {
        content_id: id.into(),
        content_type: t,
        content_tab: None,
    };
    let catalog = Catalog::new(vec![item("a", 0), item("b", 0), item("c", 1)], vec![0.0, -0.4, 0.3])?;
    Ok((profile, catalog))
}

/// The fixed slate policy evaluated by the decomposition check.
pub fn slate_policy(state: &ExposureState) -> Vec<usize> {
    match (state.counts()[0].min(1), state.counts()[1].min(1)) {
        (0, 0) => vec![0, 2],
        (1, 0) => vec![1, 2],
        (0, 1) => vec![0, 1],
        _ => vec![1, 2],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateStateCheck {
    pub state: Vec<u32>,
    pub decomposed: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateOracleReport {
    pub rollouts: u64,
    pub states: Vec<SlateStateCheck>,
    pub max_value_error: f64,
    pub instances: usize,
    pub exhaustive_matches: usize,
}

/// Every subset of size `k` by bitmask, best value first, ties to the
/// lexicographically smallest sorted id set.
fn brute_force_slate(state: &ExposureState, candidates: &[usize], k: usize, q: &[f64], model: &dyn ChoiceModel) -> Result<Vec<usize>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << sorted.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let slate: Vec<usize> = (0..sorted.len()).filter(|i| mask >> i & 1 == 1).map(|i| sorted[i]).collect();
        let v = slate_value(state, &slate, q, model)?;
        let better = match &best {
            None => true,
            Some((b, s)) => v > *b || (v == *b && slate < *s),
        };
        if better {
            best = Some((v, slate));
        }
    }
    Ok(best.expect("k <= candidates").1)
}

/// Compares the decomposed slate value of a fixed policy with Monte-Carlo
/// discounted returns from each state, and exhaustive slate selection with
/// brute-force enumeration on random instances.
pub fn run_slateq_oracle(seed: u64, rollouts: u64, instances: usize) -> Result<SlateOracleReport> {
    let (profile, catalog) = slate_setup()?;
    let model = ProfileChoiceModel {
        profile: &profile,
        catalog: &catalog,
    };
    let values = slate_policy_item_values(&profile, &catalog, SLATE_GAMMA, 1, 100, &slate_policy)?;
    let ctx = Context::new("oracle", "slate")?;
    let mut states = Vec::new();
    let mut max_value_error: f64 = 0.0;
    for (k, state) in values.states().enumerate() {
        let q_row: Vec<f64> = (0..catalog.len()).map(|i| values.item_value(&state, i)).collect();
        let decomposed = slate_value(&state, &slate_policy(&state), &q_row, &model)?;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for r in 0..rollouts {
            let id = (k as u64) << 32 | r;
            let mut session = Session::resume(id, ctx.clone(), profile.clone(), seed, state.clone(), 0, u32::MAX);
            let (mut ret, mut discount) = (0.0, 1.0);
            while session.is_alive() {
                let slate = slate_policy(session.state());
                let out = session.step_slate(&catalog, &slate)?;
                ret += discount * out.step.transition.reward;
                discount *= SLATE_GAMMA;
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let n = rollouts as f64;
        let mean = sum / n;
        let std_error = ((sum_sq / n - mean * mean).max(0.0) / n).sqrt();
        max_value_error = max_value_error.max((mean - decomposed).abs());
        states.push(SlateStateCheck {
            state: state.counts().to_vec(),
            decomposed,
            monte_carlo: mean,
            std_error,
        });
    }

    let mut rng = stream_rng(seed, purpose::EVAL, 0);
    let mut exhaustive_matches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=12usize);
        let k = rng.random_range(1..=n.min(4));
        let utilities: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let model = FixedUtilities {
            utilities,
            null: rng.random_range(-1.0..1.0),
        };
        let mut candidates: Vec<usize> = (0..n).collect();
        candidates.reverse();
        let state = ExposureState::zeros(1);
        let fast = select_slate(&state, &candidates, k, &q, &model, SlateMode::Exhaustive)?;
        if fast == brute_force_slate(&state, &candidates, k, &q, &model)? {
            exhaustive_matches += 1;
        }
    }
    Ok(SlateOracleReport {
        rollouts,
        states,
        max_value_error,
        instances,
        exhaustive_matches,
    })
}

struct FixedUtilities {
    utilities: Vec<f64>,
    null: f64,
}

impl ChoiceModel for FixedUtilities {
    fn item_utility(&self, _state: &ExposureState, item: usize) -> f64 {
        self.utilities[item]
    }

    fn null_utility(&self) -> f64 {
        self.null
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub slates: usize,
    pub samples: u64,
    pub max_total_variation: f64,
}

/// Empirical slate-choice frequencies from live sessions against the
/// multinomial-logit formula, on random profiles, states and slates.
pub fn run_choice_calibration(seed: u64, slates: usize, samples: u64) -> Result<CalibrationReport> {
    let mut rng = stream_rng(seed, purpose::EVAL, 1);
    let catalog = Catalog::generate(4, 3, 0.5, &mut rng)?;
    let mut worst: f64 = 0.0;
    for j in 0..slates {
        let profile = CustomerProfile {
            base_utility: (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
            satiation_rate: rng.random_range(0.0..1.0),
            satiation_cap: None,
            patience: f64::INFINITY,
            null_utility: rng.random_range(-1.0..1.0),
            deal_prob: 0.0,
        };
        let state = ExposureState::from_counts((0..4).map(|_| rng.random_range(0..3)).collect());
        let k = rng.random_range(1..=4);
        let slate: Vec<usize> = rand::seq::index::sample(&mut rng, catalog.len(), k).into_vec();
        let utilities: Vec<f64> = slate
            .iter()
            .map(|&i| profile.utility(&state, catalog.type_of(i)) + catalog.utility_offset(i))
            .collect();
        let expected = mnl_probabilities(&utilities, profile.null_utility);
        let mut session = Session::resume(j as u64, Context::new("oracle", "mnl")?, profile, seed, state, 0, u32::MAX);
        let mut counts = vec![0u64; k + 1];
        for _ in 0..samples {
            match session.slate_choice(&catalog, &slate)? {
                Some(item) => counts[slate.iter().position(|&x| x == item).expect("chosen from slate")] += 1,
                None => counts[k] += 1,
            }
        }
        let n = samples as f64;
        let mut tv = (counts[k] as f64 / n - expected.null).abs();
        for i in 0..k {
            tv += (counts[i] as f64 / n - expected.items[i]).abs();
        }
        worst = worst.max(tv / 2.0);
    }
    Ok(CalibrationReport {
        slates,
        samples,
        max_total_variation: worst,
    })
}
