use rand::Rng;

use crate::env::choice::{sample_choice, validate_slate, Catalog, ChoiceModel, ProfileChoiceModel};
use crate::env::CustomerProfile;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng, SimRng};
use crate::types::{increment_exposure, Action, Context, ExposureState, Transition};

/// Result of one interaction round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub transition: Transition,
    /// Conversion sub-event; only possible after a click and never changes the reward.
    pub deal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlateOutcome {
    /// Slate position the customer clicked, if any.
    pub chosen: Option<usize>,
    pub step: StepOutcome,
}

/// One customer in the live room.
///
/// Agents may read the context and exposure state. The profile is ground
/// truth reserved for the simulator and for oracles.
#[derive(Debug, Clone)]
pub struct Session {
    id: u64,
    context: Context,
    profile: CustomerProfile,
    state: ExposureState,
    steps: u32,
    alive: bool,
    start_time: u64,
    length_cap: u32,
    seed: u64,
    dynamics: SimRng,
    policy_rng: Option<SimRng>,
    history: Vec<RoundRecord>,
}

/// Compact per-round log entry; full transitions are rebuilt on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRecord {
    pub action: Action,
    pub clicked: bool,
    pub deal: bool,
    pub done: bool,
}

impl Session {
    pub fn new(
        id: u64,
        context: Context,
        profile: CustomerProfile,
        seed: u64,
        start_time: u64,
        length_cap: u32,
    ) -> Self {
        let n_types = profile.n_types();
        Self::resume(id, context, profile, seed, ExposureState::zeros(n_types), start_time, length_cap)
    }

    /// A session that has already seen the exposures in `state`; the rounds
    /// already played count towards `length_cap`. Used to start oracle
    /// sessions in arbitrary states.
    pub fn resume(
        id: u64,
        context: Context,
        profile: CustomerProfile,
        seed: u64,
        state: ExposureState,
        start_time: u64,
        length_cap: u32,
    ) -> Self {
        let steps = u32::try_from(state.total()).unwrap_or(u32::MAX);
        Self {
            id,
            context,
            profile,
            state,
            steps,
            alive: steps < length_cap,
            start_time,
            length_cap,
            seed,
            dynamics: stream_rng(seed, purpose::DYNAMICS, id),
            policy_rng: None,
            history: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn state(&self) -> &ExposureState {
        &self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Rounds played in this session, oldest first.
    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Exploration stream for whichever agent serves this session.
    pub fn policy_rng(&mut self) -> &mut SimRng {
        let (seed, id) = (self.seed, self.id);
        self.policy_rng
            .get_or_insert_with(|| stream_rng(seed, purpose::POLICY, id))
    }

    /// Hidden ground truth. Only simulators, oracles and tests should read this.
    pub fn oracle_profile(&self) -> &CustomerProfile {
        &self.profile
    }

    /// Exposes content type `action` for one round.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        self.ensure_alive()?;
        let p_click = self.profile.click_probability(&self.state, action);
        let clicked = self.dynamics.random::<f64>() < p_click;
        self.finish_round(action, clicked, false)
    }

    /// Samples the customer's pick from `slate` without advancing the session.
    pub fn slate_choice(&mut self, catalog: &Catalog, slate: &[usize]) -> Result<Option<usize>> {
        self.ensure_alive()?;
        validate_slate(catalog, slate)?;
        let model = ProfileChoiceModel {
            profile: &self.profile,
            catalog,
        };
        let probs = model.choice_probabilities(&self.state, slate)?;
        Ok(sample_choice(&probs, &mut self.dynamics).map(|pos| slate[pos]))
    }

    /// Shows a slate of catalog items. A click exposes the clicked item's type
    /// and earns reward 1; no click ends the session with reward 0 (logged as an
    /// exposure of the slate's first item).
    pub fn step_slate(&mut self, catalog: &Catalog, slate: &[usize]) -> Result<SlateOutcome> {
        let chosen = self.slate_choice(catalog, slate)?;
        let (action, clicked) = match chosen {
            Some(item) => (catalog.type_of(item), true),
            None => (catalog.type_of(slate[0]), false),
        };
        let step = self.finish_round(action, clicked, !clicked)?;
        Ok(SlateOutcome { chosen, step })
    }

    fn ensure_alive(&self) -> Result<()> {
        if self.alive {
            Ok(())
        } else {
            Err(Error::DeadSession(self.id))
        }
    }

    fn finish_round(&mut self, action: Action, clicked: bool, force_done: bool) -> Result<StepOutcome> {
        let next_state = increment_exposure(&self.state, action)?;
        // always draw both so the stream position depends only on the step count
        let deal_draw: f64 = self.dynamics.random();
        let depart_draw: f64 = self.dynamics.random();
        let deal = clicked && deal_draw < self.profile.deal_prob;
        let done = force_done
            || self.steps + 1 >= self.length_cap
            || depart_draw < self.profile.departure_probability();
        let transition = Transition {
            context: self.context.clone(),
            state: std::mem::replace(&mut self.state, next_state.clone()),
            action,
            reward: if clicked { 1.0 } else { 0.0 },
            next_state,
            done,
            timestamp: self.start_time + u64::from(self.steps),
        };
        self.steps += 1;
        self.alive = !done;
        self.history.push(RoundRecord {
            action,
            clicked,
            deal,
            done,
        });
        Ok(StepOutcome { transition, deal })
    }
}
