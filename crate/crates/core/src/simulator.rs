//! Local-access simulator contract and deterministic randomness.
//!
//! A simulator may only be queried at states it has already returned (or
//! the initial state). Randomness comes from counter-based streams keyed by
//! where in the planner the draw happens, so a rollout produces the same
//! trajectory whether it runs on one thread or many.

use std::collections::HashSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionId, StateId};

/// Stream channel for action sampling.
pub const ACTION_CHANNEL: u64 = 0;
/// Stream channel for transition sampling.
pub const TRANSITION_CHANNEL: u64 = 1;

/// Position of a stream within a planner run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub loop_index: u64,
    pub iteration: u64,
    pub coreset_index: u64,
    pub rollout_index: u64,
    /// Sub-stream selector; 0 for planner streams, nonzero for streams that
    /// must be independent of them (e.g. the uncoupled side of a coupling).
    pub branch: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            ..Self::default()
        }
    }

    pub fn with_rollout(self, loop_index: u64, iteration: u64, coreset_index: u64, rollout_index: u64) -> Self {
        Self {
            loop_index,
            iteration,
            coreset_index,
            rollout_index,
            ..self
        }
    }

    pub fn derive(self, branch: u64) -> Self {
        Self { branch, ..self }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut state = splitmix(self.master_seed ^ 0x6a09_e667_f3bc_c908);
        for part in [
            self.loop_index,
            self.iteration,
            self.coreset_index,
            self.rollout_index,
            self.branch,
        ] {
            state = splitmix(state ^ splitmix(part.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            state = splitmix(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        bytes
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draws that are a pure function of `(key, channel, counter)`.
///
/// Backed by ChaCha8, whose keystream position is directly addressable.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: StreamKey,
    channel: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(key: StreamKey, channel: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key.seed_bytes());
        rng.set_stream(channel);
        Self {
            key,
            channel,
            counter: 0,
            rng,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn channel(&self) -> u64 {
        self.channel
    }

    /// Index of the next draw.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Uniform in `[0, 1)` at `counter`, then positions the stream after it.
    pub fn uniform_at(&mut self, counter: u64) -> f64 {
        if counter != self.counter {
            // Each draw consumes one u64, i.e. two 32-bit keystream words.
            self.rng.set_word_pos(u128::from(counter) * 2);
            self.counter = counter;
        }
        self.next_uniform()
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Reward and successor returned by one simulator query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub reward: f64,
    pub next_state: StateId,
}

/// An environment with a finite action set and a sampling kernel.
///
/// `transition` must be deterministic given the uniform draw `u`: stochastic
/// environments apply an inverse CDF over a fixed, documented ordering of
/// successor states.
pub trait Environment: Send + Sync {
    fn action_count(&self) -> usize;

    fn transition(&self, state: StateId, action: ActionId, u: f64) -> Result<Transition>;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }

    fn transition(&self, state: StateId, action: ActionId, u: f64) -> Result<Transition> {
        (**self).transition(state, action, u)
    }
}

impl<E: Environment + ?Sized> Environment for std::sync::Arc<E> {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }

    fn transition(&self, state: StateId, action: ActionId, u: f64) -> Result<Transition> {
        (**self).transition(state, action, u)
    }
}

/// Anything that answers simulator queries under local access.
pub trait Simulator {
    fn query(&mut self, state: StateId, action: ActionId, rng: &mut RngStream) -> Result<Transition>;
}

/// Local-access simulator: tracks the states it has returned and rejects
/// queries anywhere else.
pub struct SimulatorHandle<'e> {
    env: &'e dyn Environment,
    visited: HashSet<StateId>,
    query_count: u64,
}

impl<'e> SimulatorHandle<'e> {
    pub fn new(env: &'e dyn Environment, initial: StateId) -> Self {
        Self {
            env,
            visited: HashSet::from([initial]),
            query_count: 0,
        }
    }

    pub fn env(&self) -> &'e dyn Environment {
        self.env
    }

    pub fn is_visited(&self, state: StateId) -> bool {
        self.visited.contains(&state)
    }

    pub fn visited_count(&self) -> usize {
        self.visited.len()
    }

    /// Number of queries answered so far.
    pub fn checkpoint_count(&self) -> u64 {
        self.query_count
    }

    /// A lightweight handle for one rollout. Its additions are merged back
    /// with [`SimulatorHandle::absorb`].
    pub fn view(&self) -> SimulatorView<'_> {
        SimulatorView {
            env: self.env,
            base: &self.visited,
            added: Vec::new(),
            query_count: 0,
        }
    }

    pub fn absorb(&mut self, delta: ViewDelta) {
        self.visited.extend(delta.added);
        self.query_count += delta.query_count;
    }

    fn answer(&mut self, state: StateId, action: ActionId, u: f64) -> Result<Transition> {
        if !self.visited.contains(&state) {
            return Err(Error::LocalAccessViolation { state });
        }
        let t = self.env.transition(state, action, u)?;
        self.visited.insert(t.next_state);
        self.query_count += 1;
        Ok(t)
    }
}

impl Simulator for SimulatorHandle<'_> {
    fn query(&mut self, state: StateId, action: ActionId, rng: &mut RngStream) -> Result<Transition> {
        let u = rng.next_uniform();
        self.answer(state, action, u)
    }
}

/// Rollout-local view over a frozen [`SimulatorHandle`].
pub struct SimulatorView<'a> {
    env: &'a dyn Environment,
    base: &'a HashSet<StateId>,
    added: Vec<StateId>,
    query_count: u64,
}

/// States and query count accumulated by a [`SimulatorView`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViewDelta {
    pub added: Vec<StateId>,
    pub query_count: u64,
}

impl SimulatorView<'_> {
    pub fn into_delta(self) -> ViewDelta {
        ViewDelta {
            added: self.added,
            query_count: self.query_count,
        }
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    fn knows(&self, state: StateId) -> bool {
        self.base.contains(&state) || self.added.contains(&state)
    }
}

impl Simulator for SimulatorView<'_> {
    fn query(&mut self, state: StateId, action: ActionId, rng: &mut RngStream) -> Result<Transition> {
        let u = rng.next_uniform();
        if !self.knows(state) {
            return Err(Error::LocalAccessViolation { state });
        }
        let t = self.env.transition(state, action, u)?;
        if !self.knows(t.next_state) {
            self.added.push(t.next_state);
        }
        self.query_count += 1;
        Ok(t)
    }
}

/// Paired streams for a coupled simulator query: the primary stream drives
/// the main simulator, the independent stream feeds the virtual simulator
/// whenever the two queries differ.
#[derive(Debug, Clone)]
pub struct CoupledRng {
    primary: RngStream,
    independent: RngStream,
}

/// Branch used for the virtual side of a coupling.
pub const VIRTUAL_BRANCH: u64 = 0x7669_7274;

impl CoupledRng {
    pub fn new(key: StreamKey, channel: u64) -> Self {
        Self {
            primary: RngStream::new(key, channel),
            independent: RngStream::new(key.derive(VIRTUAL_BRANCH), channel),
        }
    }

    /// Advances both streams by one draw and returns `(primary, independent)`.
    pub fn next_pair(&mut self) -> (f64, f64) {
        (self.primary.next_uniform(), self.independent.next_uniform())
    }
}

/// Queries two simulators in lockstep. Equal query pairs share a single draw
/// and therefore the same successor; otherwise the virtual side draws from an
/// independent stream. The main side always uses the primary stream, so its
/// trajectory matches an uncoupled run with the same keys.
pub fn coupled_query(
    main: &mut SimulatorHandle<'_>,
    virt: &mut SimulatorHandle<'_>,
    main_q: Option<(StateId, ActionId)>,
    virt_q: (StateId, ActionId),
    rng: &mut CoupledRng,
) -> Result<(Option<Transition>, Transition)> {
    let (shared, own) = rng.next_pair();
    let main_t = match main_q {
        Some((s, a)) => Some(main.answer(s, a, shared)?),
        None => None,
    };
    let virt_u = if main_q == Some(virt_q) { shared } else { own };
    let virt_t = virt.answer(virt_q.0, virt_q.1, virt_u)?;
    Ok((main_t, virt_t))
}
