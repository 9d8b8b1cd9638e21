//! Monte Carlo return estimation with good-set screening.
//!
//! Each trajectory queries its start pair, then at every later step checks
//! the features of *all* actions at the current state before acting. The
//! first feature outside the good set aborts the rollout and is reported as
//! a candidate core-set entry.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::coreset::{CoreSet, CoreSetEntry};
use crate::error::{invalid, Result};
use crate::mdp::{sample_index, ActionId, FeatureMap, PolicySnapshot, StateId};
use crate::simulator::{
    RngStream, Simulator, SimulatorHandle, StreamKey, ViewDelta, ACTION_CHANNEL, TRANSITION_CHANNEL,
};

/// `m` trajectories of `n` screened steps after the start pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSpec {
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
}

impl RolloutSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m", "need at least one rollout"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }

    /// Largest possible estimate: `(1 - γ^{n+1}) / (1 - γ)`.
    pub fn max_return(&self) -> f64 {
        (1.0 - self.gamma.powi(self.n as i32 + 1)) / (1.0 - self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutResult {
    Done { estimate: f64 },
    Uncertain { entry: CoreSetEntry },
}

/// Outcome of a single trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryOutcome {
    Done { discounted_return: f64 },
    Uncertain { step: usize, entry: CoreSetEntry },
}

/// One executed step, recorded when tracing is requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateId,
}

/// Everything a rollout reads; all of it is frozen for the duration of a
/// core-set pass.
pub struct RolloutContext<'a> {
    pub spec: RolloutSpec,
    pub policy: &'a PolicySnapshot,
    pub coreset: &'a CoreSet,
    pub fmap: &'a dyn FeatureMap,
    pub action_count: usize,
    /// Key carrying seed, loop and iteration; trajectories fill in the
    /// core-set and rollout indices.
    pub key: StreamKey,
}

enum StateInfo {
    Uncertain(ActionId, crate::numerics::FeatureVector),
    Confident(Vec<f64>),
}

/// Per-state screening results and action distributions. Valid only while
/// the policy and the core set are frozen.
#[derive(Default)]
pub struct StateCache {
    states: HashMap<StateId, StateInfo>,
}

impl StateCache {
    fn lookup(&mut self, ctx: &RolloutContext<'_>, state: StateId) -> Result<&StateInfo> {
        Ok(match self.states.entry(state) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(screen_state(ctx, state)?),
        })
    }
}

fn screen_state(ctx: &RolloutContext<'_>, state: StateId) -> Result<StateInfo> {
    for a in 0..ctx.action_count {
        let phi = ctx.fmap.feature(state, ActionId(a))?;
        if !ctx.coreset.is_confident(&phi)? {
            return Ok(StateInfo::Uncertain(ActionId(a), phi));
        }
    }
    let probs = ctx
        .policy
        .action_probabilities(state, ctx.fmap, ctx.action_count)?;
    Ok(StateInfo::Confident(probs))
}

impl RolloutContext<'_> {
    pub fn trajectory_key(&self, coreset_index: usize, rollout_index: usize) -> StreamKey {
        StreamKey {
            coreset_index: coreset_index as u64,
            rollout_index: rollout_index as u64,
            ..self.key
        }
    }
}

/// Runs one trajectory of length `n + 1` from `start`.
pub fn run_trajectory<S: Simulator>(
    ctx: &RolloutContext<'_>,
    start: (StateId, ActionId),
    key: StreamKey,
    sim: &mut S,
    cache: &mut StateCache,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<TrajectoryOutcome> {
    #[cfg(debug_assertions)]
    if ctx.coreset.tau() >= 1.0 {
        let phi = ctx.fmap.feature(start.0, start.1)?;
        debug_assert!(
            ctx.coreset.is_confident(&phi)?,
            "rollout start pair outside the good set"
        );
    }

    let mut actions = RngStream::new(key, ACTION_CHANNEL);
    let mut transitions = RngStream::new(key, TRANSITION_CHANNEL);
    let gamma = ctx.spec.gamma;

    let (s0, a0) = start;
    let first = sim.query(s0, a0, &mut transitions)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(TraceStep {
            state: s0,
            action: a0,
            reward: first.reward,
            next_state: first.next_state,
        });
    }
    let mut total = first.reward;
    let mut discount = 1.0;
    let mut state = first.next_state;

    for step in 1..=ctx.spec.n {
        let u = actions.next_uniform();
        let action = match cache.lookup(ctx, state)? {
            StateInfo::Uncertain(a, phi) => {
                return Ok(TrajectoryOutcome::Uncertain {
                    step,
                    entry: CoreSetEntry::new(state, *a, phi.clone()),
                });
            }
            StateInfo::Confident(probs) => sample_index(probs, u),
        };
        let t = sim.query(state, action, &mut transitions)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceStep {
                state,
                action,
                reward: t.reward,
                next_state: t.next_state,
            });
        }
        discount *= gamma;
        total += discount * t.reward;
        state = t.next_state;
    }
    Ok(TrajectoryOutcome::Done {
        discounted_return: total,
    })
}

/// Estimates `Q_π(start)` from `m` screened trajectories, stopping at the
/// first one that leaves the good set.
pub fn confident_rollout(
    ctx: &RolloutContext<'_>,
    coreset_index: usize,
    start: (StateId, ActionId),
    sim: &mut SimulatorHandle<'_>,
) -> Result<RolloutResult> {
    ctx.spec.validate()?;
    let mut cache = StateCache::default();
    let mut returns = Vec::with_capacity(ctx.spec.m);
    for i in 0..ctx.spec.m {
        let key = ctx.trajectory_key(coreset_index, i);
        let mut view = sim.view();
        let outcome = run_trajectory(ctx, start, key, &mut view, &mut cache, None);
        let delta = view.into_delta();
        sim.absorb(delta);
        match outcome? {
            TrajectoryOutcome::Done { discounted_return } => returns.push(discounted_return),
            TrajectoryOutcome::Uncertain { entry, .. } => return Ok(RolloutResult::Uncertain { entry }),
        }
    }
    Ok(RolloutResult::Done {
        estimate: average(&returns),
    })
}

pub(crate) fn average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Result of estimating every core-set entry under one policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PassOutcome {
    Estimates(Vec<f64>),
    Uncertain {
        coreset_index: usize,
        rollout_index: usize,
        entry: CoreSetEntry,
    },
}

/// Runs [`confident_rollout`] for every core-set entry in order.
///
/// With a thread pool, the `m` trajectories of each entry run concurrently;
/// results are merged in rollout-index order and only the prefix up to the
/// first uncertain trajectory is kept, so the outcome, the visited set and
/// the query count are identical to the sequential run.
pub fn run_coreset_pass(
    ctx: &RolloutContext<'_>,
    sim: &mut SimulatorHandle<'_>,
    pool: Option<&ThreadPool>,
) -> Result<PassOutcome> {
    ctx.spec.validate()?;
    if ctx.coreset.is_empty() {
        return Err(invalid("coreset", "cannot run a pass over an empty core set"));
    }
    let mut estimates = Vec::with_capacity(ctx.coreset.len());
    let mut cache = StateCache::default();
    for (ci, entry) in ctx.coreset.entries().iter().enumerate() {
        let start = (entry.state, entry.action);
        let result = match pool {
            None => {
                let mut returns = Vec::with_capacity(ctx.spec.m);
                let mut uncertain = None;
                for i in 0..ctx.spec.m {
                    let mut view = sim.view();
                    let outcome =
                        run_trajectory(ctx, start, ctx.trajectory_key(ci, i), &mut view, &mut cache, None);
                    let delta = view.into_delta();
                    sim.absorb(delta);
                    match outcome? {
                        TrajectoryOutcome::Done { discounted_return } => returns.push(discounted_return),
                        TrajectoryOutcome::Uncertain { entry, .. } => {
                            uncertain = Some((i, entry));
                            break;
                        }
                    }
                }
                uncertain.map_or(Ok(average(&returns)), Err)
            }
            Some(pool) => {
                let frozen: &SimulatorHandle<'_> = sim;
                let outcomes: Vec<(Result<TrajectoryOutcome>, ViewDelta)> = pool.install(|| {
                    (0..ctx.spec.m)
                        .into_par_iter()
                        .map_init(StateCache::default, |cache, i| {
                            let mut view = frozen.view();
                            let outcome = run_trajectory(
                                ctx,
                                start,
                                ctx.trajectory_key(ci, i),
                                &mut view,
                                cache,
                                None,
                            );
                            (outcome, view.into_delta())
                        })
                        .collect()
                });
                let mut returns = Vec::with_capacity(ctx.spec.m);
                let mut uncertain = None;
                for (i, (outcome, delta)) in outcomes.into_iter().enumerate() {
                    sim.absorb(delta);
                    match outcome? {
                        TrajectoryOutcome::Done { discounted_return } => returns.push(discounted_return),
                        TrajectoryOutcome::Uncertain { entry, .. } => {
                            uncertain = Some((i, entry));
                            break;
                        }
                    }
                }
                uncertain.map_or(Ok(average(&returns)), Err)
            }
        };
        match result {
            Ok(estimate) => {
                debug_assert!(estimate >= 0.0 && estimate <= ctx.spec.max_return() + 1e-9);
                estimates.push(estimate);
            }
            Err((rollout_index, entry)) => {
                return Ok(PassOutcome::Uncertain {
                    coreset_index: ci,
                    rollout_index,
                    entry,
                })
            }
        }
    }
    Ok(PassOutcome::Estimates(estimates))
}
