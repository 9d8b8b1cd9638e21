//! Main planner and its virtual counterpart run in lockstep on coupled
//! simulators.
//!
//! The virtual planner never aborts a rollout. It records the first pair
//! outside the good set, keeps going, and replaces `wᵀφ` by the exact `Q`
//! of its current policy wherever the feature is not confident. Both sides
//! draw from the same keyed streams, so until the main planner restarts the
//! two runs see identical trajectories.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::coreset::{CoreSet, CoreSetEntry};
use crate::error::{invalid, Result};
use crate::mdp::{argmax, clip_q, sample_index, softmax, ActionId, FeatureMap, PolicySnapshot, StateId};
use crate::numerics::{dot, FeatureVector};
use crate::planner::{Algorithm, PlannerConfig};
use crate::rollout::{average, TraceStep};
use crate::simulator::{coupled_query, CoupledRng, SimulatorHandle, StreamKey, ACTION_CHANNEL, TRANSITION_CHANNEL};

use super::{exact_policy_q, PolicyTable, TabularMdp};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopComparison {
    pub loop_index: usize,
    pub coresets_equal_at_start: bool,
    /// `(iteration, coreset_index, rollout_index)` of the main restart.
    pub main_restart: Option<(usize, usize, usize)>,
    /// Trajectories the main planner ran in this loop.
    pub trajectories_compared: usize,
    /// Of those, how many differ from the virtual prefix of equal length.
    pub trajectory_mismatches: usize,
    pub main_added: Option<CoreSetEntry>,
    pub virtual_added: Option<CoreSetEntry>,
    /// Set on the main planner's final loop: every `w_k` equals `w̃_k` to the
    /// bit.
    pub weights_identical: Option<bool>,
}

impl LoopComparison {
    pub fn added_equal(&self) -> bool {
        self.main_added == self.virtual_added
    }

    pub fn passed(&self) -> bool {
        self.coresets_equal_at_start
            && self.trajectory_mismatches == 0
            && self.added_equal()
            && self.weights_identical != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessReport {
    pub loops: Vec<LoopComparison>,
    /// Final-loop weights of the main planner.
    pub main_weights: Vec<Vec<f64>>,
    pub virtual_weights: Vec<Vec<f64>>,
    pub main_coreset: Vec<CoreSetEntry>,
    pub main_queries: u64,
}

impl HarnessReport {
    pub fn final_weights_identical(&self) -> bool {
        self.loops.last().and_then(|l| l.weights_identical) == Some(true)
    }

    pub fn growth_identical(&self) -> bool {
        self.loops.iter().all(|l| l.coresets_equal_at_start && l.added_equal())
    }

    pub fn passed(&self) -> bool {
        self.final_weights_identical() && self.loops.iter().all(LoopComparison::passed)
    }
}

enum Screen {
    Uncertain(ActionId, FeatureVector),
    Confident(Vec<f64>),
}

struct Side<'e> {
    coreset: CoreSet,
    sim: SimulatorHandle<'e>,
}

fn entries_equal(a: &CoreSet, b: &CoreSet) -> bool {
    a.len() == b.len()
        && a.entries()
            .iter()
            .zip(b.entries())
            .all(|(x, y)| x.state == y.state && x.action == y.action && x.feature == y.feature)
}

fn bits_equal(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

/// Runs both planners for as many loops as the main one needs.
pub fn virtual_pi_harness(
    config: &PlannerConfig,
    mdp: &TabularMdp,
    fmap: &dyn FeatureMap,
    rho: StateId,
) -> Result<HarnessReport> {
    config.validate()?;
    let s_count = mdp.state_count();
    let a_count = crate::simulator::Environment::action_count(mdp);
    let features: Vec<Vec<FeatureVector>> = (0..s_count)
        .map(|s| {
            (0..a_count)
                .map(|a| fmap.feature(StateId(s as u64), ActionId(a)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let initial = CoreSet::initialize(rho, fmap, a_count, config.lambda, config.tau)?;
    let mut main = Side {
        coreset: initial.clone(),
        sim: SimulatorHandle::new(mdp, rho),
    };
    let mut virt = Side {
        coreset: initial,
        sim: SimulatorHandle::new(mdp, rho),
    };
    let uniform: PolicyTable = vec![vec![1.0 / a_count as f64; a_count]; s_count];
    let mut loops = Vec::new();

    for loop_index in 0.. {
        if loop_index > 0 && loops.len() as f64 > main.coreset.c_max() + 1.0 {
            return Err(invalid("harness", "loop count exceeded the core-set bound"));
        }
        main.coreset.reset_estimates();
        virt.coreset.reset_estimates();
        if !entries_equal(&main.coreset, &virt.coreset) {
            // Growth already diverged; later loops are not comparable.
            loops.push(LoopComparison {
                loop_index,
                coresets_equal_at_start: false,
                main_restart: None,
                trajectories_compared: 0,
                trajectory_mismatches: 0,
                main_added: None,
                virtual_added: None,
                weights_identical: Some(false),
            });
            return Ok(HarnessReport {
                loops,
                main_weights: Vec::new(),
                virtual_weights: Vec::new(),
                main_coreset: main.coreset.entries().to_vec(),
                main_queries: main.sim.checkpoint_count(),
            });
        }
        let in_good_set: Vec<Vec<bool>> = features
            .iter()
            .map(|row| row.iter().map(|phi| virt.coreset.is_confident(phi)).collect())
            .collect::<Result<_>>()?;

        let mut main_alive = true;
        let mut main_restart = None;
        let mut main_added = None;
        let mut virtual_added: Option<CoreSetEntry> = None;
        let mut compared = 0;
        let mut mismatches = 0;
        let mut main_history: Vec<Vec<f64>> = Vec::new();
        let mut virt_history: Vec<Vec<f64>> = Vec::new();
        let mut virt_table = uniform.clone();
        let mut virt_cumulative = vec![vec![0.0; a_count]; s_count];

        for k in 1..=config.k {
            let main_policy = config.iteration_policy(&main_history);
            let mut main_cache: HashMap<StateId, Screen> = HashMap::new();
            let mut main_estimates = Vec::new();
            let mut virt_estimates = Vec::new();
            for ci in 0..virt.coreset.len() {
                let start = {
                    let e = &virt.coreset.entries()[ci];
                    (e.state, e.action)
                };
                let mut main_returns = Vec::new();
                let mut virt_returns = Vec::new();
                for i in 0..config.m {
                    let key = StreamKey::new(config.master_seed).with_rollout(
                        loop_index as u64,
                        k as u64,
                        ci as u64,
                        i as u64,
                    );
                    let mut actions = CoupledRng::new(key, ACTION_CHANNEL);
                    let mut transitions = CoupledRng::new(key, TRANSITION_CHANNEL);
                    let mut main_state = main_alive.then_some(start);
                    let mut main_trace = Vec::new();
                    let mut virt_trace = Vec::new();
                    let ran_main = main_state.is_some();

                    // Step 0: both query their start pairs.
                    let vq = start;
                    let (mt, vt) = coupled_query(&mut main.sim, &mut virt.sim, main_state, vq, &mut transitions)?;
                    let mut main_total = 0.0;
                    if let (Some((s, a)), Some(t)) = (main_state, mt) {
                        main_trace.push(TraceStep {
                            state: s,
                            action: a,
                            reward: t.reward,
                            next_state: t.next_state,
                        });
                        main_total = t.reward;
                        main_state = Some((t.next_state, ActionId(0)));
                    }
                    virt_trace.push(TraceStep {
                        state: vq.0,
                        action: vq.1,
                        reward: vt.reward,
                        next_state: vt.next_state,
                    });
                    let mut virt_total = vt.reward;
                    let mut virt_s = vt.next_state;
                    let mut discount = 1.0;

                    for _ in 1..=config.n {
                        let (u_main, u_own) = actions.next_pair();
                        let mut main_choice = None;
                        if let Some((s, _)) = main_state {
                            let info = match main_cache.entry(s) {
                                Entry::Occupied(e) => e.into_mut(),
                                Entry::Vacant(e) => e.insert(screen(&main.coreset, &main_policy, fmap, s, a_count)?),
                            };
                            match info {
                                Screen::Uncertain(a, phi) => {
                                    main_alive = false;
                                    main_restart = Some((k, ci, i));
                                    main_added = Some(CoreSetEntry::new(s, *a, phi.clone()));
                                    main_state = None;
                                }
                                Screen::Confident(probs) => {
                                    main_choice = Some((s, sample_index(probs, u_main), probs.clone()));
                                }
                            }
                        }

                        let vs = virt_s.0 as usize;
                        if virtual_added.is_none() {
                            if let Some(a) = in_good_set[vs].iter().position(|ok| !ok) {
                                virtual_added =
                                    Some(CoreSetEntry::new(virt_s, ActionId(a), features[vs][a].clone()));
                            }
                        }
                        let virt_probs = &virt_table[vs];
                        let shared = matches!(&main_choice, Some((s, _, p)) if *s == virt_s && p == virt_probs);
                        let va = sample_index(virt_probs, if shared { u_main } else { u_own });

                        let main_q = main_choice.as_ref().map(|(s, a, _)| (*s, *a));
                        let (mt, vt) =
                            coupled_query(&mut main.sim, &mut virt.sim, main_q, (virt_s, va), &mut transitions)?;
                        discount *= config.gamma;
                        if let (Some((s, a)), Some(t)) = (main_q, mt) {
                            main_trace.push(TraceStep {
                                state: s,
                                action: a,
                                reward: t.reward,
                                next_state: t.next_state,
                            });
                            main_total += discount * t.reward;
                            main_state = Some((t.next_state, ActionId(0)));
                        }
                        virt_trace.push(TraceStep {
                            state: virt_s,
                            action: va,
                            reward: vt.reward,
                            next_state: vt.next_state,
                        });
                        virt_total += discount * vt.reward;
                        virt_s = vt.next_state;
                    }

                    if ran_main {
                        compared += 1;
                        if virt_trace[..main_trace.len()] != main_trace[..] {
                            mismatches += 1;
                        }
                        if main_alive {
                            main_returns.push(main_total);
                        }
                    }
                    virt_returns.push(virt_total);
                }
                if main_alive {
                    main_estimates.push(average(&main_returns));
                }
                virt_estimates.push(average(&virt_returns));
            }

            if main_alive {
                main.coreset.set_estimates(&main_estimates)?;
                main_history.push(main.coreset.ridge_weights()?);
            }
            virt.coreset.set_estimates(&virt_estimates)?;
            let w = virt.coreset.ridge_weights()?;
            update_virtual_policy(
                config,
                mdp,
                &features,
                &in_good_set,
                &w,
                &mut virt_table,
                &mut virt_cumulative,
            )?;
            virt_history.push(w);
        }

        let main_finished = main_alive;
        if let Some(entry) = &main_added {
            main.coreset.add_entry(entry.clone())?;
        }
        if let Some(entry) = &virtual_added {
            virt.coreset.add_entry(entry.clone())?;
        }
        loops.push(LoopComparison {
            loop_index,
            coresets_equal_at_start: true,
            main_restart,
            trajectories_compared: compared,
            trajectory_mismatches: mismatches,
            main_added,
            virtual_added,
            weights_identical: main_finished.then(|| bits_equal(&main_history, &virt_history)),
        });
        if main_finished {
            return Ok(HarnessReport {
                loops,
                main_weights: main_history,
                virtual_weights: virt_history,
                main_coreset: main.coreset.entries().to_vec(),
                main_queries: main.sim.checkpoint_count(),
            });
        }
    }
    unreachable!("the loop above only exits by returning")
}

fn screen(
    coreset: &CoreSet,
    policy: &PolicySnapshot,
    fmap: &dyn FeatureMap,
    state: StateId,
    action_count: usize,
) -> Result<Screen> {
    for a in 0..action_count {
        let phi = fmap.feature(state, ActionId(a))?;
        if !coreset.is_confident(&phi)? {
            return Ok(Screen::Uncertain(ActionId(a), phi));
        }
    }
    Ok(Screen::Confident(policy.action_probabilities(state, fmap, action_count)?))
}

/// Builds `π̃_k` from `w̃_k`: the virtual `Q` is the linear prediction on the
/// good set and the exact `Q` of `π̃_{k-1}` elsewhere.
fn update_virtual_policy(
    config: &PlannerConfig,
    mdp: &TabularMdp,
    features: &[Vec<FeatureVector>],
    in_good_set: &[Vec<bool>],
    w: &[f64],
    table: &mut PolicyTable,
    cumulative: &mut [Vec<f64>],
) -> Result<()> {
    let needs_exact = in_good_set.iter().flatten().any(|ok| !ok);
    let exact = if needs_exact {
        Some(exact_policy_q(mdp, table)?)
    } else {
        None
    };
    for (s, row) in features.iter().enumerate() {
        let q: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(a, phi)| {
                if in_good_set[s][a] {
                    let raw = dot(phi.as_slice(), w);
                    match config.algorithm {
                        Algorithm::Lspi => raw,
                        Algorithm::Politex => clip_q(raw, config.gamma),
                    }
                } else {
                    exact.as_ref().expect("computed when needed")[s][a]
                }
            })
            .collect();
        table[s] = match config.algorithm {
            Algorithm::Lspi => {
                let mut probs = vec![0.0; q.len()];
                probs[argmax(&q)] = 1.0;
                probs
            }
            Algorithm::Politex => {
                for (c, x) in cumulative[s].iter_mut().zip(&q) {
                    *c += x;
                }
                let logits: Vec<f64> = cumulative[s].iter().map(|c| config.alpha * c).collect();
                softmax(&logits)
            }
        };
    }
    Ok(())
}
