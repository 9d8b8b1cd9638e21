//! Confident MC-LSPI and Confident MC-Politex.
//!
//! Both share one control loop: seed the core set from the initial state,
//! then run up to `K` approximate policy-iteration steps. Whenever a rollout
//! leaves the good set, the offending pair joins the core set and the loop
//! starts over from the initial policy.

mod params;

use std::fmt;
use std::str::FromStr;

use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use crate::coreset::{CoreSet, CoreSetEntry};
use crate::error::{invalid, Error, Result};
use crate::mdp::{FeatureMap, PolicySnapshot, StateId};
use crate::numerics::l2_norm;
use crate::rollout::{run_coreset_pass, PassOutcome, RolloutContext, RolloutSpec};
use crate::simulator::{Environment, SimulatorHandle, StreamKey};

pub use params::{
    lspi_params_from_theorem, misspecified_params_from_theorem, politex_params_from_theorem,
    TheoremParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lspi,
    Politex,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Lspi => "lspi",
            Algorithm::Politex => "politex",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lspi" => Ok(Algorithm::Lspi),
            "politex" => Ok(Algorithm::Politex),
            other => Err(invalid("algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Politex step size; ignored by LSPI.
    pub alpha: f64,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub master_seed: u64,
    /// Worker threads for rollouts. The output does not depend on it.
    pub parallelism: usize,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.algorithm == Algorithm::Politex && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be positive for politex, got {}", self.alpha)));
        }
        if self.m == 0 {
            return Err(invalid("m", "need at least one rollout"));
        }
        if self.k == 0 {
            return Err(invalid("k", "need at least one iteration"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism", "must be at least 1"));
        }
        Ok(())
    }

    pub fn rollout_spec(&self) -> RolloutSpec {
        RolloutSpec {
            m: self.m,
            n: self.n,
            gamma: self.gamma,
        }
    }

    /// Policy used in iteration `k` (1-based) given `w_1..w_{k-1}`.
    pub fn iteration_policy(&self, history: &[Vec<f64>]) -> PolicySnapshot {
        match (self.algorithm, history.last()) {
            (_, None) => PolicySnapshot::Uniform,
            (Algorithm::Lspi, Some(w)) => PolicySnapshot::Greedy { weights: w.clone() },
            (Algorithm::Politex, Some(_)) => PolicySnapshot::Politex {
                weight_history: history.to_vec(),
                alpha: self.alpha,
                gamma: self.gamma,
            },
        }
    }
}

/// One line of run telemetry: a completed iteration or a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub loop_index: usize,
    pub iteration: usize,
    pub coreset_size: usize,
    pub restart: bool,
    pub queries: u64,
    /// `‖w_k‖`; absent on restart rows.
    pub weight_norm: Option<f64>,
}

/// A core-set insertion triggered by an uncertain rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub loop_index: usize,
    pub iteration: usize,
    pub coreset_index: usize,
    pub rollout_index: usize,
    pub entry: CoreSetEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannedPolicy {
    /// Greedy policy in the last weight vector of the final loop.
    Lspi {
        weights: Vec<f64>,
        policy: PolicySnapshot,
    },
    /// `π_0, …, π_{K-1}`; the output is a uniform draw among them.
    Politex { policies: Vec<PolicySnapshot> },
}

impl PlannedPolicy {
    /// Components of the output with their mixture weights.
    pub fn components(&self) -> Vec<(f64, &PolicySnapshot)> {
        match self {
            PlannedPolicy::Lspi { policy, .. } => vec![(1.0, policy)],
            PlannedPolicy::Politex { policies } => {
                let w = 1.0 / policies.len() as f64;
                policies.iter().map(|p| (w, p)).collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub loops: usize,
    pub coreset: CoreSet,
    pub initial_coreset_size: usize,
    pub queries: u64,
    pub records: Vec<IterationRecord>,
    pub restarts: Vec<Restart>,
    /// `w_1..w_K` of the final loop.
    pub weight_history: Vec<Vec<f64>>,
}

impl Diagnostics {
    /// `w_{K-1}`, the alternative reading of the LSPI output; `None` when
    /// `K = 1`.
    pub fn penultimate_weights(&self) -> Option<&[f64]> {
        let len = self.weight_history.len();
        (len >= 2).then(|| self.weight_history[len - 2].as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct PlannerOutput {
    pub policy: PlannedPolicy,
    pub diagnostics: Diagnostics,
}

pub(crate) fn build_pool(parallelism: usize) -> Result<Option<ThreadPool>> {
    if parallelism <= 1 {
        return Ok(None);
    }
    ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map(Some)
        .map_err(|e| invalid("parallelism", e.to_string()))
}

pub(crate) fn iteration_key(config: &PlannerConfig, loop_index: usize, iteration: usize) -> StreamKey {
    StreamKey::new(config.master_seed).with_rollout(loop_index as u64, iteration as u64, 0, 0)
}

/// Runs the planner from initial state `rho`.
pub fn plan(
    config: &PlannerConfig,
    env: &dyn Environment,
    fmap: &dyn FeatureMap,
    rho: StateId,
) -> Result<PlannerOutput> {
    config.validate()?;
    if config.tau < 1.0 {
        log::warn!(
            "tau = {} < 1: core-set start pairs may fall outside the good set",
            config.tau
        );
    }
    let action_count = env.action_count();
    if action_count == 0 {
        return Err(invalid("action_count", "environment has no actions"));
    }
    let pool = build_pool(config.parallelism)?;
    let mut coreset = CoreSet::initialize(rho, fmap, action_count, config.lambda, config.tau)?;
    let initial_coreset_size = coreset.len();
    let mut sim = SimulatorHandle::new(env, rho);
    let mut records = Vec::new();
    let mut restarts = Vec::new();
    let mut loop_index = 0;

    let history = loop {
        coreset.reset_estimates();
        let mut history: Vec<Vec<f64>> = Vec::with_capacity(config.k);
        let mut restart = None;
        for k in 1..=config.k {
            let policy = config.iteration_policy(&history);
            let ctx = RolloutContext {
                spec: config.rollout_spec(),
                policy: &policy,
                coreset: &coreset,
                fmap,
                action_count,
                key: iteration_key(config, loop_index, k),
            };
            match run_coreset_pass(&ctx, &mut sim, pool.as_ref())? {
                PassOutcome::Estimates(q) => {
                    coreset.set_estimates(&q)?;
                    let w = coreset.ridge_weights()?;
                    let norm = l2_norm(&w);
                    log::debug!("loop {loop_index} iteration {k}: |C| = {}, |w| = {norm:.6}", coreset.len());
                    records.push(IterationRecord {
                        loop_index,
                        iteration: k,
                        coreset_size: coreset.len(),
                        restart: false,
                        queries: sim.checkpoint_count(),
                        weight_norm: Some(norm),
                    });
                    history.push(w);
                }
                PassOutcome::Uncertain {
                    coreset_index,
                    rollout_index,
                    entry,
                } => {
                    restart = Some(Restart {
                        loop_index,
                        iteration: k,
                        coreset_index,
                        rollout_index,
                        entry,
                    });
                    break;
                }
            }
        }
        match restart {
            None => break history,
            Some(r) => {
                log::info!(
                    "loop {loop_index}: restart at iteration {}, adding ({}, {})",
                    r.iteration,
                    r.entry.state,
                    r.entry.action
                );
                coreset.add_entry(r.entry.clone())?;
                records.push(IterationRecord {
                    loop_index,
                    iteration: r.iteration,
                    coreset_size: coreset.len(),
                    restart: true,
                    queries: sim.checkpoint_count(),
                    weight_norm: None,
                });
                restarts.push(r);
                loop_index += 1;
            }
        }
    };

    let policy = match config.algorithm {
        Algorithm::Lspi => {
            let weights = history.last().cloned().expect("K >= 1");
            PlannedPolicy::Lspi {
                policy: PolicySnapshot::Greedy {
                    weights: weights.clone(),
                },
                weights,
            }
        }
        Algorithm::Politex => PlannedPolicy::Politex {
            policies: (0..config.k)
                .map(|k| config.iteration_policy(&history[..k]))
                .collect(),
        },
    };
    Ok(PlannerOutput {
        policy,
        diagnostics: Diagnostics {
            loops: loop_index + 1,
            initial_coreset_size,
            queries: sim.checkpoint_count(),
            coreset,
            records,
            restarts,
            weight_history: history,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ActionId;
    use crate::numerics::FeatureVector;
    use crate::simulator::Transition;

    struct Single;

    impl Environment for Single {
        fn action_count(&self) -> usize {
            1
        }
        fn transition(&self, s: StateId, _: ActionId, _: f64) -> Result<Transition> {
            Ok(Transition {
                reward: 1.0,
                next_state: s,
            })
        }
    }

    struct One;

    impl FeatureMap for One {
        fn dim(&self) -> usize {
            1
        }
        fn feature(&self, _: StateId, _: ActionId) -> Result<FeatureVector> {
            Ok(FeatureVector::basis(1, 0))
        }
    }

    pub(super) fn config(algorithm: Algorithm) -> PlannerConfig {
        PlannerConfig {
            algorithm,
            gamma: 0.5,
            lambda: 1e-3,
            tau: 1.0,
            alpha: 0.1,
            m: 1,
            n: 20,
            k: 2,
            master_seed: 3,
            parallelism: 1,
        }
    }

    #[test]
    fn single_state_closed_form() {
        let out = plan(&config(Algorithm::Lspi), &Single, &One, StateId(0)).unwrap();
        let q = (1.0 - 0.5f64.powi(21)) / 0.5;
        assert!((q - 1.999999).abs() < 1e-6);
        let d = &out.diagnostics;
        assert_eq!(d.loops, 1);
        assert_eq!(d.coreset.len(), 1);
        assert_eq!(d.coreset.entries()[0].q_estimate, Some(q));
        let PlannedPolicy::Lspi { weights, .. } = &out.policy else {
            panic!("lspi output expected");
        };
        assert!((weights[0] - q / 1.001).abs() < 1e-12);
        assert!((weights[0] - 1.998).abs() < 1e-4);
        assert_eq!(d.weight_history.len(), 2);
        assert_eq!(d.penultimate_weights(), Some(d.weight_history[0].as_slice()));
        assert_eq!(d.queries, 2 * 21);
    }

    #[test]
    fn politex_output_lists_k_policies() {
        let mut cfg = config(Algorithm::Politex);
        cfg.k = 3;
        let out = plan(&cfg, &Single, &One, StateId(0)).unwrap();
        let PlannedPolicy::Politex { policies } = &out.policy else {
            panic!("politex output expected");
        };
        assert_eq!(policies.len(), 3);
        assert_eq!(policies[0], PolicySnapshot::Uniform);
        let PolicySnapshot::Politex { weight_history, .. } = &policies[2] else {
            panic!("softmax policy expected");
        };
        assert_eq!(weight_history.len(), 2);
        assert_eq!(out.policy.components().len(), 3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = config(Algorithm::Politex);
        let cases: Vec<fn(&mut PlannerConfig)> = vec![
            |c| c.gamma = 1.0,
            |c| c.gamma = 0.0,
            |c| c.lambda = 0.0,
            |c| c.tau = -1.0,
            |c| c.alpha = 0.0,
            |c| c.m = 0,
            |c| c.k = 0,
            |c| c.parallelism = 0,
        ];
        for mutate in cases {
            let mut c = base.clone();
            mutate(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
        let mut lspi = config(Algorithm::Lspi);
        lspi.alpha = 0.0;
        assert!(lspi.validate().is_ok());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Lspi, Algorithm::Politex] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
    }
}
