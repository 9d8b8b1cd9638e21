//! States, actions, feature maps and the three policy families the planner
//! produces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::numerics::{dot, FeatureVector};
use crate::simulator::RngStream;

/// Opaque, environment-defined state identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u64);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Action index in `[0, action_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Deterministic map `(s, a) ↦ φ(s, a)` into the unit ball of `R^d`.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;

    fn feature(&self, state: StateId, action: ActionId) -> Result<FeatureVector>;
}

impl<F: FeatureMap + ?Sized> FeatureMap for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn feature(&self, state: StateId, action: ActionId) -> Result<FeatureVector> {
        (**self).feature(state, action)
    }
}

impl<F: FeatureMap + ?Sized> FeatureMap for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn feature(&self, state: StateId, action: ActionId) -> Result<FeatureVector> {
        (**self).feature(state, action)
    }
}

/// Projection of `wᵀφ` onto `[0, 1/(1-γ)]`.
pub fn clipped_q(weights: &[f64], phi: &FeatureVector, gamma: f64) -> Result<f64> {
    let raw = phi.dot(weights)?;
    Ok(clip_q(raw, gamma))
}

pub(crate) fn clip_q(raw: f64, gamma: f64) -> f64 {
    raw.max(0.0).min(1.0 / (1.0 - gamma))
}

/// A stationary policy as the planner hands it to the rollout machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySnapshot {
    Uniform,
    /// Greedy in `wᵀφ(s, ·)`, ties going to the smallest action index.
    Greedy { weights: Vec<f64> },
    /// Softmax of `α Σ_j clip(w_jᵀφ(s, ·))` over the stored weight history.
    Politex {
        weight_history: Vec<Vec<f64>>,
        alpha: f64,
        gamma: f64,
    },
}

impl PolicySnapshot {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, PolicySnapshot::Greedy { .. })
    }

    pub fn action_probabilities<F: FeatureMap + ?Sized>(
        &self,
        state: StateId,
        fmap: &F,
        action_count: usize,
    ) -> Result<Vec<f64>> {
        if action_count == 0 {
            return Err(invalid("action_count", "must be at least 1"));
        }
        match self {
            PolicySnapshot::Uniform => Ok(vec![1.0 / action_count as f64; action_count]),
            PolicySnapshot::Greedy { weights } => {
                let mut scores = Vec::with_capacity(action_count);
                for a in 0..action_count {
                    scores.push(fmap.feature(state, ActionId(a))?.dot(weights)?);
                }
                let best = argmax(&scores);
                let mut probs = vec![0.0; action_count];
                probs[best] = 1.0;
                Ok(probs)
            }
            PolicySnapshot::Politex {
                weight_history,
                alpha,
                gamma,
            } => {
                if weight_history.is_empty() {
                    return Ok(vec![1.0 / action_count as f64; action_count]);
                }
                let mut logits = Vec::with_capacity(action_count);
                for a in 0..action_count {
                    let phi = fmap.feature(state, ActionId(a))?;
                    let mut total = 0.0;
                    for w in weight_history {
                        check_dim(phi.dim(), w.len())?;
                        total += clip_q(dot(phi.as_slice(), w), *gamma);
                    }
                    logits.push(alpha * total);
                }
                Ok(softmax(&logits))
            }
        }
    }

    /// Draws an action by inverse CDF over action indices. Consumes exactly
    /// one uniform from `rng`, even for deterministic policies, so stream
    /// positions stay aligned across policy families.
    pub fn sample_action<F: FeatureMap + ?Sized>(
        &self,
        state: StateId,
        fmap: &F,
        action_count: usize,
        rng: &mut RngStream,
    ) -> Result<ActionId> {
        let u = rng.next_uniform();
        let probs = self.action_probabilities(state, fmap, action_count)?;
        Ok(sample_index(&probs, u))
    }
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds `u`.
pub fn sample_index(probs: &[f64], u: f64) -> ActionId {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return ActionId(i);
        }
    }
    ActionId(last_positive)
}
