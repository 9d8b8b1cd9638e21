//! Exact dynamic-programming answers on small tabular MDPs, used as ground
//! truth for the planners.

mod virtual_pi;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::mdp::{argmax, ActionId, FeatureMap, PolicySnapshot, StateId};
use crate::planner::PlannedPolicy;
use crate::simulator::{Environment, Transition};

pub use virtual_pi::{virtual_pi_harness, HarnessReport, LoopComparison};

/// Row-stochastic tolerance for kernels.
pub const KERNEL_TOLERANCE: f64 = 1e-12;

/// `π(a|s)` indexed as `table[s][a]`.
pub type PolicyTable = Vec<Vec<f64>>;

/// `Q(s, a)` indexed as `q[s][a]`.
pub type QTable = Vec<Vec<f64>>;

/// Finite MDP with dense rewards `r(s, a)` and kernel `P(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    state_count: usize,
    action_count: usize,
    rewards: Vec<f64>,
    kernel: Vec<f64>,
    gamma: f64,
    initial_state: usize,
    /// Nonzero successors of each pair with their cumulative mass.
    cdf: Vec<Vec<(usize, f64)>>,
}

impl TabularMdp {
    /// `rewards` is `S·A` long in `(s, a)` order; `kernel` is `S·A·S` long in
    /// `(s, a, s')` order.
    pub fn new(
        state_count: usize,
        action_count: usize,
        rewards: Vec<f64>,
        kernel: Vec<f64>,
        gamma: f64,
        initial_state: usize,
    ) -> Result<Self> {
        if state_count == 0 || action_count == 0 {
            return Err(invalid("state_count", "need at least one state and one action"));
        }
        let pairs = state_count * action_count;
        check_dim(pairs, rewards.len())?;
        check_dim(pairs * state_count, kernel.len())?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        if initial_state >= state_count {
            return Err(Error::UnknownState {
                state: StateId(initial_state as u64),
            });
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(invalid("rewards", format!("reward {r} outside [0, 1]")));
        }
        let mut cdf = Vec::with_capacity(pairs);
        for (i, row) in kernel.chunks(state_count).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(invalid("kernel", format!("row {i} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > KERNEL_TOLERANCE {
                return Err(invalid("kernel", format!("row {i} sums to {total}")));
            }
            let mut cumulative = 0.0;
            let support = row
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(j, p)| {
                    cumulative += p;
                    (j, cumulative)
                })
                .collect();
            cdf.push(support);
        }
        Ok(Self {
            state_count,
            action_count,
            rewards,
            kernel,
            gamma,
            initial_state,
            cdf,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> StateId {
        StateId(self.initial_state as u64)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.action_count + a]
    }

    /// `P(· | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.action_count + a) * self.state_count;
        &self.kernel[start..start + self.state_count]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn index(&self, state: StateId) -> Result<usize> {
        let s = state.0 as usize;
        if state.0 >= self.state_count as u64 {
            return Err(Error::UnknownState { state });
        }
        Ok(s)
    }

    fn check_table(&self, table: &[Vec<f64>]) -> Result<()> {
        check_dim(self.state_count, table.len())?;
        for row in table {
            check_dim(self.action_count, row.len())?;
        }
        Ok(())
    }

    /// `r(s, a) + γ Σ_{s'} P(s'|s, a) v(s')`.
    fn backup(&self, v: &[f64]) -> QTable {
        (0..self.state_count)
            .map(|s| {
                (0..self.action_count)
                    .map(|a| {
                        let next: f64 = self.row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                        self.reward(s, a) + self.gamma * next
                    })
                    .collect()
            })
            .collect()
    }
}

impl Environment for TabularMdp {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn transition(&self, state: StateId, action: ActionId, u: f64) -> Result<Transition> {
        let s = self.index(state)?;
        if action.0 >= self.action_count {
            return Err(invalid("action", format!("{action} out of range")));
        }
        let support = &self.cdf[s * self.action_count + action.0];
        let next = support
            .iter()
            .find(|(_, c)| u < *c)
            .or(support.last())
            .map(|(j, _)| *j)
            .expect("kernel rows have positive mass");
        Ok(Transition {
            reward: self.reward(s, action.0),
            next_state: StateId(next as u64),
        })
    }
}

/// Tabulates `π(·|s)` for every state of `mdp`.
pub fn policy_table(mdp: &TabularMdp, policy: &PolicySnapshot, fmap: &dyn FeatureMap) -> Result<PolicyTable> {
    (0..mdp.state_count)
        .map(|s| policy.action_probabilities(StateId(s as u64), fmap, mdp.action_count))
        .collect()
}

/// Deterministic table choosing `actions[s]` in state `s`.
pub fn deterministic_table(actions: &[usize], action_count: usize) -> PolicyTable {
    actions
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; action_count];
            row[a] = 1.0;
            row
        })
        .collect()
}

/// `V(s) = Σ_a π(a|s) Q(s, a)`.
pub fn state_values(table: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<f64> {
    table
        .iter()
        .zip(q)
        .map(|(p, qs)| p.iter().zip(qs).map(|(x, y)| x * y).sum())
        .collect()
}

/// `Q_π` by solving `(I − γ P_π) V = r_π` directly, then one backup.
pub fn exact_policy_q(mdp: &TabularMdp, table: &[Vec<f64>]) -> Result<QTable> {
    mdp.check_table(table)?;
    let s_count = mdp.state_count;
    let mut system = DMatrix::<f64>::identity(s_count, s_count);
    let mut rhs = DVector::<f64>::zeros(s_count);
    for s in 0..s_count {
        for (a, &p) in table[s].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            rhs[s] += p * mdp.reward(s, a);
            for (j, &t) in mdp.row(s, a).iter().enumerate() {
                system[(s, j)] -= mdp.gamma * p * t;
            }
        }
    }
    let v = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| invalid("policy", "policy evaluation system is singular"))?;
    Ok(mdp.backup(v.as_slice()))
}

/// Expected return over the first `n + 1` steps: `n + 1` applications of the
/// policy Bellman operator starting from zero.
pub fn truncated_policy_q(mdp: &TabularMdp, table: &[Vec<f64>], n: usize) -> Result<QTable> {
    mdp.check_table(table)?;
    let mut q = mdp.backup(&vec![0.0; mdp.state_count]);
    for _ in 0..n {
        q = mdp.backup(&state_values(table, &q));
    }
    Ok(q)
}

/// `max |Q − T_π Q|`.
pub fn bellman_residual(mdp: &TabularMdp, table: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    mdp.check_table(table)?;
    let next = mdp.backup(&state_values(table, q));
    Ok(max_abs_diff(q, &next))
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalValues {
    pub values: Vec<f64>,
    pub q: QTable,
    /// Greedy optimal action per state, smallest index among ties.
    pub policy: Vec<usize>,
    pub value_iterations: usize,
}

const VALUE_ITERATION_CAP: usize = 1_000_000;

/// `V*` by value iteration, stopped once `‖V_{t+1} − V_t‖ < 1e-12 (1−γ)/(2γ)`,
/// then polished by exact policy iteration.
pub fn optimal_values(mdp: &TabularMdp) -> Result<OptimalValues> {
    let gamma = mdp.gamma;
    let tol = 1e-12 * (1.0 - gamma) / (2.0 * gamma);
    let mut v = vec![0.0; mdp.state_count];
    let mut iterations = 0;
    let mut q = mdp.backup(&v);
    while iterations < VALUE_ITERATION_CAP {
        iterations += 1;
        let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        let delta = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        q = mdp.backup(&v);
        if delta < tol {
            break;
        }
    }

    // Policy iteration from the greedy policy; switching only on strict
    // improvement keeps ties from cycling.
    let mut policy: Vec<usize> = q.iter().map(|row| argmax(row)).collect();
    loop {
        let table = deterministic_table(&policy, mdp.action_count);
        q = exact_policy_q(mdp, &table)?;
        let mut changed = false;
        for (s, row) in q.iter().enumerate() {
            let best = argmax(row);
            let current = row[policy[s]];
            if row[best] > current + 1e-12 * (1.0 + current.abs()) {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let table = deterministic_table(&policy, mdp.action_count);
    let values = state_values(&table, &q);
    let policy = q
        .iter()
        .zip(&values)
        .map(|(row, v)| {
            row.iter()
                .position(|x| *x >= v - 1e-12 * (1.0 + v.abs()))
                .unwrap_or(0)
        })
        .collect();
    Ok(OptimalValues {
        values,
        q,
        policy,
        value_iterations: iterations,
    })
}

/// `V_π` for a policy snapshot.
pub fn value_of(mdp: &TabularMdp, policy: &PolicySnapshot, fmap: &dyn FeatureMap) -> Result<Vec<f64>> {
    let table = policy_table(mdp, policy, fmap)?;
    let q = exact_policy_q(mdp, &table)?;
    Ok(state_values(&table, &q))
}

/// Value of a planner output; for a mixture, the average of its components'
/// values.
pub fn planned_value(mdp: &TabularMdp, planned: &PlannedPolicy, fmap: &dyn FeatureMap) -> Result<Vec<f64>> {
    let mut total = vec![0.0; mdp.state_count];
    for (weight, policy) in planned.components() {
        for (t, v) in total.iter_mut().zip(value_of(mdp, policy, fmap)?) {
            *t += weight * v;
        }
    }
    Ok(total)
}
