//! Benchmark environments with known structure, all backed by an exact
//! tabular mirror so the oracle can score planner output.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{check_dim, invalid, Error, Result};
use crate::mdp::{ActionId, FeatureMap, PolicySnapshot, StateId};
use crate::numerics::{dot, FeatureVector};
use crate::oracle::{exact_policy_q, policy_table, PolicyTable, TabularMdp, KERNEL_TOLERANCE};
use crate::simulator::{Environment, RngStream, StreamKey, Transition};

/// Stream branch reserved for environment generation.
pub const ENV_BRANCH: u64 = 0x656e_7673;

/// Reward for advancing along the two-phase corridor.
pub const CORRIDOR_REWARD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Random kernel and rewards, `φ(s, a) = e_{sA + a}`.
    TabularOnehot,
    /// Linear MDP: `P = Σ_i φ_i ν_i`, `r = φᵀθ` with `φ` on the simplex.
    LowRankLinear,
    /// One-hot base duplicated into twin states that share features but
    /// whose rewards differ by `2ε`.
    Misspecified,
    /// Corridor whose goal state has a feature direction the initial state
    /// never shows.
    TwoPhaseExplore,
    /// Deterministic left/right walk with reward at the right end.
    Chain,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::TabularOnehot,
        Family::LowRankLinear,
        Family::Misspecified,
        Family::TwoPhaseExplore,
        Family::Chain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::TabularOnehot => "tabular_onehot",
            Family::LowRankLinear => "low_rank_linear",
            Family::Misspecified => "misspecified",
            Family::TwoPhaseExplore => "two_phase_explore",
            Family::Chain => "chain",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid("family", format!("unknown family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: Family,
    pub states: usize,
    pub actions: usize,
    /// Feature dimension; only read by `low_rank_linear`.
    pub dim: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            states: 5,
            actions: 2,
            dim: 4,
            epsilon: 0.0,
            seed: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.family {
            Family::TabularOnehot | Family::Misspecified => self.states * self.actions,
            Family::LowRankLinear => self.dim,
            Family::TwoPhaseExplore => 3,
            Family::Chain => 2 * self.states,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 {
            return Err(invalid("states", "need at least one state and one action"));
        }
        match self.family {
            Family::Chain | Family::TwoPhaseExplore if self.actions != 2 => {
                return Err(invalid("actions", format!("{} has exactly two actions", self.family)));
            }
            Family::Chain if self.states < 2 => return Err(invalid("states", "chain needs at least 2 states")),
            Family::TwoPhaseExplore if self.states < 3 => {
                return Err(invalid("states", "two_phase_explore needs at least 3 states"))
            }
            Family::LowRankLinear if self.dim == 0 => return Err(invalid("dim", "must be at least 1")),
            Family::Misspecified if !(self.epsilon >= 0.0 && self.epsilon < 0.5) => {
                return Err(invalid("epsilon", format!("must lie in [0, 0.5), got {}", self.epsilon)))
            }
            _ => {}
        }
        if self.family != Family::Misspecified && self.epsilon != 0.0 {
            return Err(invalid("epsilon", format!("{} is realizable; epsilon must be 0", self.family)));
        }
        Ok(())
    }

    /// Reads `family`, `states`, `actions`, `dim`, `epsilon` and `env_seed`.
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        let family: Family = kv.require("family")?;
        let defaults = EnvSpec::new(family);
        let spec = EnvSpec {
            family,
            states: kv.take_or("states", defaults.states)?,
            actions: kv.take_or("actions", defaults.actions)?,
            dim: kv.take_or("dim", defaults.dim)?,
            epsilon: kv.take_or("epsilon", defaults.epsilon)?,
            seed: kv.take_or("env_seed", defaults.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let spec = Self::from_key_values(&mut kv)?;
        kv.finish()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        format!(
            "family = {}\nstates = {}\nactions = {}\ndim = {}\nepsilon = {}\nenv_seed = {}\n",
            self.family, self.states, self.actions, self.dim, self.epsilon, self.seed
        )
    }
}

/// Feature map stored as an explicit `S × A` table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableFeatures {
    state_count: usize,
    action_count: usize,
    dim: usize,
    table: Vec<FeatureVector>,
}

impl TableFeatures {
    /// `table` lists `φ(s, a)` in `(s, a)` order.
    pub fn new(state_count: usize, action_count: usize, dim: usize, table: Vec<FeatureVector>) -> Result<Self> {
        check_dim(state_count * action_count, table.len())?;
        for phi in &table {
            check_dim(dim, phi.dim())?;
        }
        Ok(Self {
            state_count,
            action_count,
            dim,
            table,
        })
    }

    /// `φ(s, a) = e_{sA + a}`.
    pub fn one_hot(state_count: usize, action_count: usize) -> Self {
        let dim = state_count * action_count;
        let table = (0..dim).map(|i| FeatureVector::basis(dim, i)).collect();
        Self {
            state_count,
            action_count,
            dim,
            table,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> &FeatureVector {
        &self.table[s * self.action_count + a]
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// All features in `(s, a)` order.
    pub fn all(&self) -> &[FeatureVector] {
        &self.table
    }
}

impl FeatureMap for TableFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feature(&self, state: StateId, action: ActionId) -> Result<FeatureVector> {
        if state.0 >= self.state_count as u64 {
            return Err(Error::UnknownState { state });
        }
        if action.0 >= self.action_count {
            return Err(invalid("action", format!("{action} out of range")));
        }
        Ok(self.get(state.0 as usize, action.0).clone())
    }
}

/// A tabular environment together with its features and start state.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltEnv {
    pub mdp: TabularMdp,
    pub features: TableFeatures,
    pub rho: StateId,
    /// Largest Chebyshev residual over sampled policies, for the
    /// misspecified family.
    pub certified_epsilon: Option<f64>,
}

struct Draws(RngStream);

impl Draws {
    fn new(seed: u64) -> Self {
        Draws(RngStream::new(StreamKey::new(seed).derive(ENV_BRANCH), 0))
    }

    fn uniform(&mut self) -> f64 {
        self.0.next_uniform()
    }

    /// Uniform draw from the probability simplex in `R^len`.
    fn simplex(&mut self, len: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| -(1.0 - self.uniform()).ln()).collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return vec![1.0 / len as f64; len];
        }
        raw.into_iter().map(|x| x / total).collect()
    }
}

/// Builds the environment described by `spec` with discount `gamma`.
pub fn make_env(spec: &EnvSpec, gamma: f64) -> Result<BuiltEnv> {
    spec.validate()?;
    let mut draws = Draws::new(spec.seed);
    match spec.family {
        Family::TabularOnehot => {
            let (rewards, kernel) = random_tabular(&mut draws, spec.states, spec.actions, 0.0);
            Ok(BuiltEnv {
                mdp: TabularMdp::new(spec.states, spec.actions, rewards, kernel, gamma, 0)?,
                features: TableFeatures::one_hot(spec.states, spec.actions),
                rho: StateId(0),
                certified_epsilon: None,
            })
        }
        Family::Chain => chain(spec.states, gamma),
        Family::LowRankLinear => low_rank_linear(&mut draws, spec, gamma),
        Family::Misspecified => misspecified(&mut draws, spec, gamma),
        Family::TwoPhaseExplore => two_phase_explore(spec.states, gamma),
    }
}

/// Rewards in `[margin, 1 − margin]` and dense random kernel rows.
fn random_tabular(draws: &mut Draws, s_count: usize, a_count: usize, margin: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rewards = Vec::with_capacity(s_count * a_count);
    let mut kernel = Vec::with_capacity(s_count * a_count * s_count);
    for _ in 0..s_count * a_count {
        rewards.push(margin + (1.0 - 2.0 * margin) * draws.uniform());
        kernel.extend(draws.simplex(s_count));
    }
    (rewards, kernel)
}

fn chain(s_count: usize, gamma: f64) -> Result<BuiltEnv> {
    let mut rewards = vec![0.0; s_count * 2];
    let mut kernel = vec![0.0; s_count * 2 * s_count];
    for s in 0..s_count {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(s_count - 1);
        kernel[(s * 2) * s_count + left] = 1.0;
        kernel[(s * 2 + 1) * s_count + right] = 1.0;
    }
    rewards[(s_count - 1) * 2 + 1] = 1.0;
    Ok(BuiltEnv {
        mdp: TabularMdp::new(s_count, 2, rewards, kernel, gamma, 0)?,
        features: TableFeatures::one_hot(s_count, 2),
        rho: StateId(0),
        certified_epsilon: None,
    })
}

fn low_rank_linear(draws: &mut Draws, spec: &EnvSpec, gamma: f64) -> Result<BuiltEnv> {
    let (s_count, a_count, d) = (spec.states, spec.actions, spec.dim);
    let phis: Vec<Vec<f64>> = (0..s_count * a_count).map(|_| draws.simplex(d)).collect();
    let nus: Vec<Vec<f64>> = (0..d).map(|_| draws.simplex(s_count)).collect();
    let theta: Vec<f64> = (0..d).map(|_| draws.uniform()).collect();
    let mut rewards = Vec::with_capacity(phis.len());
    let mut kernel = Vec::with_capacity(phis.len() * s_count);
    for phi in &phis {
        rewards.push(dot(phi, &theta).clamp(0.0, 1.0));
        let mut row: Vec<f64> = (0..s_count)
            .map(|j| phi.iter().zip(&nus).map(|(p, nu)| p * nu[j]).sum())
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        kernel.extend(row);
    }
    let table = phis
        .into_iter()
        .map(FeatureVector::new)
        .collect::<Result<Vec<_>>>()?;
    Ok(BuiltEnv {
        mdp: TabularMdp::new(s_count, a_count, rewards, kernel, gamma, 0)?,
        features: TableFeatures::new(s_count, a_count, d, table)?,
        rho: StateId(0),
        certified_epsilon: None,
    })
}

/// Number of policies sampled when certifying misspecification.
pub const CERTIFICATION_POLICIES: usize = 20;

fn misspecified(draws: &mut Draws, spec: &EnvSpec, gamma: f64) -> Result<BuiltEnv> {
    let (base, a_count, eps) = (spec.states, spec.actions, spec.epsilon);
    let s_count = 2 * base;
    let (base_rewards, base_kernel) = random_tabular(draws, base, a_count, eps);
    let signs: Vec<f64> = (0..base * a_count)
        .map(|_| if draws.uniform() < 0.5 { -1.0 } else { 1.0 })
        .collect();
    let mut rewards = vec![0.0; s_count * a_count];
    let mut kernel = Vec::with_capacity(s_count * a_count * s_count);
    for twin in 0..2 {
        let sign = if twin == 0 { 1.0 } else { -1.0 };
        for s in 0..base {
            for a in 0..a_count {
                let i = s * a_count + a;
                rewards[(twin * base + s) * a_count + a] = base_rewards[i] + sign * signs[i] * eps;
                let row = &base_kernel[i * base..(i + 1) * base];
                // Mass splits evenly between each successor and its twin.
                kernel.extend(row.iter().map(|p| p / 2.0));
                kernel.extend(row.iter().map(|p| p / 2.0));
            }
        }
    }
    let dim = base * a_count;
    let table = (0..s_count)
        .flat_map(|s| (0..a_count).map(move |a| FeatureVector::basis(dim, (s % base) * a_count + a)))
        .collect();
    let mut env = BuiltEnv {
        mdp: TabularMdp::new(s_count, a_count, rewards, kernel, gamma, 0)?,
        features: TableFeatures::new(s_count, a_count, dim, table)?,
        rho: StateId(0),
        certified_epsilon: None,
    };
    let policies = sample_policies(dim, CERTIFICATION_POLICIES, spec.seed);
    let tables = policies
        .iter()
        .map(|p| policy_table(&env.mdp, p, &env.features))
        .collect::<Result<Vec<_>>>()?;
    env.certified_epsilon = Some(certify_misspecification(&env.mdp, &env.features, &tables)?);
    Ok(env)
}

fn two_phase_explore(s_count: usize, gamma: f64) -> Result<BuiltEnv> {
    let goal = s_count - 1;
    let mut rewards = vec![0.0; s_count * 2];
    let mut kernel = vec![0.0; s_count * 2 * s_count];
    let mut table = Vec::with_capacity(s_count * 2);
    for s in 0..s_count {
        if s == goal {
            for a in 0..2 {
                rewards[s * 2 + a] = 1.0;
                kernel[(s * 2 + a) * s_count + goal] = 1.0;
                table.push(FeatureVector::basis(3, 2));
            }
        } else {
            rewards[s * 2] = CORRIDOR_REWARD;
            kernel[(s * 2) * s_count + s + 1] = 1.0;
            kernel[(s * 2 + 1) * s_count] = 1.0;
            table.push(FeatureVector::basis(3, 0));
            table.push(FeatureVector::basis(3, 1));
        }
    }
    Ok(BuiltEnv {
        mdp: TabularMdp::new(s_count, 2, rewards, kernel, gamma, 0)?,
        features: TableFeatures::new(s_count, 2, 3, table)?,
        rho: StateId(0),
        certified_epsilon: None,
    })
}

/// Feature-based policies: greedy in random weights and softmax over random
/// weight histories.
pub fn sample_policies(dim: usize, count: usize, seed: u64) -> Vec<PolicySnapshot> {
    let mut draws = Draws(RngStream::new(StreamKey::new(seed).derive(ENV_BRANCH), 1));
    (0..count)
        .map(|i| {
            let mut weights = || (0..dim).map(|_| 10.0 * draws.uniform()).collect::<Vec<f64>>();
            if i % 2 == 0 {
                PolicySnapshot::Greedy { weights: weights() }
            } else {
                PolicySnapshot::Politex {
                    weight_history: vec![weights(), weights()],
                    alpha: 0.5,
                    gamma: 0.9,
                }
            }
        })
        .collect()
}

/// Minimax linear fit `min_w max_i |y_i − wᵀφ_i|` by Lawson's reweighted
/// least squares. Returns the best weights seen and their maximum residual,
/// which bounds the true minimax value from above.
pub fn chebyshev_fit(features: &[FeatureVector], targets: &[f64]) -> Result<(Vec<f64>, f64)> {
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: targets.len(),
        });
    }
    let Some(first) = features.first() else {
        return Err(invalid("features", "nothing to fit"));
    };
    let d = first.dim();
    let rows = features.len();
    let mut u = vec![1.0 / rows as f64; rows];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..500 {
        let mut design = DMatrix::<f64>::zeros(rows, d);
        let mut rhs = DVector::<f64>::zeros(rows);
        for (i, (phi, y)) in features.iter().zip(targets).enumerate() {
            check_dim(d, phi.dim())?;
            let scale = u[i].sqrt();
            for (j, x) in phi.as_slice().iter().enumerate() {
                design[(i, j)] = scale * x;
            }
            rhs[i] = scale * y;
        }
        let w = design
            .svd(true, true)
            .solve(&rhs, 1e-13)
            .map_err(|e| invalid("features", e.to_string()))?;
        let w: Vec<f64> = w.iter().copied().collect();
        let residuals: Vec<f64> = features
            .iter()
            .zip(targets)
            .map(|(phi, y)| (y - dot(phi.as_slice(), &w)).abs())
            .collect();
        let max = residuals.iter().copied().fold(0.0, f64::max);
        let improved = best.as_ref().is_none_or(|(_, b)| max < *b);
        if improved {
            best = Some((w, max));
        }
        let total: f64 = u.iter().zip(&residuals).map(|(a, r)| a * r).sum();
        if total <= f64::EPSILON * max.max(1.0) {
            break;
        }
        for (a, r) in u.iter_mut().zip(&residuals) {
            *a *= r / total;
        }
    }
    Ok(best.expect("at least one iteration"))
}

/// Largest minimax residual of `Q_π` onto the features over `tables`.
pub fn certify_misspecification(
    mdp: &TabularMdp,
    features: &TableFeatures,
    tables: &[PolicyTable],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for table in tables {
        let q = exact_policy_q(mdp, table)?;
        let targets: Vec<f64> = q.into_iter().flatten().collect();
        let (_, residual) = chebyshev_fit(features.all(), &targets)?;
        worst = worst.max(residual);
    }
    Ok(worst)
}

fn check_distribution(rho: &[f64]) -> Result<()> {
    if rho.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(invalid("rho", "entries must be non-negative"));
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > KERNEL_TOLERANCE {
        return Err(invalid("rho", format!("sums to {total}, not 1")));
    }
    Ok(())
}

/// Adds an auxiliary start state `init` whose actions all pay 0 and move to
/// a state drawn from `rho`. Features gain one coordinate: base pairs get
/// `[φ; 0]` and `init` gets `e_{d+1}`.
///
/// `init` must not be a state of the base environment.
#[derive(Debug, Clone)]
pub struct AugmentedEnv<E, F> {
    env: E,
    fmap: F,
    init: StateId,
    /// `rho` as cumulative mass over its support.
    cdf: Vec<(StateId, f64)>,
}

impl<E: Environment, F: FeatureMap> AugmentedEnv<E, F> {
    pub fn new(env: E, fmap: F, rho: &[(StateId, f64)], init: StateId) -> Result<Self> {
        let probs: Vec<f64> = rho.iter().map(|(_, p)| *p).collect();
        check_distribution(&probs)?;
        if rho.iter().any(|(s, _)| *s == init) {
            return Err(invalid("rho", "the auxiliary state cannot be in the support"));
        }
        let mut cumulative = 0.0;
        let cdf = rho
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(s, p)| {
                cumulative += p;
                (*s, cumulative)
            })
            .collect();
        Ok(Self { env, fmap, init, cdf })
    }

    pub fn initial_state(&self) -> StateId {
        self.init
    }
}

impl<E: Environment, F: FeatureMap> Environment for AugmentedEnv<E, F> {
    fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn transition(&self, state: StateId, action: ActionId, u: f64) -> Result<Transition> {
        if state != self.init {
            return self.env.transition(state, action, u);
        }
        let next = self
            .cdf
            .iter()
            .find(|(_, c)| u < *c)
            .or(self.cdf.last())
            .map(|(s, _)| *s)
            .expect("rho has positive mass");
        Ok(Transition {
            reward: 0.0,
            next_state: next,
        })
    }
}

impl<E: Environment, F: FeatureMap> FeatureMap for AugmentedEnv<E, F> {
    fn dim(&self) -> usize {
        self.fmap.dim() + 1
    }

    fn feature(&self, state: StateId, action: ActionId) -> Result<FeatureVector> {
        if state == self.init {
            return Ok(FeatureVector::basis(self.dim(), self.fmap.dim()));
        }
        let mut v = self.fmap.feature(state, action)?.into_inner();
        v.push(0.0);
        FeatureVector::new(v)
    }
}

/// Tabular form of [`AugmentedEnv`]: the auxiliary state is appended as
/// state `S` and becomes the start state.
pub fn augment_random_initial(base: &BuiltEnv, rho: &[f64]) -> Result<BuiltEnv> {
    let s_count = base.mdp.state_count();
    let a_count = base.mdp.action_count();
    check_dim(s_count, rho.len())?;
    check_distribution(rho)?;
    let aug = s_count + 1;
    let d = base.features.dim();
    let mut rewards = Vec::with_capacity(aug * a_count);
    let mut kernel = Vec::with_capacity(aug * a_count * aug);
    let mut table = Vec::with_capacity(aug * a_count);
    for s in 0..s_count {
        for a in 0..a_count {
            rewards.push(base.mdp.reward(s, a));
            kernel.extend_from_slice(base.mdp.row(s, a));
            kernel.push(0.0);
            let mut v = base.features.get(s, a).as_slice().to_vec();
            v.push(0.0);
            table.push(FeatureVector::new(v)?);
        }
    }
    for _ in 0..a_count {
        rewards.push(0.0);
        kernel.extend_from_slice(rho);
        kernel.push(0.0);
        table.push(FeatureVector::basis(d + 1, d));
    }
    Ok(BuiltEnv {
        mdp: TabularMdp::new(aug, a_count, rewards, kernel, base.mdp.gamma(), s_count)?,
        features: TableFeatures::new(aug, a_count, d + 1, table)?,
        rho: StateId(s_count as u64),
        certified_epsilon: base.certified_epsilon,
    })
}

/// Plain-text form of a tabular MDP: a header, then one reward line per
/// state and one kernel line per state-action pair.
pub fn write_mdp(mdp: &TabularMdp) -> String {
    let (s_count, a_count) = (mdp.state_count(), mdp.action_count());
    let mut out = format!(
        "states {s_count}\nactions {a_count}\ngamma {}\ninitial {}\nrewards\n",
        mdp.gamma(),
        mdp.initial_state()
    );
    let join = |xs: &[f64]| xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    for s in 0..s_count {
        let row: Vec<f64> = (0..a_count).map(|a| mdp.reward(s, a)).collect();
        out.push_str(&join(&row));
        out.push('\n');
    }
    out.push_str("kernel\n");
    for s in 0..s_count {
        for a in 0..a_count {
            out.push_str(&join(mdp.row(s, a)));
            out.push('\n');
        }
    }
    out
}

/// Inverse of [`write_mdp`]; blank lines and `#` comments are ignored.
pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut last_line = 0;
    let mut next = |what: &str| -> Result<(usize, &str)> {
        let found = lines.next();
        if let Some((line, _)) = found {
            last_line = line;
        }
        found.ok_or_else(|| Error::Parse {
            line: last_line + 1,
            message: format!("unexpected end of input, expected {what}"),
        })
    };
    fn header<T: FromStr>(entry: (usize, &str), name: &str) -> Result<T> {
        let (line, content) = entry;
        let value = content
            .strip_prefix(name)
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `{name} <value>`"),
            })?;
        value.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid {name} `{value}`"),
        })
    }
    fn numbers(entry: (usize, &str), expected: usize) -> Result<Vec<f64>> {
        let (line, content) = entry;
        let values = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} values, found {}", values.len()),
            });
        }
        Ok(values)
    }
    fn keyword(entry: (usize, &str), word: &str) -> Result<()> {
        if entry.1 == word {
            Ok(())
        } else {
            Err(Error::Parse {
                line: entry.0,
                message: format!("expected `{word}`"),
            })
        }
    }

    let s_count: usize = header(next("states")?, "states")?;
    let a_count: usize = header(next("actions")?, "actions")?;
    let gamma: f64 = header(next("gamma")?, "gamma")?;
    let initial: usize = header(next("initial")?, "initial")?;
    keyword(next("rewards")?, "rewards")?;
    let mut rewards = Vec::with_capacity(s_count * a_count);
    for _ in 0..s_count {
        rewards.extend(numbers(next("a reward row")?, a_count)?);
    }
    keyword(next("kernel")?, "kernel")?;
    let mut kernel = Vec::with_capacity(s_count * a_count * s_count);
    for _ in 0..s_count * a_count {
        kernel.extend(numbers(next("a kernel row")?, s_count)?);
    }
    if let Ok((line, _)) = next("") {
        return Err(Error::Parse {
            line,
            message: "trailing content after the kernel".into(),
        });
    }
    TabularMdp::new(s_count, a_count, rewards, kernel, gamma, initial)
}
