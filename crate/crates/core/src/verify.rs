//! Property suites behind `confident-mc verify`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::coreset::CoreSet;
use crate::envs::{augment_random_initial, make_env, EnvSpec, Family};
use crate::error::{invalid, Error, Result};
use crate::experiment::politex_alpha;
use crate::mdp::{ActionId, FeatureMap, PolicySnapshot, StateId};
use crate::oracle::{exact_policy_q, max_abs_diff, state_values, truncated_policy_q, virtual_pi_harness, PolicyTable};
use crate::planner::{plan, Algorithm, PlannerConfig};
use crate::rollout::{confident_rollout, RolloutContext, RolloutResult, RolloutSpec};
use crate::simulator::{RngStream, Simulator, SimulatorHandle, StreamKey};

/// Stream branch for drawing random instances.
pub const VERIFY_BRANCH: u64 = 0x7665_7269;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Coreset,
    Determinant,
    Coupling,
    Hoeffding,
    Augment,
    All,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Coreset,
        Suite::Determinant,
        Suite::Coupling,
        Suite::Hoeffding,
        Suite::Augment,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Coreset => "coreset",
            Suite::Determinant => "determinant",
            Suite::Coupling => "coupling",
            Suite::Hoeffding => "hoeffding",
            Suite::Augment => "augment",
            Suite::All => "all",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Coreset | Suite::Determinant => 100,
            Suite::Coupling | Suite::Augment => 20,
            Suite::Hoeffding => 10_000,
            Suite::All => 0,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| invalid("suite", format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: String,
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn first_failure(&self) -> Option<&PropertyResult> {
        self.results.iter().find(|r| !r.passed)
    }

    fn push(&mut self, suite: Suite, property: &str, passed: bool, detail: String) {
        self.results.push(PropertyResult {
            suite: suite.name().into(),
            property: property.into(),
            passed,
            detail,
        });
    }
}

struct Draws(RngStream);

impl Draws {
    fn new(seed: u64, channel: u64) -> Self {
        Draws(RngStream::new(StreamKey::new(seed).derive(VERIFY_BRANCH), channel))
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.0.next_uniform() * n as f64) as usize).min(n - 1)
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    fn pick<T: Copy>(&mut self, options: &[T]) -> T {
        options[self.below(options.len())]
    }
}

/// A small random planning problem with `d ≤ 16` in which every core-set
/// insertion, including the first, has uncertainty above `τ`.
pub fn random_instance(seed: u64) -> (EnvSpec, PlannerConfig) {
    let mut r = Draws::new(seed, 0);
    let family = Family::ALL[(seed % Family::ALL.len() as u64) as usize];
    let mut env = EnvSpec::new(family);
    env.seed = seed;
    match family {
        Family::TabularOnehot => {
            env.states = r.range(2, 4);
            env.actions = r.range(2, 3);
        }
        Family::LowRankLinear => {
            env.states = r.range(3, 8);
            env.actions = r.range(2, 3);
            env.dim = r.range(2, 8);
        }
        Family::Misspecified => {
            env.states = r.range(2, 3);
            env.epsilon = r.pick(&[0.01, 0.05]);
        }
        Family::TwoPhaseExplore => env.states = r.range(3, 6),
        Family::Chain => env.states = r.range(2, 8),
    }
    let algorithm = r.pick(&[Algorithm::Lspi, Algorithm::Politex]);
    let gamma = r.pick(&[0.5, 0.8, 0.9]);
    let k = r.range(1, 3);
    let planner = PlannerConfig {
        algorithm,
        gamma,
        lambda: r.pick(&[0.01, 0.03]),
        tau: r.pick(&[1.0, 2.0]),
        alpha: politex_alpha(gamma, env.actions, k).max(0.1),
        m: r.range(1, 3),
        n: r.range(3, 10),
        k,
        master_seed: seed,
        parallelism: 1,
    };
    (env, planner)
}

fn planned_coresets(trials: usize, seed: u64) -> Result<Vec<CoreSet>> {
    (0..trials as u64)
        .map(|t| {
            let (spec, config) = random_instance(seed.wrapping_add(t));
            let env = make_env(&spec, config.gamma)?;
            Ok(plan(&config, &env.mdp, &env.features, env.rho)?.diagnostics.coreset)
        })
        .collect()
}

fn coreset_suite(report: &mut VerifyReport, trials: usize, seed: u64) -> Result<()> {
    let sets = planned_coresets(trials, seed)?;
    let over = sets.iter().filter(|c| c.len() as f64 > c.c_max()).count();
    report.push(
        Suite::Coreset,
        "size_within_c_max",
        over == 0,
        format!("{over} of {trials} runs exceeded C_max"),
    );
    let insertions: usize = sets.iter().map(|c| c.insertions().len()).sum();
    let low = sets
        .iter()
        .flat_map(|c| c.insertions().iter().map(move |i| i.uncertainty <= c.tau()))
        .filter(|x| *x)
        .count();
    report.push(
        Suite::Coreset,
        "insertions_uncertain",
        low == 0,
        format!("{low} of {insertions} insertions had uncertainty <= tau"),
    );
    Ok(())
}

fn determinant_suite(report: &mut VerifyReport, trials: usize, seed: u64) -> Result<()> {
    let sets = planned_coresets(trials, seed)?;
    let mut total = 0;
    let mut short = 0;
    let mut drift: f64 = 0.0;
    for c in &sets {
        let floor = c.tau().ln_1p() - 1e-9;
        for i in c.insertions() {
            total += 1;
            if i.log_det_after - i.log_det_before <= floor {
                short += 1;
            }
        }
        drift = drift.max((c.gram().log_det() - c.gram().factor_log_det()).abs());
    }
    report.push(
        Suite::Determinant,
        "log_det_growth",
        short == 0,
        format!("{short} of {total} insertions grew log det by at most ln(1+tau)"),
    );
    report.push(
        Suite::Determinant,
        "running_log_det_matches_factor",
        drift <= 1e-8,
        format!("max drift {drift:e}"),
    );
    Ok(())
}

/// Stochastic realizable instance used by the coupling check.
pub fn coupling_instance(seed: u64) -> (EnvSpec, PlannerConfig) {
    let mut env = EnvSpec::new(Family::TabularOnehot);
    env.states = 4;
    env.seed = seed;
    let planner = PlannerConfig {
        algorithm: Algorithm::Lspi,
        gamma: 0.8,
        lambda: 0.01,
        tau: 1.0,
        alpha: 0.0,
        m: 3,
        n: 8,
        k: 3,
        master_seed: seed,
        parallelism: 1,
    };
    (env, planner)
}

fn coupling_suite(report: &mut VerifyReport, trials: usize, seed: u64) -> Result<()> {
    let mut identical = 0;
    let mut growth = 0;
    for t in 0..trials as u64 {
        let (spec, config) = coupling_instance(seed.wrapping_add(t));
        let env = make_env(&spec, config.gamma)?;
        let h = virtual_pi_harness(&config, &env.mdp, &env.features, env.rho)?;
        identical += usize::from(h.final_weights_identical());
        growth += usize::from(h.growth_identical() && h.passed());
    }
    report.push(
        Suite::Coupling,
        "final_loop_weights_identical",
        identical == trials,
        format!("{identical}/{trials} seeds with bit-identical final-loop weights"),
    );
    report.push(
        Suite::Coupling,
        "coreset_growth_identical",
        growth == trials,
        format!("{growth}/{trials} seeds with identical core-set growth and trajectories"),
    );
    Ok(())
}

/// Hoeffding envelope `4/(1−γ) √(ln B / (2 B m))` for the mean of `B`
/// batch estimates of `m` rollouts each.
pub fn hoeffding_envelope(gamma: f64, batches: usize, m: usize) -> f64 {
    let b = batches as f64;
    4.0 / (1.0 - gamma) * (b.ln() / (2.0 * b * m as f64)).sqrt()
}

/// Mean of `batches` rollout estimates at every pair of a fully covered
/// tabular instance, against the oracle's truncated and exact `Q`.
pub struct HoeffdingCheck {
    pub max_bias: f64,
    pub envelope: f64,
    pub max_truncation_error: f64,
    pub truncation_bound: f64,
}

pub fn hoeffding_check(batches: usize, seed: u64) -> Result<HoeffdingCheck> {
    let (gamma, m, n) = (0.9, 10, 20);
    let mut spec = EnvSpec::new(Family::TabularOnehot);
    spec.states = 3;
    spec.seed = seed;
    let env = make_env(&spec, gamma)?;
    let a_count = 2;
    let s_count = 3;
    let mut coreset = CoreSet::new(env.features.dim(), 1.0, 1.0)?;
    for s in 0..s_count {
        for a in 0..a_count {
            let phi = env.features.feature(StateId(s as u64), ActionId(a))?;
            coreset.add_entry(crate::coreset::CoreSetEntry::new(StateId(s as u64), ActionId(a), phi))?;
        }
    }
    let policy = PolicySnapshot::Uniform;
    let table: PolicyTable = vec![vec![0.5; a_count]; s_count];
    let truncated = truncated_policy_q(&env.mdp, &table, n)?;
    let exact = exact_policy_q(&env.mdp, &table)?;
    let spec_r = RolloutSpec { m, n, gamma };
    let mut sim = SimulatorHandle::new(&env.mdp, env.rho);
    // The kernel is dense, so probing from the start state soon reveals
    // every state and rollouts may then start anywhere.
    let mut probe = RngStream::new(StreamKey::new(seed).derive(VERIFY_BRANCH), 9);
    let mut probes = 0;
    while sim.visited_count() < s_count {
        sim.query(env.rho, ActionId(0), &mut probe)?;
        probes += 1;
        if probes > 100_000 {
            return Err(invalid("env", "some states are unreachable from the start"));
        }
    }
    let mut max_bias: f64 = 0.0;
    for (ci, entry) in coreset.entries().iter().enumerate() {
        let mut sum = 0.0;
        for b in 0..batches {
            let ctx = RolloutContext {
                spec: spec_r,
                policy: &policy,
                coreset: &coreset,
                fmap: &env.features,
                action_count: a_count,
                key: StreamKey::new(seed).with_rollout(0, b as u64, 0, 0),
            };
            match confident_rollout(&ctx, ci, (entry.state, entry.action), &mut sim)? {
                RolloutResult::Done { estimate } => sum += estimate,
                RolloutResult::Uncertain { .. } => {
                    return Err(invalid("coreset", "fully covered instance reported uncertainty"))
                }
            }
        }
        let s = entry.state.0 as usize;
        max_bias = max_bias.max((sum / batches as f64 - truncated[s][entry.action.0]).abs());
    }
    Ok(HoeffdingCheck {
        max_bias,
        envelope: hoeffding_envelope(gamma, batches, m),
        max_truncation_error: max_abs_diff(&exact, &truncated),
        truncation_bound: gamma.powi(n as i32 + 1) / (1.0 - gamma),
    })
}

fn hoeffding_suite(report: &mut VerifyReport, trials: usize, seed: u64) -> Result<()> {
    let h = hoeffding_check(trials.max(2), seed)?;
    report.push(
        Suite::Hoeffding,
        "mean_within_envelope",
        h.max_bias <= h.envelope,
        format!("max bias {:e} vs envelope {:e}", h.max_bias, h.envelope),
    );
    report.push(
        Suite::Hoeffding,
        "truncation_bound",
        h.max_truncation_error <= h.truncation_bound,
        format!("max |Q - Q_n| {:e} vs bound {:e}", h.max_truncation_error, h.truncation_bound),
    );
    Ok(())
}

/// Largest `|γ E_ρ[V_π] − V_π(s_init)|` over `policies` random stochastic
/// policies on an augmented random instance with a random `ρ`.
pub fn augment_identity_error(policies: usize, seed: u64) -> Result<f64> {
    let mut spec = EnvSpec::new(Family::TabularOnehot);
    spec.states = 6;
    spec.actions = 3;
    spec.seed = seed;
    let gamma = 0.9;
    let base = make_env(&spec, gamma)?;
    let mut r = Draws::new(seed, 1);
    let mut simplex = |len: usize| {
        let raw: Vec<f64> = (0..len).map(|_| -(1.0 - r.0.next_uniform()).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    let rho = simplex(spec.states);
    let aug = augment_random_initial(&base, &rho)?;
    let mut worst: f64 = 0.0;
    for _ in 0..policies {
        let base_table: PolicyTable = (0..spec.states).map(|_| simplex(spec.actions)).collect();
        let mut aug_table = base_table.clone();
        aug_table.push(simplex(spec.actions));
        let v = state_values(&base_table, &exact_policy_q(&base.mdp, &base_table)?);
        let v_aug = state_values(&aug_table, &exact_policy_q(&aug.mdp, &aug_table)?);
        let expected: f64 = gamma * rho.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
        worst = worst.max((expected - v_aug[spec.states]).abs());
    }
    Ok(worst)
}

fn augment_suite(report: &mut VerifyReport, trials: usize, seed: u64) -> Result<()> {
    let err = augment_identity_error(trials, seed)?;
    report.push(
        Suite::Augment,
        "initial_state_identity",
        err <= 1e-10,
        format!("max deviation {err:e} over {trials} policies"),
    );
    Ok(())
}

/// Runs `suite`; `trials = None` uses the suite's default.
pub fn run_suite(suite: Suite, trials: Option<usize>, seed: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::ALL[..5].to_vec(),
        s => vec![s],
    };
    for s in suites {
        let n = trials.unwrap_or(s.default_trials());
        if n == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        match s {
            Suite::Coreset => coreset_suite(&mut report, n, seed)?,
            Suite::Determinant => determinant_suite(&mut report, n, seed)?,
            Suite::Coupling => coupling_suite(&mut report, n, seed)?,
            Suite::Hoeffding => hoeffding_suite(&mut report, n, seed)?,
            Suite::Augment => augment_suite(&mut report, n, seed)?,
            Suite::All => unreachable!(),
        }
    }
    Ok(report)
}
