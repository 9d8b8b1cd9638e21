//! Single-run orchestration: build the environment, plan, score the output
//! against the oracle and write telemetry.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::coreset::CoreSetEntry;
use crate::envs::{augment_random_initial, make_env, BuiltEnv, EnvSpec};
use crate::error::{invalid, Result};
use crate::mdp::{FeatureMap, StateId};
use crate::oracle::{optimal_values, planned_value};
use crate::planner::{plan, Algorithm, IterationRecord, PlannedPolicy, PlannerConfig, TheoremParams};
use crate::simulator::{Environment, RngStream, SimulatorHandle, Simulator, StreamKey, ACTION_CHANNEL, TRANSITION_CHANNEL};

/// Stream branch for Monte Carlo evaluation of the output policy.
pub const EVAL_BRANCH: u64 = 0x6576_616c;

/// Allowed amount by which a run may appear to beat the optimum.
pub const GAP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub planner: PlannerConfig,
    /// Start from an auxiliary state that moves to a uniformly random base
    /// state.
    pub augment: bool,
    pub oracle_gap: bool,
    /// Monte Carlo episodes for estimating the output value; 0 disables.
    pub eval_rollouts: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(env: EnvSpec, planner: PlannerConfig) -> Self {
        Self {
            env,
            planner,
            augment: false,
            oracle_gap: true,
            eval_rollouts: 0,
            out_dir: None,
        }
    }

    /// Parses the flat `key = value` format. `alpha = auto` selects
    /// `(1−γ)√(2 ln|A| / K)`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let env = EnvSpec::from_key_values(&mut kv)?;
        let algorithm: Algorithm = kv.require("algorithm")?;
        let gamma: f64 = kv.require("gamma")?;
        let k: usize = kv.require("k")?;
        let alpha_text: Option<String> = kv.take("alpha")?;
        let alpha = match alpha_text.as_deref() {
            None if algorithm == Algorithm::Lspi => 0.0,
            None => return Err(crate::error::Error::MissingKey { key: "alpha".into() }),
            Some("auto") => politex_alpha(gamma, env.actions, k),
            Some(v) => v
                .parse()
                .map_err(|_| invalid("alpha", format!("expected a number or `auto`, got `{v}`")))?,
        };
        let planner = PlannerConfig {
            algorithm,
            gamma,
            lambda: kv.require("lambda")?,
            tau: kv.take_or("tau", 1.0)?,
            alpha,
            m: kv.require("m")?,
            n: kv.require("n")?,
            k,
            master_seed: kv.take_or("seed", 0)?,
            parallelism: kv.take_or("parallelism", 1)?,
        };
        let config = RunConfig {
            env,
            planner,
            augment: kv.take_or("augment", false)?,
            oracle_gap: kv.take_or("oracle_gap", true)?,
            eval_rollouts: kv.take_or("eval_rollouts", 0)?,
            out_dir: kv.take::<String>("out")?.map(PathBuf::from),
        };
        kv.finish()?;
        config.planner.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let p = &self.planner;
        let mut out = self.env.to_text();
        out.push_str(&format!(
            "algorithm = {}\ngamma = {}\nlambda = {}\ntau = {}\n",
            p.algorithm, p.gamma, p.lambda, p.tau
        ));
        if p.algorithm == Algorithm::Politex {
            out.push_str(&format!("alpha = {}\n", p.alpha));
        }
        out.push_str(&format!(
            "m = {}\nn = {}\nk = {}\nseed = {}\nparallelism = {}\naugment = {}\noracle_gap = {}\neval_rollouts = {}\n",
            p.m, p.n, p.k, p.master_seed, p.parallelism, self.augment, self.oracle_gap, self.eval_rollouts
        ));
        if let Some(dir) = &self.out_dir {
            out.push_str(&format!("out = {}\n", dir.display()));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

/// `(1−γ)√(2 ln|A| / K)`.
pub fn politex_alpha(gamma: f64, action_count: usize, k: usize) -> f64 {
    (1.0 - gamma) * (2.0 * (action_count as f64).ln() / k as f64).sqrt()
}

/// Machine-dependent facts about a run, kept apart from the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub wall_time_seconds: f64,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    /// `V*(ρ) − V_out(ρ)`.
    pub gap: Option<f64>,
    pub optimal_value: Option<f64>,
    pub output_value: Option<f64>,
    pub monte_carlo_value: Option<f64>,
    pub certified_epsilon: Option<f64>,
    pub loops: usize,
    pub coreset_size: usize,
    pub c_max: f64,
    pub queries: u64,
    pub records: Vec<IterationRecord>,
    pub coreset: Vec<CoreSetEntry>,
    /// Final-loop `w_1..w_K`.
    pub weight_history: Vec<Vec<f64>>,
    pub invariant_violations: Vec<String>,
    pub execution: Execution,
}

impl RunReport {
    /// The report without wall time or thread count; two runs with the same
    /// seed must agree on this exactly.
    pub fn deterministic_part(&self) -> RunReport {
        let mut r = self.clone();
        r.execution = Execution {
            wall_time_seconds: 0.0,
            parallelism: 0,
        };
        r.config.planner.parallelism = 0;
        r.config.out_dir = None;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds the environment a run config describes.
pub fn build_env(config: &RunConfig) -> Result<BuiltEnv> {
    let base = make_env(&config.env, config.planner.gamma)?;
    if !config.augment {
        return Ok(base);
    }
    let s = base.mdp.state_count();
    augment_random_initial(&base, &vec![1.0 / s as f64; s])
}

/// Plans, scores and checks one run.
pub fn execute(config: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    let env = build_env(config)?;
    if env.features.dim() == 0 {
        return Err(invalid("dim", "feature dimension is zero"));
    }
    let output = plan(&config.planner, &env.mdp, &env.features, env.rho)?;
    let diag = &output.diagnostics;
    let rho = env.rho.0 as usize;

    let (optimal_value, output_value, gap) = if config.oracle_gap {
        let opt = optimal_values(&env.mdp)?;
        let v = planned_value(&env.mdp, &output.policy, &env.features)?;
        (Some(opt.values[rho]), Some(v[rho]), Some(opt.values[rho] - v[rho]))
    } else {
        (None, None, None)
    };
    let monte_carlo_value = (config.eval_rollouts > 0)
        .then(|| {
            monte_carlo_value(
                &env.mdp,
                &env.features,
                &output.policy,
                env.rho,
                &config.planner,
                config.eval_rollouts,
            )
        })
        .transpose()?;

    let mut violations = Vec::new();
    if let Some(g) = gap {
        if g < -GAP_SLACK {
            violations.push(format!("gap {g:e} is below the optimum tolerance"));
        }
    }
    if diag.coreset.len() as f64 >= diag.coreset.c_max() {
        violations.push(format!(
            "core set size {} reached C_max {:.4}",
            diag.coreset.len(),
            diag.coreset.c_max()
        ));
    }
    if diag.records.windows(2).any(|w| w[1].queries < w[0].queries) {
        violations.push("query count decreased".into());
    }
    if diag.loops != diag.restarts.len() + 1 {
        violations.push("loop count does not match restarts".into());
    }

    Ok(RunReport {
        config: config.clone(),
        gap,
        optimal_value,
        output_value,
        monte_carlo_value,
        certified_epsilon: env.certified_epsilon,
        loops: diag.loops,
        coreset_size: diag.coreset.len(),
        c_max: diag.coreset.c_max(),
        queries: diag.queries,
        records: diag.records.clone(),
        coreset: diag.coreset.entries().to_vec(),
        weight_history: diag.weight_history.clone(),
        invariant_violations: violations,
        execution: Execution {
            wall_time_seconds: start.elapsed().as_secs_f64(),
            parallelism: config.planner.parallelism,
        },
    })
}

/// Average discounted return of `episodes` episodes of length `n + 1` from
/// `rho`; a mixture picks one component per episode.
pub fn monte_carlo_value(
    env: &dyn Environment,
    fmap: &dyn FeatureMap,
    planned: &PlannedPolicy,
    rho: StateId,
    config: &PlannerConfig,
    episodes: usize,
) -> Result<f64> {
    let components = planned.components();
    let mut sim = SimulatorHandle::new(env, rho);
    let action_count = env.action_count();
    let mut total = 0.0;
    for e in 0..episodes {
        let key = StreamKey::new(config.master_seed)
            .derive(EVAL_BRANCH)
            .with_rollout(0, 0, 0, e as u64);
        let mut actions = RngStream::new(key, ACTION_CHANNEL);
        let mut transitions = RngStream::new(key, TRANSITION_CHANNEL);
        let pick = actions.next_uniform();
        let index = ((pick * components.len() as f64) as usize).min(components.len() - 1);
        let policy = components[index].1;
        let mut state = rho;
        let mut discount = 1.0;
        for _ in 0..=config.n {
            let a = policy.sample_action(state, fmap, action_count, &mut actions)?;
            let t = sim.query(state, a, &mut transitions)?;
            total += discount * t.reward;
            discount *= config.gamma;
            state = t.next_state;
        }
    }
    Ok(total / episodes as f64)
}

/// One CSV row of run telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    #[serde(rename = "loop")]
    pub loop_index: usize,
    pub iteration: usize,
    pub coreset_size: usize,
    pub restart: bool,
    pub queries: u64,
    pub weight_norm: Option<f64>,
}

impl From<&IterationRecord> for CsvRecord {
    fn from(r: &IterationRecord) -> Self {
        Self {
            loop_index: r.loop_index,
            iteration: r.iteration,
            coreset_size: r.coreset_size,
            restart: r.restart,
            queries: r.queries,
            weight_norm: r.weight_norm,
        }
    }
}

pub const CSV_HEADER: &str = "loop,iteration,coreset_size,restart,queries,weight_norm";

pub fn records_to_csv(records: &[IterationRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        writer.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        writer.serialize(CsvRecord::from(r))?;
    }
    let bytes = writer.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `iterations.csv` and `summary.json` into `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("iterations.csv");
    let json_path = dir.join("summary.json");
    fs::write(&csv_path, records_to_csv(&report.records)?)?;
    fs::write(&json_path, report.to_json()?)?;
    Ok((csv_path, json_path))
}

/// Calculator output in the run-config format, raw values as comments.
pub fn params_fragment(p: &TheoremParams) -> String {
    let mut out = format!("algorithm = {}\nlambda = {:e}\ntau = {}\n", p.algorithm, p.lambda, p.tau);
    if let Some(alpha) = p.alpha {
        out.push_str(&format!("alpha = {alpha:e}\n"));
    }
    out.push_str(&format!(
        "n = {}\nk = {}\nm = {}\n# unrounded: n = {:e}, k = {:e}, m = {:e}\n",
        p.n, p.k, p.m, p.n_raw, p.k_raw, p.m_raw
    ));
    if let Some(bound) = p.bound {
        out.push_str(&format!("# sub-optimality bound = {bound:e}\n"));
    }
    out
}
