use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use confident_mc::experiment::{execute, params_fragment, write_outputs, RunConfig};
use confident_mc::planner::{
    lspi_params_from_theorem, misspecified_params_from_theorem, politex_params_from_theorem, Algorithm,
};
use confident_mc::verify::{run_suite, Suite};
use confident_mc::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "confident-mc", version, about = "Confident Monte Carlo planners: runs, parameter calculators and property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan on the environment described by a config file and write
    /// iterations.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Output directory; defaults to the config's `out` key, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameters under which a guarantee holds, in config format.
    Params {
        #[arg(value_enum)]
        theorem: Theorem,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        actions: Option<usize>,
    },
    /// Run a property suite: coreset, determinant, coupling, hoeffding,
    /// augment or all.
    Verify {
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print one JSON object per property instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Theorem {
    Lspi,
    Politex,
    LspiEps,
    PolitexEps,
}

fn usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Parse { .. } | Error::MissingKey { .. } | Error::InvalidParameter { .. } | Error::Io(_)
    )
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if usage_error(&e) { EXIT_USAGE } else { EXIT_FAILURE })
}

fn run(config_path: PathBuf, seed: Option<u64>, parallelism: Option<usize>, out: Option<PathBuf>) -> ExitCode {
    let mut config = match RunConfig::load(&config_path) {
        Ok(c) => c,
        Err(Error::Io(e)) => {
            eprintln!("error: cannot read config {}: {e}", config_path.display());
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(s) = seed {
        config.planner.master_seed = s;
    }
    if let Some(p) = parallelism {
        config.planner.parallelism = p;
    }
    if let Err(e) = config.planner.validate() {
        return fail(e);
    }
    let dir = out.or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let report = match execute(&config) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let (csv, json) = match write_outputs(&report, &dir) {
        Ok(paths) => paths,
        Err(e) => {
            eprintln!("error: cannot write outputs to {}: {e}", dir.display());
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let gap = report.gap.map_or("n/a".to_string(), |g| format!("{g:.6}"));
    println!(
        "gap {gap}  loops {}  coreset_size {}  queries {}",
        report.loops, report.coreset_size, report.queries
    );
    println!("wrote {} and {}", csv.display(), json.display());
    if report.invariant_violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        for v in &report.invariant_violations {
            eprintln!("invariant violated: {v}");
        }
        ExitCode::from(EXIT_FAILURE)
    }
}

#[allow(clippy::too_many_arguments)]
fn params(
    theorem: Theorem,
    kappa: Option<f64>,
    epsilon: Option<f64>,
    gamma: f64,
    b: f64,
    d: usize,
    delta: f64,
    actions: Option<usize>,
) -> ExitCode {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| {
            eprintln!("error: this calculator needs --{flag}");
            ExitCode::from(EXIT_USAGE)
        })
    };
    let result = match theorem {
        Theorem::Lspi => match need(kappa, "kappa") {
            Ok(k) => lspi_params_from_theorem(k, gamma, b, delta, d),
            Err(code) => return code,
        },
        Theorem::Politex => match (need(kappa, "kappa"), actions) {
            (Ok(k), Some(a)) => politex_params_from_theorem(k, gamma, b, delta, d, a),
            (Err(code), _) => return code,
            (_, None) => {
                eprintln!("error: this calculator needs --actions");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        Theorem::LspiEps | Theorem::PolitexEps => {
            let algorithm = match theorem {
                Theorem::LspiEps => Algorithm::Lspi,
                _ => Algorithm::Politex,
            };
            match need(epsilon, "epsilon") {
                Ok(e) => misspecified_params_from_theorem(e, gamma, b, delta, d, algorithm, actions.unwrap_or(2)),
                Err(code) => return code,
            }
        }
    };
    match result {
        Ok(p) => {
            print!("{}", params_fragment(&p));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn verify(suite: &str, trials: Option<usize>, seed: u64, json: bool) -> ExitCode {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let report = match run_suite(suite, trials, seed) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for r in &report.results {
        if json {
            println!("{}", serde_json::to_string(r).expect("plain struct serializes"));
        } else {
            let status = if r.passed { "PASS" } else { "FAIL" };
            println!("{status} {}/{}: {}", r.suite, r.property, r.detail);
        }
    }
    match report.first_failure() {
        None => ExitCode::SUCCESS,
        Some(r) => {
            eprintln!("failed: {}/{}", r.suite, r.property);
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            parallelism,
            out,
        } => run(config, seed, parallelism, out),
        Command::Params {
            theorem,
            kappa,
            epsilon,
            gamma,
            b,
            d,
            delta,
            actions,
        } => params(theorem, kappa, epsilon, gamma, b, d, delta, actions),
        Command::Verify {
            suite,
            trials,
            seed,
            json,
        } => verify(&suite, trials, seed, json),
    }
}
