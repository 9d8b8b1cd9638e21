use confident_mc::envs::{
    chebyshev_fit, make_env, parse_mdp, sample_policies, write_mdp, EnvSpec, Family,
};
use confident_mc::oracle::{
    bellman_residual, exact_policy_q, max_abs_diff, optimal_values, policy_table, state_values, truncated_policy_q,
    PolicyTable,
};
use confident_mc::mdp::FeatureMap;
use confident_mc::simulator::{Environment, RngStream, StreamKey};
use proptest::prelude::*;

fn random_tables(states: usize, actions: usize, count: usize, seed: u64) -> Vec<PolicyTable> {
    let mut rng = RngStream::new(StreamKey::new(seed), 3);
    (0..count)
        .map(|_| {
            (0..states)
                .map(|_| {
                    let raw: Vec<f64> = (0..actions).map(|_| rng.next_uniform() + 1e-9).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect()
}

fn tabular(seed: u64, states: usize, actions: usize) -> EnvSpec {
    let mut spec = EnvSpec::new(Family::TabularOnehot);
    spec.states = states;
    spec.actions = actions;
    spec.seed = seed;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn optimum_dominates_random_policies(seed in any::<u64>(), states in 2usize..7, actions in 2usize..4) {
        let env = make_env(&tabular(seed, states, actions), 0.9).unwrap();
        let opt = optimal_values(&env.mdp).unwrap();
        for table in random_tables(states, actions, 50, seed) {
            let v = state_values(&table, &exact_policy_q(&env.mdp, &table).unwrap());
            for (star, x) in opt.values.iter().zip(&v) {
                prop_assert!(*star >= x - 1e-9);
            }
        }
    }

    #[test]
    fn truncation_error_within_geometric_tail(seed in any::<u64>(), n in 0usize..30, gamma in 0.5f64..0.95) {
        let env = make_env(&tabular(seed, 4, 2), gamma).unwrap();
        for table in random_tables(4, 2, 5, seed) {
            let exact = exact_policy_q(&env.mdp, &table).unwrap();
            let truncated = truncated_policy_q(&env.mdp, &table, n).unwrap();
            prop_assert!(max_abs_diff(&exact, &truncated) <= gamma.powi(n as i32 + 1) / (1.0 - gamma) + 1e-12);
            prop_assert!(bellman_residual(&env.mdp, &table, &exact).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn mdp_text_round_trips(seed in any::<u64>(), family in 0usize..5) {
        let mut spec = EnvSpec::new(Family::ALL[family]);
        spec.seed = seed;
        if spec.family == Family::Misspecified {
            spec.epsilon = 0.05;
        }
        let env = make_env(&spec, 0.8).unwrap();
        let parsed = parse_mdp(&write_mdp(&env.mdp)).unwrap();
        prop_assert_eq!(parsed, env.mdp);
    }
}

#[test]
fn realizable_families_fit_exactly() {
    for family in [Family::TabularOnehot, Family::LowRankLinear, Family::Chain] {
        for seed in 0..3 {
            let mut spec = EnvSpec::new(family);
            spec.seed = seed;
            let env = make_env(&spec, 0.9).unwrap();
            for policy in sample_policies(env.features.dim(), 10, seed) {
                let table = policy_table(&env.mdp, &policy, &env.features).unwrap();
                let q: Vec<f64> = exact_policy_q(&env.mdp, &table).unwrap().into_iter().flatten().collect();
                let (_, residual) = chebyshev_fit(env.features.all(), &q).unwrap();
                assert!(residual <= 1e-9, "{family} seed {seed}: residual {residual:e}");
            }
        }
    }
}

#[test]
fn misspecified_family_certifies_its_level() {
    for eps in [0.01, 0.05] {
        for seed in 0..3 {
            let mut spec = EnvSpec::new(Family::Misspecified);
            spec.epsilon = eps;
            spec.seed = seed;
            let env = make_env(&spec, 0.9).unwrap();
            let certified = env.certified_epsilon.unwrap();
            assert!(certified > 0.0 && certified <= eps + 1e-9, "eps {eps}: certified {certified}");
        }
    }
}

#[test]
fn chain_optimum_is_closed_form() {
    let env = make_env(&EnvSpec::new(Family::Chain), 0.9).unwrap();
    let opt = optimal_values(&env.mdp).unwrap();
    assert!((opt.values[0] - 0.9f64.powi(4) / 0.1).abs() < 1e-10);
    assert_eq!(env.mdp.action_count(), 2);
}
