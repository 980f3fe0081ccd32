mod common;

use causal_pomdp::belief::{observation_likelihoods, update_belief, JointBelief};
use causal_pomdp::dynamics::Dynamics;
use causal_pomdp::fixtures;
use causal_pomdp::interventions::{DomainSet, DomainSpec};
use causal_pomdp::model::CausalPomdp;
use causal_pomdp::oracle::{expectimax_value, oracle_policy_value, OracleConfig};
use causal_pomdp::planning::{
    check_convexity, evaluate_policy_known_shift, greedy_action, plan, plan_with, value_at, AlphaSet, GreedyPolicy,
    PolicySpec, Pruning, ReactivePolicy, DEFAULT_NODE_BUDGET,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_belief(rng: &mut ChaCha8Rng, states: usize, domains: usize) -> JointBelief {
    let values = if rng.gen_bool(0.2) {
        let mut v = vec![0.0; states * domains];
        v[rng.gen_range(0..states * domains)] = 1.0;
        v
    } else {
        common::random_simplex(rng, states * domains)
    };
    JointBelief::new(states, domains, values).unwrap()
}

/// Q-value of `action` at `belief` with `next` as the continuation value.
fn q_value(dynamics: &Dynamics<'_>, next: &AlphaSet, belief: &JointBelief, action: usize) -> f64 {
    let d = belief.domain_count();
    let now: f64 = (0..belief.as_slice().len())
        .map(|i| belief.as_slice()[i] * dynamics.reward(i / d, action))
        .sum();
    let later: f64 = observation_likelihoods(dynamics, belief, action)
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(o, &p)| p * value_at(next, &update_belief(dynamics, belief, action, o).unwrap()).unwrap().0)
        .sum();
    now + dynamics.gamma() * later
}

#[test]
fn tiger_two_domains_matches_flat_expectimax() {
    let tiger = fixtures::tiger();
    let set = DomainSet::catalog(&tiger);
    let dynamics = Dynamics::new(&tiger, &set).unwrap();
    let flat = common::flatten(&causal_pomdp::model::ModelDocument::parse(fixtures::TIGER).unwrap());
    let stages = plan(&dynamics, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let b = random_belief(&mut rng, 4, 2);
        for (h, stage) in stages.iter().enumerate() {
            let planned = value_at(stage, &b).unwrap().0;
            let reference = flat.value(&[0, 1], b.as_slice(), h);
            assert!((planned - reference).abs() <= 1e-8, "h{h}: {planned} vs {reference}");
        }
    }
}

#[test]
fn tiger_uniform_values() {
    let tiger = fixtures::tiger();
    let set = DomainSet::select(&tiger, "base").unwrap();
    let dynamics = Dynamics::new(&tiger, &set).unwrap();
    let stages = plan(&dynamics, 2);
    let b = JointBelief::uniform(4, 1).unwrap();
    assert_eq!(value_at(&stages[0], &b).unwrap().0, -1.0);
    assert_eq!(greedy_action(&stages[0], &b).unwrap(), 0);
    // listening twice (-1.95) beats listen-then-open (-1 + 0.95 * (8.5 - 15))
    assert!((value_at(&stages[1], &b).unwrap().0 + 1.95).abs() < 1e-12);
}

#[test]
fn pruning_modes_agree_on_tiger() {
    let tiger = fixtures::tiger();
    let set = DomainSet::catalog(&tiger);
    let dynamics = Dynamics::new(&tiger, &set).unwrap();
    let pointwise = plan_with(&dynamics, 3, Pruning::Pointwise);
    let lp = plan_with(&dynamics, 3, Pruning::Lp);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (p, l) in pointwise.iter().zip(&lp) {
        assert!(l.len() <= p.len());
        for _ in 0..50 {
            let b = random_belief(&mut rng, 4, 2);
            assert!((value_at(p, &b).unwrap().0 - value_at(l, &b).unwrap().0).abs() <= 1e-9);
        }
    }
}

#[test]
fn alpha_file_round_trip() {
    let tiger = fixtures::tiger();
    let set = DomainSet::catalog(&tiger);
    let dynamics = Dynamics::new(&tiger, &set).unwrap();
    let stage = plan(&dynamics, 2).pop().unwrap();
    let names = set.names();
    let file = stage.to_file(&tiger, &names);
    let text = serde_json::to_string(&file).unwrap();
    let back = AlphaSet::from_file(&tiger, &serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, stage);
}

#[test]
fn known_shift_evaluation_matches_the_oracle() {
    let tiger = fixtures::tiger();
    let prior = vec![0.25; 4];
    let set = DomainSet::catalog(&tiger);
    let stages = plan(&Dynamics::new(&tiger, &set).unwrap(), 3);
    let policies: Vec<PolicySpec> = vec![
        ReactivePolicy::constant(&tiger, 0).unwrap().into(),
        common::confirm_twice(&tiger),
        GreedyPolicy::new(&tiger, set.clone(), stages).unwrap().into(),
    ];
    let config = OracleConfig::default();
    for policy in &policies {
        for sigma in set.iter() {
            for h in 0..=3 {
                let exact = evaluate_policy_known_shift(&tiger, sigma, policy, &prior, h, DEFAULT_NODE_BUDGET).unwrap();
                let oracle = oracle_policy_value(&tiger, sigma, policy, &prior, h, &config).unwrap().value;
                assert!((exact - oracle).abs() <= 1e-10, "{} h{h}: {exact} vs {oracle}", sigma.name());
            }
        }
    }
}

#[test]
fn degraded_sensor_hurts_confirm_twice() {
    let tiger = fixtures::tiger();
    let policy = common::confirm_twice(&tiger);
    let prior = vec![0.25; 4];
    let value = |sigma: &DomainSpec| evaluate_policy_known_shift(&tiger, sigma, &policy, &prior, 3, DEFAULT_NODE_BUDGET).unwrap();
    let base = value(&DomainSpec::identity("base"));
    let degraded = value(&fixtures::degraded_sensor());
    assert!(degraded < base, "{degraded} !< {base}");
    let trusting = common::trust_once(&tiger);
    let v = |sigma: &DomainSpec| evaluate_policy_known_shift(&tiger, sigma, &trusting, &prior, 3, DEFAULT_NODE_BUDGET).unwrap();
    assert!(v(&fixtures::degraded_sensor()) < v(&DomainSpec::identity("base")));
}

#[test]
fn always_listen_closed_form() {
    let tiger = fixtures::tiger();
    let listen: PolicySpec = ReactivePolicy::constant(&tiger, 0).unwrap().into();
    for h in 0..=4 {
        let expected: f64 = -(0..=h).map(|k| 0.95f64.powi(k as i32)).sum::<f64>();
        for sigma in DomainSet::catalog(&tiger).iter() {
            let v = evaluate_policy_known_shift(&tiger, sigma, &listen, &[0.25; 4], h, DEFAULT_NODE_BUDGET).unwrap();
            assert!((v - expected).abs() < 1e-12);
        }
    }
}

fn random_instance(seed: u64) -> (common::Flat, CausalPomdp) {
    let doc = common::random_document(&mut ChaCha8Rng::seed_from_u64(seed), common::Shape::demanding());
    let (model, _) = CausalPomdp::from_document(&doc).unwrap();
    (common::flatten(&doc), model)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planner_matches_both_oracles(seed in any::<u64>(), horizon in 0usize..=2) {
        let (flat, model) = random_instance(seed);
        let set = DomainSet::catalog(&model);
        let dynamics = Dynamics::new(&model, &set).unwrap();
        let domains: Vec<usize> = (0..set.len()).collect();
        let stages = plan(&dynamics, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(7));
        for _ in 0..10 {
            let b = random_belief(&mut rng, model.state_count(), set.len());
            let planned = value_at(&stages[horizon], &b).unwrap().0;
            let flat_value = flat.value(&domains, b.as_slice(), horizon);
            let expectimax = expectimax_value(&dynamics, &b, horizon, &OracleConfig::default()).unwrap().value;
            prop_assert!((planned - flat_value).abs() <= 1e-8, "{} vs flat {}", planned, flat_value);
            prop_assert!((planned - expectimax).abs() <= 1e-8, "{} vs expectimax {}", planned, expectimax);
        }
    }

    #[test]
    fn stages_satisfy_the_backup_recursion(seed in any::<u64>()) {
        let (_, model) = random_instance(seed);
        let set = DomainSet::catalog(&model);
        let dynamics = Dynamics::new(&model, &set).unwrap();
        let stages = plan(&dynamics, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        for _ in 0..10 {
            let b = random_belief(&mut rng, model.state_count(), set.len());
            for n in 1..stages.len() {
                let v = value_at(&stages[n], &b).unwrap().0;
                let best = (0..model.action_count())
                    .map(|a| q_value(&dynamics, &stages[n - 1], &b, a))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((v - best).abs() <= 1e-9);
                let chosen = q_value(&dynamics, &stages[n - 1], &b, greedy_action(&stages[n], &b).unwrap());
                prop_assert!((chosen - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn planning_is_deterministic_and_convex(seed in any::<u64>()) {
        let (_, model) = random_instance(seed);
        let set = DomainSet::catalog(&model);
        let dynamics = Dynamics::new(&model, &set).unwrap();
        let first = plan(&dynamics, 2);
        prop_assert_eq!(&first, &plan(&dynamics, 2));
        for stage in &first {
            prop_assert!(check_convexity(stage, 200, seed).passed());
        }
        // stage 0 is the immediate reward, which does not depend on the domain
        for alpha in first[0].alphas() {
            for row in alpha.values.chunks_exact(set.len()) {
                prop_assert!(row.iter().all(|&v| v == row[0]));
            }
        }
    }
}
