//! Cross-module invariants through the public API.

use geopg::estimators::{eval_pg, eval_pg_batch, GradientKind};
use geopg::fixtures;
use geopg::mdp::TabularMdp;
use geopg::optim::{mrpg_run, rpg_run, MrpgPlan, NoMonitor, RunOptions, StepsizeSchedule, TabularMonitor};
use geopg::oracle;
use geopg::par::Execution;
use geopg::policy::{Policy, TabularSoftmax, Theta};
use geopg::rng::{seeded, StreamKey};
use proptest::prelude::*;

fn theta_strategy(dim: usize) -> impl Strategy<Value = Theta> {
    proptest::collection::vec(-3.0f64..3.0, dim).prop_map(Theta::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_gradient_ignores_reward_offset(theta in theta_strategy(4), offset in -10.0f64..10.0) {
        let mdp = fixtures::chain2();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let g = oracle::exact_policy_gradient(&mdp, &pol, &theta).unwrap();
        let h = oracle::exact_policy_gradient(&mdp.reshaped(offset), &pol, &theta).unwrap();
        prop_assert!((g - h).norm() < 1e-9 * (1.0 + offset.abs()));
    }

    #[test]
    fn estimates_are_keyed_by_stream(seed in 0u64..1000, index in 0u64..1000) {
        let mdp = fixtures::ring3();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let theta = Theta::from_fn(6, |i, _| 0.2 * i as f64 - 0.5);
        for kind in GradientKind::ALL {
            let key = StreamKey::new(seed, 0, index);
            let a = eval_pg(kind, &mdp, &pol, &theta, key).unwrap();
            let b = eval_pg(kind, &mdp, &pol, &theta, key).unwrap();
            prop_assert_eq!(a.vector, b.vector);
        }
    }

    #[test]
    fn exact_j_matches_bellman_solution(theta in theta_strategy(6)) {
        let mdp = fixtures::ring3();
        let pol = TabularSoftmax::for_mdp(&mdp);
        let sol = oracle::exact_values(&mdp, &pol, &theta).unwrap();
        prop_assert!(oracle::bellman_residual(&mdp, &pol, &theta, &sol.v).unwrap() < 1e-10);
        prop_assert!((sol.j_theta - sol.v[mdp.start()]).abs() < 1e-12);
    }

    #[test]
    fn random_mdp_greedy_policy_survives_offsets(seed in 0u64..10_000, offset in -20.0f64..20.0) {
        let mdp = fixtures::random_mdp(&mut seeded(seed), 6, 4, 0.9).unwrap();
        let a = oracle::value_iteration(&mdp, 1e-12).unwrap().greedy;
        let b = oracle::value_iteration(&mdp.reshaped(offset), 1e-12).unwrap().greedy;
        prop_assert_eq!(a, b);
    }
}

#[test]
fn parallel_and_sequential_batches_agree() {
    let mdp = fixtures::chain2();
    let pol = TabularSoftmax::for_mdp(&mdp);
    let theta = Theta::from_vec(vec![0.5, -0.5, 1.0, 0.0]);
    let key = StreamKey::new(11, 2, 0);
    for kind in GradientKind::ALL {
        let a = eval_pg_batch(kind, &mdp, &pol, &theta, key, 500, Execution::Sequential).unwrap();
        let b = eval_pg_batch(kind, &mdp, &pol, &theta, key, 500, Execution::Parallel).unwrap();
        let a: Vec<_> = a.into_iter().map(|e| e.vector).collect();
        let b: Vec<_> = b.into_iter().map(|e| e.vector).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn rpg_improves_chain2_from_uniform_policy() {
    let mdp = fixtures::chain2();
    let pol = TabularSoftmax::for_mdp(&mdp);
    let theta0 = Theta::zeros(pol.dim());
    let mon = TabularMonitor { mdp: &mdp, policy: &pol };
    let opts = RunOptions::new(1, GradientKind::AdvTd);
    let out = rpg_run(&mdp, &pol, &theta0, &StepsizeSchedule::Constant { alpha: 0.01 }, 3000, &opts, &mon).unwrap();
    let j0 = oracle::j_theta(&mdp, &pol, &theta0).unwrap();
    let j1 = oracle::j_theta(&mdp, &pol, &out.final_theta()).unwrap();
    assert!(j1 > j0, "J went from {j0} to {j1}");
}

#[test]
fn mrpg_returns_a_logged_checkpoint() {
    let mdp: TabularMdp = fixtures::chain2_saddle();
    let pol = fixtures::saddle_policy();
    let sp = fixtures::saddle_point().unwrap();
    let plan = MrpgPlan { alpha: 2e-4, beta: 5e-3, k_thre: 10, iterations: 200, truncated: false };
    let out = mrpg_run(&mdp, &pol, &sp.theta, &plan, &RunOptions::new(4, GradientKind::AdvTd), &NoMonitor).unwrap();
    assert_eq!(out.returned_iteration % plan.k_thre, 0);
    assert!(out.returned_iteration < plan.iterations);
    let again = mrpg_run(&mdp, &pol, &sp.theta, &plan, &RunOptions::new(4, GradientKind::AdvTd), &NoMonitor).unwrap();
    assert_eq!(out, again);
}
