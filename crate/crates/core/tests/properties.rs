//! Property tests over randomized instances.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fdpe::features::{projection, random_features};
use fdpe::mdp::{grid_mdp, induce_chain, random_mdp, Policy};
use fdpe::network::{check_combination_matrix, metropolis, Graph};
use fdpe::oracle::bellman_operators;
use fdpe::sampler::{collect, grid_partition, ratios, restricted_policy};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn induced_chain_is_right_stochastic(
        seed in 0u64..10_000,
        s in 2usize..9,
        a in 1usize..4,
    ) {
        let (mdp, policy) = random_mdp::<f64>(s, a, 0.3, 0.5, 1.0, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        for row in 0..s {
            let sum: f64 = chain.transition().row(row).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_policies_stay_stochastic(
        seed in 0u64..10_000,
        w in 2usize..6,
        h in 2usize..6,
        nx in 1usize..3,
        ny in 1usize..3,
    ) {
        let (_, policy) = grid_mdp::<f64>(w, h, 0.9, seed).unwrap();
        for region in grid_partition(w, h, nx.min(w), ny.min(h)) {
            let restricted = restricted_policy(&policy, &region, w, h).unwrap();
            for s in 0..w * h {
                let sum: f64 = (0..4).map(|a| restricted.prob(s, a)).sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ratio_recursion_equals_direct_product(
        seed in 0u64..10_000,
        horizon in 1usize..8,
    ) {
        let (mdp, target) = random_mdp::<f64>(5, 3, 0.2, 0.5, 1.0, 0.9, seed).unwrap();
        let behavior = Policy::new(
            target.probs() * 0.6 + Policy::<f64>::uniform(5, 3).probs() * 0.4,
        ).unwrap();
        let data = collect(&mdp, &behavior, &target, 30, seed + 1).unwrap();
        let table = ratios(&data, horizon).unwrap();
        for t in 0..table.usable() {
            for h in 0..=horizon {
                let mut direct = 1.0f64;
                for j in t..t + h {
                    let s = data.states()[j];
                    let a = data.actions()[j];
                    direct *= target.prob(s, a) / behavior.prob(s, a);
                }
                prop_assert!((table.xi(t, h) - direct).abs() <= 1e-13 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn projection_is_idempotent(
        seed in 0u64..10_000,
        s in 3usize..10,
        m in 2usize..5,
    ) {
        let m = m.min(s);
        let features = random_features::<f64>(s, m, seed).unwrap();
        let weights = DVector::from_fn(s, |i, _| 0.05 + ((seed as usize + i) % 7) as f64 / 10.0);
        let pi = projection(&features, &weights).unwrap();
        prop_assert!((&pi * &pi - &pi).amax() < 1e-10);
        prop_assert!((&pi * features.matrix() - features.matrix()).amax() < 1e-10);
    }

    #[test]
    fn metropolis_matrices_satisfy_network_assumptions(
        seed in 0u64..10_000,
        k in 2usize..12,
    ) {
        let graph = Graph::random_connected(k, 0.5, seed).unwrap();
        let topo = metropolis::<f64>(&graph).unwrap();
        prop_assert!(check_combination_matrix(topo.combination()).is_ok());
        // Every eigenvalue of (L + I)/2 lies in [0, 1].
        let mean = topo.combination() * 0.5 + DMatrix::<f64>::identity(k, k) * 0.5;
        for eig in mean.symmetric_eigen().eigenvalues.iter() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(eig));
        }
    }

    #[test]
    fn contraction_factor_bound(
        seed in 0u64..1_000,
        gamma_pct in 5u32..100,
        lambda_pct in 0u32..=100,
        horizon in 1usize..25,
    ) {
        let gamma = gamma_pct as f64 / 100.0;
        let lambda = lambda_pct as f64 / 100.0;
        let (mdp, policy) = random_mdp::<f64>(5, 2, 0.2, 0.5, 1.0, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let ops = bellman_operators(&chain, gamma, lambda, horizon).unwrap();
        prop_assert!(ops.rho1 > 0.0);
        prop_assert!(ops.rho1 <= gamma + 1e-14);
        for s in 0..5 {
            let sum: f64 = ops.gamma1.row(s).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_star_minimizes_weighted_cost(
        seed in 0u64..10_000,
        s in 4usize..9,
    ) {
        // Any perturbation of theta_star increases |X theta - v|_D^2.
        let (mdp, policy) = random_mdp::<f64>(s, 2, 0.2, 0.5, 1.0, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let d = fdpe::mdp::stationary_distribution(&chain).unwrap();
        let v = fdpe::mdp::value_function(&chain, 0.9).unwrap();
        let features = random_features::<f64>(s, 3, seed + 7).unwrap();
        let star = fdpe::oracle::theta_star(&v, &features, &d).unwrap();
        let cost = |theta: &DVector<f64>| -> f64 {
            let resid = features.values(theta) - &v;
            (0..s).map(|i| d[i] * resid[i] * resid[i]).sum()
        };
        let base = cost(&star);
        for delta in 0..6 {
            let mut perturbed = star.clone();
            perturbed[delta % 3] += if delta % 2 == 0 { 1e-3 } else { -1e-3 };
            prop_assert!(cost(&perturbed) >= base - 1e-15);
        }
    }
}

#[test]
fn region_partition_covers_grid_without_overlap() {
    let regions = grid_partition(15, 15, 3, 3);
    let mut seen = HashSet::new();
    for region in &regions {
        for &s in region {
            assert!(seen.insert(s), "state {s} in two regions");
        }
    }
    assert_eq!(seen.len(), 225);
}
