//! `verify`: runs the invariant and property suite at desk scale and prints
//! one pass/fail line per property. Exit status reflects the outcome.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};

use fdpe::estimators::{aggregate, batch_estimates, sample_a, sample_b, TraceWeights, UMode};
use fdpe::features::{projection, random_features};
use fdpe::mdp::{
    grid_mdp, induce_chain, random_mdp, stationary_distribution, value_function, Policy,
};
use fdpe::network::{check_combination_matrix, metropolis, Graph};
use fdpe::oracle::{bellman_operators, exact_a_expansion, exact_abc, saddle_point};
use fdpe::sampler::{collect, grid_partition, ratios, restricted_policy};
use fdpe::solver::{algorithm1_run, fdpe_run, local_gradient, Init, SolverConfig};

struct Outcome {
    name: &'static str,
    result: std::result::Result<(), String>,
}

fn check(name: &'static str, f: impl FnOnce() -> std::result::Result<(), String>) -> Outcome {
    Outcome { name, result: f() }
}

fn expect(cond: bool, detail: String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail)
    }
}

pub fn run(seed: u64) -> Result<()> {
    let outcomes = run_all(seed);
    let mut failures = 0;
    for outcome in &outcomes {
        match &outcome.result {
            Ok(()) => println!("PASS {}", outcome.name),
            Err(detail) => {
                failures += 1;
                println!("FAIL {}: {detail}", outcome.name);
            }
        }
    }
    println!("{} properties checked, {failures} failed", outcomes.len());
    if failures > 0 {
        bail!("{failures} verification properties failed");
    }
    Ok(())
}

fn run_all(seed: u64) -> Vec<Outcome> {
    let mut outcomes = Vec::new();

    // Shared small fixtures.
    let (mdp, target) = random_mdp::<f64>(8, 3, 0.3, 0.5, 1.0, 0.9, seed).unwrap();
    let chain = induce_chain(&mdp, &target).unwrap();
    let d = stationary_distribution(&chain).unwrap();
    let v = value_function(&chain, 0.9).unwrap();
    let behavior = Policy::new(
        target.probs() * 0.6 + Policy::<f64>::uniform(8, 3).probs() * 0.4,
    )
    .unwrap();

    outcomes.push(check("mdp/h-stage-bellman-identity", || {
        let p = chain.transition();
        for h in [1usize, 2, 5] {
            let mut acc = DVector::<f64>::zeros(8);
            let mut pow = DMatrix::<f64>::identity(8, 8);
            for _ in 0..h {
                acc += &pow * chain.expected_reward();
                pow = &pow * (p * 0.9);
            }
            let res = (&pow * &v + acc - &v).amax();
            expect(res < 1e-10, format!("h = {h}: residual {res:.3e}"))?;
        }
        Ok(())
    }));

    outcomes.push(check("mdp/stationary-fixed-point", || {
        let res = (chain.transition().tr_mul(&d) - &d).amax();
        expect(res < 1e-10, format!("residual {res:.3e}"))?;
        expect((d.sum() - 1.0).abs() < 1e-12, "mass not one".into())
    }));

    outcomes.push(check("mdp/induced-chain-right-stochastic", || {
        for s in 0..8 {
            let sum: f64 = chain.transition().row(s).iter().sum();
            expect((sum - 1.0).abs() < 1e-12, format!("row {s} sums to {sum}"))?;
        }
        Ok(())
    }));

    outcomes.push(check("features/projection-idempotent", || {
        let features = random_features::<f64>(8, 3, seed + 1).unwrap();
        let pi = projection(&features, &d).map_err(|e| e.to_string())?;
        expect((&pi * &pi - &pi).amax() < 1e-10, "projection not idempotent".into())
    }));

    outcomes.push(check("sampler/ratio-recursion-vs-direct", || {
        let data = collect(&mdp, &behavior, &target, 40, seed + 2).map_err(|e| e.to_string())?;
        let table = ratios(&data, 5).map_err(|e| e.to_string())?;
        for t in 0..table.usable() {
            for h in 0..=5usize {
                let mut direct = 1.0;
                for j in t..t + h {
                    let s = data.states()[j];
                    let a = data.actions()[j];
                    direct *= target.prob(s, a) / behavior.prob(s, a);
                }
                expect(
                    (table.xi(t, h) - direct).abs() <= 1e-13 * direct.abs().max(1.0),
                    format!("cell ({t}, {h})"),
                )?;
            }
        }
        Ok(())
    }));

    outcomes.push(check("sampler/restricted-policy-stochastic", || {
        let (_, grid_target) = grid_mdp::<f64>(6, 6, 0.9, seed + 3).unwrap();
        for region in grid_partition(6, 6, 2, 2) {
            let p = restricted_policy(&grid_target, &region, 6, 6).map_err(|e| e.to_string())?;
            for s in 0..36 {
                let sum: f64 = (0..4).map(|a| p.prob(s, a)).sum();
                expect((sum - 1.0).abs() < 1e-12, format!("state {s}"))?;
            }
        }
        Ok(())
    }));

    outcomes.push(check("estimators/on-policy-trace-weights-one", || {
        let data = collect(&mdp, &target, &target, 60, seed + 4).map_err(|e| e.to_string())?;
        let table = ratios(&data, 6).map_err(|e| e.to_string())?;
        for t in 0..table.usable() {
            let tw = TraceWeights::at(&table, t, 0.7, 0.9);
            for n in 0..6 {
                expect(tw.rho[n] == 1.0, format!("rho[{n}] = {} at t = {t}", tw.rho[n]))?;
            }
        }
        Ok(())
    }));

    outcomes.push(check("estimators/unbiasedness-reduced", || {
        // Reduced sample count, looser bound than the acceptance criterion.
        // Uses a grid MDP so the exact b has a solid scale for the relative
        // comparison (its rewards are uniform positive).
        let (gm, g_target) = grid_mdp::<f64>(4, 4, 0.9, seed + 40).unwrap();
        let g_behavior = Policy::new(
            g_target.probs() * 0.6 + Policy::<f64>::uniform(16, 4).probs() * 0.4,
        )
        .unwrap();
        let g_chain = induce_chain(&gm, &g_target).unwrap();
        let b_chain = induce_chain(&gm, &g_behavior).unwrap();
        let db = stationary_distribution(&b_chain).unwrap();
        let features = random_features::<f64>(16, 4, seed + 5).unwrap();
        let exact = exact_abc(&g_chain, &features, &db, 0.9, 0.7, 5).map_err(|e| e.to_string())?;
        let data =
            collect(&gm, &g_behavior, &g_target, 40_000, seed + 41).map_err(|e| e.to_string())?;
        let set = batch_estimates(&data, &features, 0.7, 5, 0.9, 1.0, UMode::Identity)
            .map_err(|e| e.to_string())?;
        let a_err = (&set.a_hat - &exact.a).norm() / exact.a.norm();
        let b_err = (&set.b_hat - &exact.b).norm() / exact.b.norm();
        expect(a_err < 0.15, format!("A relative error {a_err:.3}"))?;
        expect(b_err < 0.15, format!("b relative error {b_err:.3}"))
    }));

    outcomes.push(check("oracle/truncated-bellman-identity", || {
        for (lambda, h) in [(0.0, 1usize), (0.6, 5), (1.0, 10)] {
            let ops = bellman_operators(&chain, 0.9, lambda, h).map_err(|e| e.to_string())?;
            let res = ops.identity_residual(&chain).map_err(|e| e.to_string())?;
            expect(res < 1e-10, format!("lambda {lambda}, H {h}: {res:.3e}"))?;
        }
        Ok(())
    }));

    outcomes.push(check("oracle/contraction-factor-bound", || {
        for gamma in [0.2, 0.6, 0.93] {
            for lambda in [0.0, 0.4, 1.0] {
                for h in [1usize, 5, 20] {
                    let ops =
                        bellman_operators(&chain, gamma, lambda, h).map_err(|e| e.to_string())?;
                    expect(
                        ops.rho1 > 0.0 && ops.rho1 <= gamma + 1e-14,
                        format!("rho1 = {} at ({gamma}, {lambda}, {h})", ops.rho1),
                    )?;
                }
            }
        }
        Ok(())
    }));

    outcomes.push(check("oracle/expansion-identity", || {
        let features = random_features::<f64>(8, 3, seed + 7).unwrap();
        for (lambda, h) in [(0.3, 4usize), (0.9, 12)] {
            let p = exact_abc(&chain, &features, &d, 0.9, lambda, h).map_err(|e| e.to_string())?;
            let a2 = exact_a_expansion(&chain, &features, &d, 0.9, lambda, h)
                .map_err(|e| e.to_string())?;
            let gap = (p.a - a2).amax();
            expect(gap < 1e-10, format!("gap {gap:.3e}"))?;
        }
        Ok(())
    }));

    outcomes.push(check("oracle/saddle-gradient-zero", || {
        let features = random_features::<f64>(8, 3, seed + 8).unwrap();
        let data = collect(&mdp, &target, &target, 500, seed + 9).map_err(|e| e.to_string())?;
        let set = batch_estimates(&data, &features, 0.5, 5, 0.9, 1.0, UMode::Identity)
            .map_err(|e| e.to_string())?;
        let theta_p = DVector::zeros(3);
        let (theta, omega) = saddle_point(&set, 1e-3, &theta_p).map_err(|e| e.to_string())?;
        let grad = local_gradient(&theta, &omega, &set, 1e-3, &theta_p);
        expect(grad.amax() < 1e-10, format!("gradient {:.3e}", grad.amax()))
    }));

    outcomes.push(check("network/metropolis-assumptions", || {
        for s in 0..10u64 {
            let graph = Graph::random_connected(3 + (s as usize % 8), 0.5, seed + s).unwrap();
            let topo = metropolis::<f64>(&graph).unwrap();
            check_combination_matrix(topo.combination())?;
        }
        Ok(())
    }));

    outcomes.push(check("network/fault-injection-detected", || {
        // A corrupted combination matrix must fail the named check.
        let topo = metropolis::<f64>(&Graph::ring(5)).unwrap();
        let mut bad = topo.combination().clone();
        bad[(0, 0)] += 0.1;
        match check_combination_matrix(&bad) {
            Err(prop) => expect(
                prop == "doubly-stochastic" || prop == "symmetric",
                format!("unexpected property {prop}"),
            ),
            Ok(()) => Err("corruption was not detected".into()),
        }
    }));

    // Desk solver fixtures shared by the remaining checks.
    let features = random_features::<f64>(8, 4, seed + 10).unwrap();
    let datasets: Vec<_> = (0..3)
        .map(|k| collect(&mdp, &behavior, &target, 200, seed + 20 + k).unwrap())
        .collect();
    let topology = metropolis::<f64>(&Graph::ring(3)).unwrap();
    let mut config = SolverConfig::<f64>::new(4, 3);
    config.gamma = 0.9;
    config.lambda = 0.5;
    config.horizon = 4;
    config.mu_theta = 0.05;
    config.mu_omega = 0.5;
    config.num_batches = 4;
    config.max_epochs = 40;
    config.tol = 0.0;
    config.seed = seed;

    outcomes.push(check("solver/fixed-point-stationarity", || {
        let sets: Vec<_> = datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                batch_estimates(ds, &features, 0.5, 4, 0.9, config.taus[k], UMode::Identity)
                    .unwrap()
            })
            .collect();
        let (agg, _) = aggregate(&sets).unwrap();
        let (theta_o, omega_o) = saddle_point(&agg, 0.0, &config.theta_p).map_err(|e| e.to_string())?;
        let mut fixed = config.clone();
        fixed.max_epochs = 3;
        fixed.init = Init::FixedPoint {
            theta: theta_o.clone(),
            omega: omega_o.clone(),
        };
        let trace =
            fdpe_run(&datasets, &features, &topology, &fixed).map_err(|e| e.to_string())?;
        for theta in &trace.final_thetas {
            let gap = (theta - &theta_o).amax();
            expect(gap < 1e-12, format!("drift {gap:.3e}"))?;
        }
        Ok(())
    }));

    outcomes.push(check("solver/single-batch-equivalence", || {
        let mut one = config.clone();
        one.num_batches = 1;
        one.max_epochs = 40;
        one.record_iterates = true;
        let fdpe = fdpe_run(&datasets, &features, &topology, &one).map_err(|e| e.to_string())?;
        let sets: Vec<_> = datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                batch_estimates(ds, &features, 0.5, 4, 0.9, one.taus[k], UMode::Identity).unwrap()
            })
            .collect();
        let alg1 = algorithm1_run(&sets, &topology, &one).map_err(|e| e.to_string())?;
        let fi = fdpe.iterates.as_ref().unwrap();
        let ai = alg1.iterates.as_ref().unwrap();
        for (f, a) in fi.iter().zip(ai) {
            for k in 0..3 {
                let gap = (&f[k].0 - &a[k].0).amax().max((&f[k].1 - &a[k].1).amax());
                expect(gap <= 1e-12, format!("trajectory gap {gap:.3e}"))?;
            }
        }
        Ok(())
    }));

    outcomes.push(check("solver/accumulator-bookkeeping", || {
        let mut frozen = config.clone();
        frozen.mu_theta = 0.0;
        frozen.mu_omega = 0.0;
        frozen.max_epochs = 2;
        frozen.record_iterates = true;
        let theta0 = DVector::from_element(4, 0.2);
        let omega0 = DVector::from_element(4, -0.1);
        frozen.init = Init::Point {
            theta: theta0.clone(),
            omega: omega0.clone(),
        };
        let trace =
            fdpe_run(&datasets, &features, &topology, &frozen).map_err(|e| e.to_string())?;
        let accs = trace.accumulators.as_ref().unwrap();
        for (k, dataset) in datasets.iter().enumerate() {
            let table = ratios(dataset, 4).unwrap();
            let usable = table.usable();
            let mut top = DVector::<f64>::zeros(4);
            let mut bottom = DVector::<f64>::zeros(4);
            for n in 0..usable {
                let a_n = sample_a(dataset, &features, &table, n, 0.5, 0.9).unwrap();
                let b_n = sample_b(dataset, &features, &table, n, 0.5, 0.9).unwrap();
                let c_n = fdpe::estimators::sample_c(dataset, &features, &table, n).unwrap();
                top -= a_n.transpose() * &omega0;
                bottom += a_n * &theta0 - b_n + c_n * &omega0;
            }
            top /= usable as f64;
            bottom /= usable as f64;
            let g = &accs[1][k];
            for i in 0..4 {
                expect(
                    (g[i] - top[i]).abs() < 1e-14 && (g[4 + i] - bottom[i]).abs() < 1e-14,
                    format!("agent {k} row {i}"),
                )?;
            }
        }
        Ok(())
    }));

    outcomes.push(check("solver/centralized-reduction", || {
        // K = 1 degenerates to a centralized run with zero consensus gap.
        let single = vec![collect(&mdp, &behavior, &target, 300, seed + 30).unwrap()];
        let topo = metropolis::<f64>(&Graph::new(1)).unwrap();
        let mut cfg1 = SolverConfig::<f64>::new(4, 1);
        cfg1.gamma = 0.9;
        cfg1.lambda = 0.5;
        cfg1.horizon = 4;
        cfg1.mu_theta = 0.05;
        cfg1.mu_omega = 0.5;
        cfg1.num_batches = 2;
        cfg1.max_epochs = 30_000;
        cfg1.tol = 1e-14;
        cfg1.seed = seed;
        let trace = fdpe_run(&single, &features, &topo, &cfg1).map_err(|e| e.to_string())?;
        expect(
            trace.final_consensus_gap() == 0.0,
            "single agent must have zero consensus gap".into(),
        )?;
        // The centralized run must make many orders of magnitude of progress
        // toward its own saddle point (the exact rate is instance dependent).
        let errs = trace.mean_emp_error_per_epoch();
        let initial = errs.first().copied().unwrap_or(f64::INFINITY);
        let err = trace.final_mean_emp_error();
        expect(
            err < 1e-6 * initial && err < 1e-6,
            format!("final error {err:.3e} from initial {initial:.3e}"),
        )
    }));

    outcomes
}
