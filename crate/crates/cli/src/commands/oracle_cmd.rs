//! `oracle`: exact analytical quantities for the configured experiment,
//! plus the bias/variance curves when enabled.

use std::path::Path;

use anyhow::Result;
use nalgebra::DMatrix;
use serde::Serialize;

use fdpe::estimators::UMode;
use fdpe::oracle::{bellman_operators, bias_curve, exact_abc, saddle_point, theta_o, variance_curve};

use crate::artifacts::{ensure_dir, write_json, write_with};
use crate::commands::common::{build, BuiltExperiment};
use crate::config::{ExperimentConfig, TRIAL_SEED_OFFSET};

#[derive(Serialize)]
pub struct OracleReport {
    rho1: f64,
    gamma1_row_sum_error: f64,
    bellman_identity_residual: f64,
    theta_star: Vec<f64>,
    theta_o: Vec<f64>,
    saddle_theta: Vec<f64>,
    saddle_omega: Vec<f64>,
    exact_bias: f64,
    assumption_satisfied: bool,
    min_eig_c: f64,
    min_sv_a: f64,
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let exp = build(cfg)?;
    let report = oracle_report(cfg, &exp)?;
    write_json(out, "oracle.json", &report)?;
    // Cache the empirical estimates for cross-checking and reruns.
    let sets = exp.estimate_sets()?;
    for (i, set) in sets.iter().enumerate() {
        write_with(out, &format!("estimates_{i}.json"), |w| {
            fdpe::io::save_estimates(set, w)
        })?;
    }
    let (agg, _) = exp.aggregate_set()?;
    write_with(out, "estimates_aggregate.json", |w| {
        fdpe::io::save_estimates(&agg, w)
    })?;
    if cfg.curves.enabled {
        let (bias, variance) = curves(cfg, &exp)?;
        write_with(out, "curves.csv", |w| {
            fdpe::io::curves_to_csv(&bias, Some(&variance), w)
        })?;
    }
    println!(
        "oracle report written to {} (rho1 = {:.6}, exact bias = {:.3e})",
        out.display(),
        report.rho1,
        report.exact_bias
    );
    Ok(())
}

pub fn oracle_report(cfg: &ExperimentConfig, exp: &BuiltExperiment) -> Result<OracleReport> {
    let gamma = exp.mdp.gamma();
    let ops = bellman_operators(&exp.chain, gamma, cfg.solver.lambda, cfg.solver.horizon)?;
    let row_err = (0..exp.chain.num_states())
        .map(|s| (ops.gamma1.row(s).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0f64, f64::max);
    let residual = ops.identity_residual(&exp.chain)?;
    let problem = exact_abc(
        &exp.chain,
        &exp.features,
        &exp.weighting,
        gamma,
        cfg.solver.lambda,
        cfg.solver.horizon,
    )?;
    let u = exact_u(cfg, &problem.c, exp.features.dim())?;
    let t_o = theta_o(&problem, cfg.solver.eta, &u, &exp.solver_config.theta_p)?;
    let (agg, diag) = exp.aggregate_set()?;
    let (s_theta, s_omega) = saddle_point(&agg, cfg.solver.eta, &exp.solver_config.theta_p)?;
    Ok(OracleReport {
        rho1: ops.rho1,
        gamma1_row_sum_error: row_err,
        bellman_identity_residual: residual,
        theta_star: exp.theta_star.iter().copied().collect(),
        theta_o: t_o.iter().copied().collect(),
        saddle_theta: s_theta.iter().copied().collect(),
        saddle_omega: s_omega.iter().copied().collect(),
        exact_bias: (t_o - &exp.theta_star).norm_squared(),
        assumption_satisfied: diag.satisfied,
        min_eig_c: diag.min_eig_c,
        min_sv_a: diag.min_sv_a,
    })
}

fn exact_u(cfg: &ExperimentConfig, c: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    Ok(match cfg.u_mode()? {
        UMode::Identity => DMatrix::identity(dim, dim),
        UMode::CHat => c.clone(),
    })
}

pub fn curves(
    cfg: &ExperimentConfig,
    exp: &BuiltExperiment,
) -> Result<(fdpe::oracle::BiasCurve<f64>, fdpe::oracle::VarianceCurve<f64>)> {
    let gamma = exp.mdp.gamma();
    let problem = exact_abc(
        &exp.chain,
        &exp.features,
        &exp.weighting,
        gamma,
        cfg.solver.lambda,
        cfg.solver.horizon,
    )?;
    let u = exact_u(cfg, &problem.c, exp.features.dim())?;
    let theta_p = exp.solver_config.theta_p.clone();
    let lambdas = cfg.curves.lambda_grid.clone();
    let bias = bias_curve(
        &exp.chain,
        &exp.features,
        &exp.weighting,
        gamma,
        cfg.solver.horizon,
        cfg.solver.eta,
        &u,
        &theta_p,
        &lambdas,
    )?;
    let taus = exp.solver_config.taus.clone();
    let u_mode = cfg.u_mode()?;
    let kappa1 = bias.kappa[0];
    let seed = cfg.seed;
    let variance = variance_curve(
        &exp.chain,
        &exp.features,
        &exp.weighting,
        gamma,
        cfg.solver.horizon,
        cfg.solver.eta,
        &u,
        &theta_p,
        &lambdas,
        &taus,
        u_mode,
        cfg.curves.trials,
        kappa1,
        |trial| regenerate_datasets(cfg, exp, seed + TRIAL_SEED_OFFSET + trial as u64),
    )?;
    Ok((bias, variance))
}

/// Fresh datasets for one variance-curve trial, mirroring the experiment's
/// own collection process with a trial-specific seed.
fn regenerate_datasets(
    cfg: &ExperimentConfig,
    exp: &BuiltExperiment,
    seed: u64,
) -> fdpe::Result<Vec<fdpe::sampler::Dataset<f64>>> {
    use fdpe::sampler::{collect_with, marl_reward_streams, CollectOptions, StartState};
    let n = cfg.data.samples_per_agent;
    match (&exp.regions, &exp.local_rewards) {
        (Some(regions), _) => regions
            .iter()
            .zip(&exp.behaviors)
            .enumerate()
            .map(|(i, (region, behavior))| {
                let opts = CollectOptions {
                    burn_in: cfg.data.burn_in,
                    start: StartState::UniformIn(region.iter().copied().collect()),
                    strict_support: false,
                };
                collect_with(&exp.mdp, behavior, &exp.target, n, seed + 31 * i as u64, &opts)
            })
            .collect(),
        (None, Some(locals)) => {
            let opts = CollectOptions {
                burn_in: cfg.data.burn_in,
                start: StartState::UniformAll,
                strict_support: true,
            };
            let shared = collect_with(&exp.mdp, &exp.target, &exp.target, n, seed, &opts)?;
            let streams = marl_reward_streams(&shared, locals)?;
            fdpe::estimators::marl_preprocess(&shared, &streams)
        }
        (None, None) => (0..exp.datasets.len())
            .map(|i| {
                let opts = CollectOptions {
                    burn_in: cfg.data.burn_in,
                    start: StartState::UniformAll,
                    strict_support: true,
                };
                collect_with(&exp.mdp, &exp.target, &exp.target, n, seed + 31 * i as u64, &opts)
            })
            .collect(),
    }
}
