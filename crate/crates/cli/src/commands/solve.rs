//! `solve`: one solver run over previously collected artifact files.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;

use fdpe::estimators::batch_estimates;
use fdpe::mdp::Policy;
use fdpe::sampler::Dataset;
use fdpe::solver::{algorithm1_run, decaying_baseline_run, fdpe_run, SolverConfig};

use crate::artifacts::{write_json, write_with, RunSummary};
use crate::commands::collect_cmd::load_json;
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    /// Variance-reduced mini-batch diffusion solver.
    Fdpe,
    /// Exact-gradient diffusion (the single-mini-batch case).
    Alg1,
    /// Plain mini-batch diffusion with decaying step sizes.
    Baseline,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Fdpe => "fdpe",
            Algorithm::Alg1 => "alg1",
            Algorithm::Baseline => "baseline",
        }
    }
}

pub fn run(cfg: &ExperimentConfig, dir: &Path, algorithm: Algorithm) -> Result<()> {
    let features = load_json(dir, "features.json", |r| fdpe::io::load_features(r))?;
    let topology = load_json(dir, "topology.json", |r| fdpe::io::load_topology(r))?;
    let target: Policy<f64> = load_json(dir, "target_policy.json", |r| fdpe::io::load_policy(r))?;
    let k = cfg.num_agents();
    let mut datasets: Vec<Dataset<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let behavior: Policy<f64> =
            load_json(dir, &format!("behavior_policy_{i}.json"), |r| fdpe::io::load_policy(r))?;
        let dataset = load_json(dir, &format!("dataset_{i}.csv"), |r| {
            fdpe::io::load_dataset(r, behavior, target.clone())
        })?;
        datasets.push(dataset);
    }

    let mut solver_config = SolverConfig::<f64>::new(features.dim(), k);
    solver_config.mu_theta = cfg.solver.mu_theta;
    solver_config.mu_omega = cfg.solver.mu_omega;
    solver_config.eta = cfg.solver.eta;
    solver_config.lambda = cfg.solver.lambda;
    solver_config.horizon = cfg.solver.horizon;
    solver_config.gamma = cfg.mdp.gamma;
    solver_config.num_batches = cfg.solver.batches;
    solver_config.u_mode = cfg.u_mode()?;
    solver_config.max_epochs = cfg.solver.max_epochs;
    solver_config.tol = cfg.solver.tol;
    solver_config.seed = cfg.seed;

    let trace = match algorithm {
        Algorithm::Fdpe => fdpe_run(&datasets, &features, &topology, &solver_config)?,
        Algorithm::Alg1 => {
            let sets = datasets
                .iter()
                .enumerate()
                .map(|(i, ds)| {
                    batch_estimates(
                        ds,
                        &features,
                        solver_config.lambda,
                        solver_config.horizon,
                        solver_config.gamma,
                        solver_config.taus[i],
                        solver_config.u_mode,
                    )
                    .context("batch estimates")
                })
                .collect::<Result<Vec<_>>>()?;
            algorithm1_run(&sets, &topology, &solver_config)?
        }
        Algorithm::Baseline => {
            decaying_baseline_run(&datasets, &features, &topology, &solver_config, Some(0.01))?
        }
    };
    let name = algorithm.name();
    let violations = datasets.iter().map(|d| d.support_violations().len()).sum();
    write_with(dir, &format!("trace_{name}.csv"), |w| {
        fdpe::io::trace_to_csv(&trace, w)
    })?;
    let summary = RunSummary::new(name, &trace, None, violations, cfg);
    write_json(dir, &format!("summary_{name}.json"), &summary)?;
    println!(
        "{name}: {} epochs, final error {:.3e}, consensus gap {:.3e} -> {}",
        summary.epochs,
        summary.final_mean_emp_error,
        summary.final_consensus_gap,
        dir.display()
    );
    Ok(())
}
