//! `exp1` / `exp2`: end-to-end experiment bundles.
//!
//! The grid-partition experiment builds a grid MDP explored region-by-region
//! by restricted behavior policies; the random-MDP experiment builds a
//! global-state/local-reward team problem over a geometric network. Both
//! emit the same artifact bundle: generation files, datasets, bias/variance
//! curves, solver traces for the variance-reduced solver and the decaying
//! baseline, and run summaries. The grid experiment additionally sweeps the
//! mini-batch count to chart communication against computation.

use std::path::Path;

use anyhow::Result;

use fdpe::solver::{decaying_baseline_run, fdpe_run};

use crate::artifacts::{ensure_dir, write_json, write_with, RunSummary};
use crate::commands::common::{build, BuiltExperiment};
use crate::commands::oracle_cmd;
use crate::config::ExperimentConfig;

pub fn run(cfg: &ExperimentConfig, out: &Path, with_frontier: bool) -> Result<()> {
    ensure_dir(out)?;
    let exp = build(cfg)?;
    write_bundle_inputs(cfg, &exp, out)?;

    // Oracle quantities and the bias/variance curves.
    let report = oracle_cmd::oracle_report(cfg, &exp)?;
    write_json(out, "oracle.json", &report)?;
    if cfg.curves.enabled {
        let (bias, variance) = oracle_cmd::curves(cfg, &exp)?;
        write_with(out, "curves.csv", |w| {
            fdpe::io::curves_to_csv(&bias, Some(&variance), w)
        })?;
    }

    // Variance-reduced solver and the decaying baseline at a matched
    // per-sample gradient budget.
    let (_, diag) = exp.aggregate_set()?;
    let trace = fdpe_run(&exp.datasets, &exp.features, &exp.topology, &exp.solver_config)?;
    write_with(out, "trace_fdpe.csv", |w| fdpe::io::trace_to_csv(&trace, w))?;
    let summary = RunSummary::new("fdpe", &trace, Some(diag), exp.support_violations, cfg);
    write_json(out, "summary_fdpe.json", &summary)?;

    let fdpe_epochs = trace.mean_emp_error_per_epoch().len();
    let mut baseline_config = exp.solver_config.clone();
    baseline_config.max_epochs = (2 * fdpe_epochs).saturating_sub(1).max(1);
    baseline_config.tol = 0.0;
    let baseline = decaying_baseline_run(
        &exp.datasets,
        &exp.features,
        &exp.topology,
        &baseline_config,
        Some(0.01),
    )?;
    write_with(out, "trace_baseline.csv", |w| fdpe::io::trace_to_csv(&baseline, w))?;
    let baseline_summary =
        RunSummary::new("baseline", &baseline, None, exp.support_violations, cfg);
    write_json(out, "summary_baseline.json", &baseline_summary)?;

    if with_frontier {
        write_frontier(cfg, &exp, out)?;
    }

    println!(
        "bundle written to {}: solver {:.3e} vs baseline {:.3e} final error \
         ({} support-restricted pairs)",
        out.display(),
        summary.final_mean_emp_error,
        baseline_summary.final_mean_emp_error,
        exp.support_violations
    );
    Ok(())
}

fn write_bundle_inputs(cfg: &ExperimentConfig, exp: &BuiltExperiment, out: &Path) -> Result<()> {
    write_json(out, "config.json", cfg)?;
    write_with(out, "mdp.json", |w| fdpe::io::save_mdp(&exp.mdp, Some(cfg.seed), w))?;
    write_with(out, "target_policy.json", |w| fdpe::io::save_policy(&exp.target, w))?;
    write_with(out, "features.json", |w| fdpe::io::save_features(&exp.features, w))?;
    write_with(out, "topology.json", |w| fdpe::io::save_topology(&exp.topology, w))?;
    for (i, behavior) in exp.behaviors.iter().enumerate() {
        write_with(out, &format!("behavior_policy_{i}.json"), |w| {
            fdpe::io::save_policy(behavior, w)
        })?;
    }
    for (i, dataset) in exp.datasets.iter().enumerate() {
        write_with(out, &format!("dataset_{i}.csv"), |w| {
            fdpe::io::save_dataset(dataset, w)
        })?;
    }
    if let Some(locals) = &exp.local_rewards {
        for (i, local) in locals.iter().enumerate() {
            write_with(out, &format!("local_rewards_{i}.json"), |w| {
                fdpe::io::save_mdp(local, Some(cfg.seed), w)
            })?;
        }
    }
    Ok(())
}

/// Communication-computation frontier: runs the solver to a fixed target
/// error for each mini-batch count and records the spent resources.
fn write_frontier(cfg: &ExperimentConfig, exp: &BuiltExperiment, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for &value in &cfg.sweep.values {
        let batches = value.max(1.0) as usize;
        let mut config = exp.solver_config.clone();
        config.num_batches = batches;
        config.tol = cfg.sweep.target_error;
        match fdpe_run(&exp.datasets, &exp.features, &exp.topology, &config) {
            Ok(trace) => rows.push((
                batches,
                trace.mean_emp_error_per_epoch().len(),
                trace.comm_rounds,
                trace.grad_evals,
                trace.final_mean_emp_error(),
                trace.converged_epoch.is_some(),
            )),
            Err(fdpe::Error::Divergence { epoch, error, .. }) => {
                rows.push((batches, epoch + 1, 0, 0, error, false))
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_with(out, "frontier.csv", move |w| {
        writeln!(w, "batches,epochs,comm_rounds,grad_evals,final_error,converged")?;
        for (batches, epochs, comm, grads, err, converged) in &rows {
            writeln!(w, "{batches},{epochs},{comm},{grads},{err},{converged}")?;
        }
        Ok(())
    })?;
    Ok(())
}
