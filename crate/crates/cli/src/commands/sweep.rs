//! `sweep`: run the solver across a grid of one parameter and tabulate the
//! outcomes. Jobs are independent and deterministic per row.

use std::path::Path;

use anyhow::{bail, Result};

use fdpe::solver::fdpe_run;

use crate::artifacts::{ensure_dir, write_with};
use crate::commands::common::build;
use crate::config::ExperimentConfig;

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let exp = build(cfg)?;
    let mut rows: Vec<(f64, usize, u64, u64, f64, bool)> = Vec::new();
    match cfg.sweep.parameter.as_str() {
        "batches" => {
            for &value in &cfg.sweep.values {
                let mut config = exp.solver_config.clone();
                config.num_batches = value.max(1.0) as usize;
                config.tol = cfg.sweep.target_error;
                let trace = fdpe_run(&exp.datasets, &exp.features, &exp.topology, &config)?;
                rows.push((
                    value,
                    trace.mean_emp_error_per_epoch().len(),
                    trace.comm_rounds,
                    trace.grad_evals,
                    trace.final_mean_emp_error(),
                    trace.converged_epoch.is_some(),
                ));
            }
        }
        "lambda" => {
            for &value in &cfg.sweep.values {
                if !(0.0..=1.0).contains(&value) {
                    bail!("lambda sweep value {value} outside [0, 1]");
                }
                let mut config = exp.solver_config.clone();
                config.lambda = value;
                let trace = fdpe_run(&exp.datasets, &exp.features, &exp.topology, &config)?;
                rows.push((
                    value,
                    trace.mean_emp_error_per_epoch().len(),
                    trace.comm_rounds,
                    trace.grad_evals,
                    trace.final_mean_emp_error(),
                    trace.converged_epoch.is_some(),
                ));
            }
        }
        other => bail!("unknown sweep.parameter {other:?} (expected batches or lambda)"),
    }
    let parameter = cfg.sweep.parameter.clone();
    write_with(out, "sweep.csv", move |w| {
        writeln!(w, "{parameter},epochs,comm_rounds,grad_evals,final_error,converged")?;
        for (value, epochs, comm, grads, err, converged) in &rows {
            writeln!(w, "{value},{epochs},{comm},{grads},{err},{converged}")?;
        }
        Ok(())
    })?;
    println!("sweep over {} written to {}", cfg.sweep.parameter, out.display());
    Ok(())
}
