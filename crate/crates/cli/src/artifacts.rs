//! Output-bundle plumbing: directory layout, file writers and the run
//! summary document. Artifacts carry no timestamps, so identical
//! configurations produce byte-identical bundles.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use fdpe::estimators::AssumptionDiagnostics;
use fdpe::solver::{log_linear_fit, GateReport, Trace};

use crate::config::ExperimentConfig;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_with(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut dyn Write) -> fdpe::Result<()>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    f(&mut writer).with_context(|| format!("writing {}", path.display()))?;
    writer.flush()?;
    Ok(path)
}

pub fn write_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Serialize)]
pub struct GateSummary {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl From<GateReport> for GateSummary {
    fn from(g: GateReport) -> Self {
        Self {
            lhs: g.lhs,
            rhs: g.rhs,
            satisfied: g.satisfied,
        }
    }
}

#[derive(Serialize)]
pub struct AssumptionSummary {
    pub min_eig_c: f64,
    pub min_sv_a: f64,
    pub satisfied: bool,
}

impl From<AssumptionDiagnostics> for AssumptionSummary {
    fn from(d: AssumptionDiagnostics) -> Self {
        Self {
            min_eig_c: d.min_eig_c,
            min_sv_a: d.min_sv_a,
            satisfied: d.satisfied,
        }
    }
}

#[derive(Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub r_squared: f64,
}

/// Run summary: config echo, gate report, final errors and the fitted
/// log-linear convergence rate over the middle 60% of epochs.
#[derive(Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub gate: GateSummary,
    pub converged_epoch: Option<usize>,
    pub epochs: usize,
    pub final_mean_emp_error: f64,
    pub final_consensus_gap: f64,
    pub grad_evals: u64,
    pub comm_rounds: u64,
    pub fitted_rate: Option<RateFit>,
    pub assumption: Option<AssumptionSummary>,
    pub support_violations: usize,
    pub config: ExperimentConfig,
}

impl RunSummary {
    pub fn new(
        algorithm: &str,
        trace: &Trace<f64>,
        assumption: Option<AssumptionDiagnostics>,
        support_violations: usize,
        config: &ExperimentConfig,
    ) -> Self {
        let errs: Vec<f64> = trace.mean_emp_error_per_epoch().to_vec();
        let epochs = errs.len();
        let lo = epochs / 5;
        let hi = epochs - epochs / 5;
        let fitted_rate = if hi > lo + 1 {
            log_linear_fit(&errs[lo..hi]).map(|(slope, r_squared)| RateFit { slope, r_squared })
        } else {
            None
        };
        Self {
            algorithm: algorithm.into(),
            gate: trace.gate.into(),
            converged_epoch: trace.converged_epoch,
            epochs,
            final_mean_emp_error: trace.final_mean_emp_error(),
            final_consensus_gap: trace.final_consensus_gap(),
            grad_evals: trace.grad_evals,
            comm_rounds: trace.comm_rounds,
            fitted_rate,
            assumption: assumption.map(Into::into),
            support_violations,
            config: config.clone(),
        }
    }
}
