//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn fdpe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdpe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

/// A fast configuration: tiny solver budget, few curve trials.
fn fast_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--out",
        out,
        "--set",
        "solver.max_epochs=200",
        "--set",
        "solver.mu_theta=0.05",
        "--set",
        "solver.mu_omega=0.5",
        "--set",
        "solver.tol=1e-6",
        "--set",
        "curves.trials=3",
        "--set",
        "data.samples_per_agent=512",
        "--set",
        "sweep.values=[2,4]",
        "--set",
        "sweep.target_error=1e-4",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn pipeline_gen_collect_solve_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for step in ["gen", "collect"] {
        let run = fdpe(&fast_args(out, &[step]));
        assert!(run.status.success(), "{step}: {}", String::from_utf8_lossy(&run.stderr));
    }
    let run = fdpe(&fast_args(out, &["solve", "--algorithm", "fdpe"]));
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let trace = read(dir.path(), "trace_fdpe.csv");
    assert!(trace.starts_with("epoch,agent,emp_error,consensus_gap,msd,grad_evals,comm_rounds"));
    let summary: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "summary_fdpe.json")).unwrap();
    assert!(summary["gate"]["satisfied"].is_boolean());
    assert!(summary["final_mean_emp_error"].as_f64().unwrap().is_finite());
}

#[test]
fn exp1_bundles_are_byte_identical() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    for dir in [&dir1, &dir2] {
        let out = dir.path().to_str().unwrap();
        let run = fdpe(&fast_args(out, &["exp1"]));
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let mut names: Vec<String> = std::fs::read_dir(dir1.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"curves.csv".to_string()));
    assert!(names.contains(&"frontier.csv".to_string()));
    for name in &names {
        let a = std::fs::read(dir1.path().join(name)).unwrap();
        let b = std::fs::read(dir2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn exp2_emits_local_reward_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = fdpe(&fast_args(
        out,
        &["exp2", "--set", "topology.agents=3", "--set", "solver.batches=2"],
    ));
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for k in 0..3 {
        assert!(dir.path().join(format!("local_rewards_{k}.json")).exists());
        assert!(dir.path().join(format!("dataset_{k}.csv")).exists());
    }
    let curves = read(dir.path(), "curves.csv");
    assert!(curves.starts_with("lambda,exact_bias,approx_bias,empirical_variance,approx_variance"));
}

#[test]
fn sweep_writes_schema_conformant_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = fdpe(&fast_args(out, &["sweep", "--set", "sweep.parameter=lambda", "--set", "sweep.values=[0.0,0.5]"]));
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let sweep = read(dir.path(), "sweep.csv");
    let mut lines = sweep.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,epochs,comm_rounds,grad_evals,final_error,converged"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn failures_emit_machine_readable_errors() {
    let run = fdpe(&["gen", "--set", "bogus.key=1"]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("stderr must be JSON");
    assert!(parsed["error"].as_str().unwrap().contains("bogus"));

    // Invalid region split: 7 does not divide a 6-wide grid evenly, which is
    // fine, but a zero split is rejected before any computation.
    let run = fdpe(&["exp1", "--set", "mdp.kind=random"]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(serde_json::from_str::<serde_json::Value>(stderr.trim()).is_ok());
}

#[test]
fn output_root_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_fdpe"))
        .env("FDPE_OUT", dir.path())
        .args(["gen", "--set", "data.samples_per_agent=256"])
        .output()
        .expect("binary runs");
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(dir.path().join("mdp.json").exists());
}

#[test]
fn verify_reports_every_property() {
    let run = fdpe(&["verify"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    let passes = stdout.lines().filter(|l| l.starts_with("PASS ")).count();
    assert!(passes >= 18, "expected at least 18 properties, saw {passes}");
    assert!(!stdout.contains("FAIL"));
}
