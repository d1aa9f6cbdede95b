use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlisaacs")).args(args).output().unwrap()
}

fn run_config(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn last_values(csv: &str) -> Vec<f64> {
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let t_last = rows.last().unwrap()[0];
    rows.iter().filter(|r| r[0] == t_last).map(|r| r.last().unwrap().parse().unwrap()).collect()
}

#[test]
fn pure_decay_reaches_point_nine_to_the_tenth() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("pure_decay.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(csv.starts_with("t,x1,value\n"));
    for v in last_values(&csv) {
        assert!((v - 0.9f64.powi(10)).abs() <= 1e-10, "{v}");
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",true"));
}

#[test]
fn stationary_run_keeps_the_initial_slice_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("stationary.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let first: Vec<f64> = csv.lines().skip(1).filter(|l| l.starts_with("0,")).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(first, last_values(&csv));

    let cp = dir.path().join("checkpoint.csv");
    assert!(cp.exists());
    let resumed = dir.path().join("resumed");
    let out = run_config("solve", &configs().join("stationary.toml"), &resumed, &["--resume", cp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("half.toml");
    let text = fs::read_to_string(configs().join("fractional_linear_check.toml")).unwrap();
    fs::write(&cfg, text.replace("horizon = 0.25", "horizon = 0.125").replace("slice_stride = 1", "slice_stride = 1\ncheckpoint = true")).unwrap();
    assert_eq!(run_config("solve", &cfg, &dir.path().join("a"), &[]).status.code(), Some(0));
    let full = dir.path().join("full.toml");
    fs::write(&full, text).unwrap();
    let cp = dir.path().join("a/checkpoint.csv");
    let out = run_config("solve", &full, &dir.path().join("b"), &["--resume", cp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run_config("solve", &full, &dir.path().join("c"), &[]).status.code(), Some(0));
    let b = last_values(&fs::read_to_string(dir.path().join("b/solution.csv")).unwrap());
    let c = last_values(&fs::read_to_string(dir.path().join("c/solution.csv")).unwrap());
    assert_eq!(b, c);
}

#[test]
fn cfl_violation_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("cfl_violation.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("use dt <="), "{err}");
    assert!(!dir.path().join("solution.csv").exists());
}

#[test]
fn malformed_config_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[problem]\nname = \"fractional_linear\"\nsigma = 2.5\n").unwrap();
    let out = run_config("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
    let out = run_config("rates", &configs().join("pure_decay.toml"), &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "rates without a study section");
}

#[test]
fn check_passes_and_detects_injected_negative_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fractional_linear_check.toml");
    let out = run_config("check", &cfg, dir.path(), &["--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = fs::read_to_string(dir.path().join("check.csv")).unwrap();
    assert_eq!(report.lines().count(), 7);
    assert!(report.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")));

    let out = run_config("check", &cfg, dir.path(), &["--inject-negative-kappa"]);
    assert_eq!(out.status.code(), Some(4));
    let report = fs::read_to_string(dir.path().join("check.csv")).unwrap();
    let line = report.lines().find(|l| l.starts_with("coefficient_nonnegativity")).unwrap();
    assert!(line.contains(",false,"), "{line}");
}

#[test]
fn stencil_dump_lists_drift_and_jump_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config("solve", &configs().join("fractional_linear_check.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("stencil.csv")).unwrap();
    assert!(csv.starts_with("a,b,kind,o1,weight\n"));
    assert!(csv.lines().any(|l| l.contains(",nonlocal,")));
}

#[test]
fn degenerate_stationary_study_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    let text = fs::read_to_string(configs().join("stationary.toml")).unwrap();
    fs::write(
        &cfg,
        text + "\n[study]\nlevels = 3\nbase_dx = 0.25\ndt_coeff = 1.0\ndt_power = 1.0\ndelta_coeff = 1.0\ndelta_power = 1.0\nreference = \"fine_grid\"\nreference_factor = 4\n",
    )
    .unwrap();
    let out = run_config("rates", &cfg, dir.path(), &["--level-count", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("rates.txt")).unwrap();
    assert!(table.contains("degenerate: exact"));
    let csv = fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
