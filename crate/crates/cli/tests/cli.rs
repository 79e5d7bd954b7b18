//! End-to-end tests of the binary: exit-code contract, emitted files, and
//! byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_iioss-lab")
}

fn bench_cfg(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../bench")
        .join(name)
}

fn run(args: &[&str], out_dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

#[test]
fn simulate_linear_benchmark_matches_exponential() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "simulate",
            bench_cfg("linear.cfg").to_str().unwrap(),
            "--xi",
            "1",
            "--horizon",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,y1,u1"));
    let last = csv.lines().last().unwrap();
    let x1: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((x1 - (-1.0f64).exp()).abs() < 1e-6, "x(1) = {x1}");
    assert!(dir.path().join("simulate_report.json").exists());
}

#[test]
fn falsify_square_integrator_exits_one_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "falsify",
            bench_cfg("xdot_u2.cfg").to_str().unwrap(),
            "--budget",
            "1000",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let witness = std::fs::read_to_string(dir.path().join("witness_input.json")).unwrap();
    let signal: serde_json::Value = serde_json::from_str(&witness).unwrap();
    assert!(
        signal.get("breakpoints").is_some(),
        "witness is an input-signal spec"
    );
}

#[test]
fn check_lyapunov_accepts_the_log_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "check-lyapunov",
            bench_cfg("linear_ln.cfg").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("check-lyapunov_report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 4);
    assert!(json["config_hash"].as_str().unwrap().len() == 64);
    assert!(json["version"].as_str().is_some());
}

#[test]
fn settle_writes_the_expected_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["settle", bench_cfg("linear.cfg").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("settling.csv")).unwrap();
    assert!(csv.starts_with("r,eps,T\n"));
    assert_eq!(csv.lines().count(), 1 + 50 * 50);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("same");
    let first = run(
        &[
            "falsify",
            bench_cfg("xdot_u2.cfg").to_str().unwrap(),
            "--seed",
            "5",
        ],
        &out_dir,
    );
    assert_eq!(code(&first), 1);
    let report_a = std::fs::read(out_dir.join("falsify_report.json")).unwrap();
    let witness_a = std::fs::read(out_dir.join("witness_input.json")).unwrap();
    let second = run(
        &[
            "falsify",
            bench_cfg("xdot_u2.cfg").to_str().unwrap(),
            "--seed",
            "5",
        ],
        &out_dir,
    );
    assert_eq!(code(&second), 1);
    let report_b = std::fs::read(out_dir.join("falsify_report.json")).unwrap();
    let witness_b = std::fs::read(out_dir.join("witness_input.json")).unwrap();
    assert_eq!(report_a, report_b);
    assert_eq!(witness_a, witness_b);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("jobs1");
    let four = dir.path().join("jobs4");
    let cfg = bench_cfg("linear_ln.cfg");
    let a = run(&["check-iioss", cfg.to_str().unwrap(), "--jobs", "1"], &one);
    let b = run(
        &["check-iioss", cfg.to_str().unwrap(), "--jobs", "4"],
        &four,
    );
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    let ra = std::fs::read_to_string(one.join("check-iioss_report.json")).unwrap();
    let rb = std::fs::read_to_string(four.join("check-iioss_report.json")).unwrap();
    // reports differ only in the recorded out_dir/jobs overrides
    let va: serde_json::Value = serde_json::from_str(&ra).unwrap();
    let vb: serde_json::Value = serde_json::from_str(&rb).unwrap();
    assert_eq!(va["reports"], vb["reports"]);
}

#[test]
fn benchmark_names_work_as_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["check-iioss", "scalar_iiss", "--horizon", "2"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["check-iioss", "no_such_config.cfg"], dir.path());
    assert_eq!(code(&out), 2);
    // a config without gains cannot run a bound check
    let bad = dir.path().join("nogains.cfg");
    std::fs::write(&bad, r#"{"system": {"benchmark": "passive_scalar"}}"#).unwrap();
    let out2 = run(&["check-iioss", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&out2), 2);
}

#[test]
fn unknown_flags_and_subcommands_exit_two() {
    let out = Command::new(bin())
        .arg("--definitely-not-a-flag")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out2 = Command::new(bin()).arg("transmogrify").output().unwrap();
    assert_eq!(code(&out2), 2);
}

#[test]
fn inline_system_definitions_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("inline.cfg");
    std::fs::write(
        &cfg,
        r#"{
  "system": {"name": "tanh_decay", "n": 1, "m": 1, "p": 1,
             "dynamics": ["-tanh(x1) + u1"], "output": ["x1"]},
  "gains": {
    "alpha": {"expr": "s", "kind": "kinf", "domain_cap": 1e14},
    "beta": {"expr": "s*exp(-t/2)", "domain_cap": 20.0},
    "gamma1": {"expr": "s", "kind": "k"},
    "gamma2": {"expr": "2*s", "kind": "k"}
  },
  "sampling": {"seed": 2, "dt": 0.01, "horizon": 2.0, "sample_count": 10, "xi_radius": 0.5, "amp_max": 0.5}
}"#,
    )
    .unwrap();
    let out = run(&["check-iioss", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn expression_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    // loosening both gains keeps the scalar benchmark unfalsifiable
    let out = run(
        &[
            "falsify",
            bench_cfg("linear_ln.cfg").to_str().unwrap(),
            "--gain",
            "gamma2=2*s",
            "--gain",
            "beta=2*s*exp(-t)",
            "--budget",
            "300",
            "--horizon",
            "2",
            "--dt",
            "0.01",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // replacing the dynamics turns the escape artist into a decay system
    let out2 = run(
        &[
            "simulate",
            bench_cfg("xdot_u2.cfg").to_str().unwrap(),
            "--dynamics",
            "-x1 + u1",
            "--output",
            "x1",
            "--xi",
            "1",
            "--horizon",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&out2), 0, "{}", String::from_utf8_lossy(&out2.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let x1: f64 = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((x1 - (-1.0f64).exp()).abs() < 1e-6, "x(1) = {x1}");
}

#[test]
fn jobs_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .args([
            "check-iioss",
            bench_cfg("linear_ln.cfg").to_str().unwrap(),
            "--horizon",
            "1",
        ])
        .arg("--out-dir")
        .arg(dir.path())
        .env("IIOSS_LAB_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn list_benchmarks_prints_the_registry() {
    let out = Command::new(bin()).arg("list-benchmarks").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "xdot_u2",
        "scalar_iiss",
        "linear_detectable_2d",
        "passive_scalar",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}
