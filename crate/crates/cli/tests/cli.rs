use std::path::Path;

use assert_cmd::Command;

fn fkneq(out: &Path) -> Command {
    let mut c = Command::cargo_bin("fkneq").unwrap();
    c.env("RUST_LOG", "warn").arg("--out").arg(out);
    c
}

/// Small driven run: three time units past a switch-on at 1.
const TINY: &[&str] = &[
    "--u", "1", "--e", "0.5", "--temperature", "0.5", "--t-max", "3", "--dt", "0.1",
    "--set", "field.t_on=1.0",
    "--set", "contour.n_tau=12",
    "--set", "quadrature={kind=\"gauss_hermite\", order=6}",
    "--set", "bridge.t_patch=2.0",
    "--set", "bridge.t_fit_start=1.5",
    "--set", "bridge.t_max_new=4.0",
    "--set", "bridge.spread_limit=0.5",
];

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_prints_the_effective_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = fkneq(dir.path()).args(["--u", "2.5", "--set", "bridge.t_patch=10", "config"]).output().unwrap();
    assert!(o.status.success());
    let cfg = fkneq_core::config::RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.model.u, 2.5);
    assert_eq!(cfg.bridge.t_patch, Some(10.0));
    assert_eq!(cfg.output.dir, dir.path());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nnonsense = 1\n").unwrap();
    fkneq(dir.path()).arg("--config").arg(&bad).arg("config").assert().code(2);
    fkneq(dir.path()).arg("--config").arg(dir.path().join("missing.toml")).arg("transient").assert().code(2);
    fkneq(dir.path()).args(["--dt", "0.3", "config"]).assert().code(2);
    fkneq(dir.path()).args(["--set", "novalue", "config"]).assert().code(2);
    // nothing stored yet
    fkneq(dir.path()).arg("verify").assert().code(2);
}

#[test]
fn unconverged_run_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fkneq(dir.path()).args(TINY).args(["--set", "scf.max_iter=1", "transient"]).assert().code(3);
}

#[test]
fn end_to_end_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = fkneq(dir.path()).args(TINY).arg("transient").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(records[0]["dt"], 0.1);
    assert!(dir.path().join("observables_dt0.1.csv").exists());

    // the density check is failed at this coarse step, so verify reports failure
    let o = fkneq(dir.path()).args(TINY).arg("verify").output().unwrap();
    let text = stdout(&o);
    assert!(text.contains("PASS dt=0.1 causality_sigma"), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS") || l.starts_with("FAIL")));
    assert_eq!(o.status.code(), Some(if text.contains("FAIL") { 1 } else { 0 }));

    // a patch where the mixed self-energy is still large is refused
    fkneq(dir.path()).args(TINY).args(["--set", "bridge.mixed_limit=0.0", "bridge"]).assert().code(4);
    let o = fkneq(dir.path()).args(TINY).args(["--set", "bridge.mixed_limit=1.0", "bridge"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["t_patch"], 2.0);
    assert!(dir.path().join("bridge.csv").exists());
}
