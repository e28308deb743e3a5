use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DEFAULT: &str = include_str!("../../../configs/default.toml");

/// The shipped config shrunk so each invocation takes a fraction of a second.
fn small_config() -> String {
    DEFAULT
        .replace("n_interior = 127", "n_interior = 31")
        .replace("n_scenarios = 16", "n_scenarios = 4")
        .replace(
            "gammas = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]",
            "gammas = [1.0, 10.0, 100.0, 1e3, 1e4]",
        )
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn riskpath(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_riskpath"));
    c.args(args).env_remove("RISKPATH_OUT_DIR");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_in(dir: &Path) -> PathBuf {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .expect("path table written")
}

#[test]
fn solve_writes_reports() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("out");
    let o = run(&mut riskpath(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--gamma", "100"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["solve_summary.json", "kkt_report.json", "iterations.log"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let kkt: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("kkt_report.json")).unwrap()).unwrap();
    assert_eq!(kkt["schema"], "riskpath-kkt/1");
    assert_eq!(kkt["gamma"], 100.0);
}

#[test]
fn invalid_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config().replace("tikhonov = 1e-3", "tikhonov = -1.0"));
    let o = run(&mut riskpath(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("problem.tikhonov"), "{}", stderr(&o));
}

#[test]
fn unknown_key_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config().replace("tol_feas = 1e-9", "tol_feas = 1e-9\nbogus = 3"));
    let o = run(&mut riskpath(&["path", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn decreasing_schedule_rejected() {
    let tmp = TempDir::new().unwrap();
    let body = small_config().replace("gammas = [1.0, 10.0, 100.0, 1e3, 1e4]", "gammas = [10.0, 1.0]");
    let cfg = write_config(tmp.path(), &body);
    let o = run(&mut riskpath(&["path", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("path.gammas"), "{}", stderr(&o));
}

#[test]
fn path_is_reproducible_across_threads() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = run(&mut riskpath(&["path", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&mut riskpath(&["path", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "4"]));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ca = csv_in(&a);
    let cb = csv_in(&b);
    assert_eq!(ca.file_name(), cb.file_name());
    assert_eq!(std::fs::read(&ca).unwrap(), std::fs::read(&cb).unwrap());
    assert_eq!(
        std::fs::read(a.join("path_summary.json")).unwrap(),
        std::fs::read(b.join("path_summary.json")).unwrap()
    );
}

#[test]
fn env_sets_output_dir() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let env_out = tmp.path().join("from-env");
    let o = run(&mut riskpath(&["solve", "--config", cfg.to_str().unwrap(), "--gamma", "10"]).env("RISKPATH_OUT_DIR", &env_out));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env_out.join("solve_summary.json").is_file());

    // --out wins over the environment
    let flag_out = tmp.path().join("from-flag");
    let o = run(&mut riskpath(&["solve", "--config", cfg.to_str().unwrap(), "--gamma", "10", "--out", flag_out.to_str().unwrap()])
        .env("RISKPATH_OUT_DIR", tmp.path().join("unused")));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(flag_out.join("solve_summary.json").is_file());
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn verify_passes_and_catches_fault() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let out = tmp.path().join("ok");
    let o = run(&mut riskpath(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("verify_report.json").is_file());

    let out = tmp.path().join("fault");
    let o = run(&mut riskpath(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--inject-fault",
        "flip-adjoint-sign",
    ]));
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradient.adjoint"));
}
