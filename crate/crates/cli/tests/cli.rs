use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualsched::config::{EXPERIMENT_A, EXPERIMENT_B};
use serde_json::{json, Value};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsched")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, name: &str, base: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut doc: Value = serde_json::from_str(base).unwrap();
    edit(&mut doc);
    let path = dir.join(name);
    fs::write(&path, doc.to_string()).unwrap();
    path
}

fn small_a(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    write_config(dir, "a.json", EXPERIMENT_A, |d| {
        d["model"]["q0_max"] = 5.into();
        d["model"]["q1_max"] = 2.into();
        d["sim"] = json!({ "horizon": 300000, "warmup": 10000, "seed": 7, "replications": 2, "info": "full_csi" });
        edit(d);
    })
}

fn small_b(dir: &Path) -> PathBuf {
    write_config(dir, "b.json", EXPERIMENT_B, |d| {
        d["learning"]["steps"] = 300_000.into();
        d["learning"]["log_window"] = 50_000.into();
        d["sim"] = json!({ "horizon": 300000, "warmup": 10000, "seed": 23, "replications": 3, "info": "large_scale_csi" });
        d["sweep"]["thetas"] = json!([1, 2, 3]);
        d["sweep"]["tuning_replications"] = 2.into();
    })
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_policy_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = small_a(dir.path(), |_| {});
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in ["policy.csv", "lp_policy.csv", "values.csv", "occupation.csv", "state_legend.csv", "recurrent.json", "checks_solve.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest = read_json(out.join("manifest_solve.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seeds"]["sim"], 7);
    let checks = read_json(out.join("checks_solve.json"));
    assert!(checks.as_array().unwrap().iter().any(|c| c["name"] == "rvi_lp_agreement" && c["passed"] == true));
}

#[test]
fn failed_check_sets_exit_code_and_reaches_the_report() {
    let dir = TempDir::new().unwrap();
    // a loose value iteration cannot meet a tight agreement tolerance
    let cfg = small_a(dir.path(), |d| {
        d["solver"]["rvi"]["tol"] = 1e-2.into();
        d["solver"]["agreement_tol"] = 1e-14.into();
    });
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(out.join("diagnostic.json").exists());

    let r = run(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 1, "{}", text(&r));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    let line = md.lines().find(|l| l.contains("rvi_lp_agreement")).expect("check listed in report");
    assert!(line.contains("FAIL"), "{line}");
}

#[test]
fn report_without_checks_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("checks_solve.json"), "{}", text(&o));
}

#[test]
fn invalid_configs_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    let negative = write_config(dir.path(), "neg.json", EXPERIMENT_B, |d| d["model"]["lambda"] = (-1.0).into());
    let out = dir.path().join("out");
    for cfg in [&broken, &negative] {
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{}", text(&o));
    }
    let o = run(&["simulate", "--policy", "threshold:0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = run(&["solve", "--replications", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn learned_table_can_be_simulated() {
    let dir = TempDir::new().unwrap();
    let cfg = small_b(dir.path());
    let out = dir.path().join("out");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let o = run(&["learn", "--config", cfg, "--out", out_s, "--rate", "18"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in ["qtable.json", "convergence.csv", "learned_policy.csv", "learn_summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let spec = format!("qtable:{}", out.join("qtable.json").display());
    let o = run(&["simulate", "--config", cfg, "--out", out_s, "--policy", &spec]);
    assert!(out.join("metrics.csv").exists(), "{}", text(&o));
    let checks = read_json(out.join("checks_simulate.json"));
    assert!(!checks.as_array().unwrap().is_empty());
}

#[test]
fn sweep_writes_comparisons_and_reuses_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = small_b(dir.path());
    let out = dir.path().join("out");
    let args = ["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--rates", "14,19"];
    let first = run(&args);
    assert!(matches!(code(&first), 0 | 1), "{}", text(&first));
    for f in ["comparison.csv", "sweep.csv", "theta_tuning.csv", "channel_stats.json", "qtable_rate_14.json", "qtable_rate_19.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let checks = read_json(out.join("checks_sweep.json"));
    let channel = checks.as_array().unwrap().iter().find(|c| c["name"] == "channel_mean_departure").unwrap();
    assert_eq!(channel["passed"], true);
    let comparison = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(comparison.lines().count(), 3);

    let second = run(&args);
    let log = text(&second);
    assert!(log.contains("rate 14: reusing") && log.contains("rate 19: reusing"), "{log}");
    assert_eq!(fs::read_to_string(out.join("comparison.csv")).unwrap(), comparison);
}

#[test]
fn simulation_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = small_b(dir.path());
    let metrics = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--policy", "threshold:3", "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", text(&o));
        fs::read_to_string(out.join("replications.csv")).unwrap()
    };
    let a = metrics("a", "5");
    assert_eq!(a, metrics("b", "5"));
    assert_ne!(a, metrics("c", "6"));
}
