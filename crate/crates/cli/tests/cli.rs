use std::fs;
use std::path::Path;

use lsmtune_cli::run;
use serde_json::Value;
use tempfile::TempDir;

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("c.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn call(args: &[&str]) -> i32 {
    let mut v = vec!["lsmtune"];
    v.extend_from_slice(args);
    run(v)
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn robust_at_zero_radius_matches_nominal() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "workload": {"index": 7}, "family": "classic", "rho": 0.0}"#);
    assert_eq!(call(&["tune-nominal", "--config", &cfg, "--out", out]), 0);
    assert_eq!(call(&["tune-robust", "--config", &cfg, "--out", out]), 0);
    let n = read_json(dir.path().join("tune_nominal.json"));
    let r = read_json(dir.path().join("tune_robust.json"));
    let a = n["result"]["objective"].as_f64().unwrap();
    let b = r["result"]["tuning"]["nominal_cost"].as_f64().unwrap();
    assert!((a - b).abs() <= 0.01 * a);
    assert_eq!(n["config_hash"], r["config_hash"]);
    assert!(fs::read_to_string(dir.path().join("run.log")).unwrap().lines().count() == 2);
}

#[test]
fn identical_history_has_zero_rho() {
    let dir = TempDir::new().unwrap();
    let h = dir.path().join("h.csv");
    fs::write(&h, "z0,z1,q,w\n0.1,0.2,0.3,0.4\n0.1,0.2,0.3,0.4\n0.1,0.2,0.3,0.4\n").unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(call(&["estimate-rho", "--history", h.to_str().unwrap(), "--out", out]), 0);
    assert_eq!(read_json(dir.path().join("rho.json"))["result"]["rho"].as_f64().unwrap(), 0.0);
}

#[test]
fn bench_output_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = write_config(a.path(), r#"{"schema_version": 1, "bench": {"size": 300}}"#);
    for d in [&a, &b] {
        assert_eq!(call(&["bench-gen", "--config", &cfg, "--seed", "5", "--out", d.path().to_str().unwrap()]), 0);
    }
    let x = fs::read(a.path().join("bench.csv")).unwrap();
    let y = fs::read(b.path().join("bench.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert!(text.lines().next().unwrap().contains("seed=5"));
    assert_eq!(text.lines().count(), 302);
}

#[test]
fn sweep_rows_are_centers_times_rhos_times_bench() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "family": "classic", "bench": {"size": 100},
            "sweep": {"centers": [0, 7], "rhos": [0.5, 1.0, 2.0]}}"#,
    );
    let out = dir.path().to_str().unwrap();
    assert_eq!(call(&["evaluate-sweep", "--config", &cfg, "--out", out, "--parallelism", "2"]), 0);
    let records = fs::read_to_string(dir.path().join("sweep_records.csv")).unwrap();
    // comment line + header + rows
    assert_eq!(records.lines().count(), 2 + 2 * 3 * 100);
    assert!(records.lines().nth(1).unwrap().starts_with("center_id,rho,z0,z1,q,w,kl"));
    let summary = fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + 6);
}

#[test]
fn drift_and_session_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "workload": {"index": 11}, "family": "classic", "rho": 1.0,
            "system": {"entries": 20000, "memory": "10 bpe"},
            "bench": {"size": 500},
            "drift": {"families": ["leveling", "tiering"], "rho": 2.0},
            "session": {"category": "read", "workloads": 2, "queries_per_workload": 2000}}"#,
    );
    let out = dir.path().to_str().unwrap();
    assert_eq!(call(&["drift-experiment", "--config", &cfg, "--out", out]), 0);
    let drift = fs::read_to_string(dir.path().join("drift.csv")).unwrap();
    assert_eq!(drift.lines().count(), 2 + 3 * 20);
    assert_eq!(call(&["simulate-session", "--config", &cfg, "--out", out]), 0);
    let session = fs::read_to_string(dir.path().join("session.csv")).unwrap();
    let lines: Vec<&str> = session.lines().collect();
    assert!(lines[1].ends_with("delta,source"));
    assert_eq!(lines.len(), 2 + 2 * 2);
    assert!(lines[2].ends_with(",model") && lines[3].ends_with(",simulator"));
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = write_config(dir.path(), r#"{"schema_version": 9}"#);
    assert_eq!(call(&["tune-nominal", "--config", &bad, "--out", out]), 1);
    let no_workload = write_config(dir.path(), r#"{"schema_version": 1}"#);
    assert_eq!(call(&["tune-nominal", "--config", &no_workload, "--out", out]), 1);
    assert_eq!(call(&["tune-nominal", "--config", "/nonexistent/c.json", "--out", out]), 3);
    let empty_bounds = write_config(
        dir.path(),
        r#"{"schema_version": 1, "workload": {"index": 1}, "bounds": {"t_min": 50, "t_max": 10}}"#,
    );
    assert_eq!(call(&["tune-nominal", "--config", &empty_bounds, "--out", out]), 2);
    assert_eq!(call(&["no-such-command"]), 1);
    assert_eq!(call(&["tune-nominal", "--family", "monkey"]), 1);
}

#[test]
fn family_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "workload": {"inline": [0.49, 0.01, 0.01, 0.49]}}"#);
    assert_eq!(call(&["tune-nominal", "--config", &cfg, "--family", "tiering", "--out", out]), 0);
    let n = read_json(dir.path().join("tune_nominal.json"));
    assert_eq!(n["result"]["design"]["policy"]["kind"], "tiering");
    let stored = read_json(dir.path().join("config.json"));
    assert_eq!(stored["family"], "tiering");
}
