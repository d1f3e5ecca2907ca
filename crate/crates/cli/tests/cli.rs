use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bohmlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bohmlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(out.join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn bell_at_120_degrees() {
    let dir = tempfile::tempdir().unwrap();
    let o = bohmlab(&["bell", "--angles", "120"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path(), "bell");
    assert!((s["results"]["lhs"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(s["results"]["violated"], true);
    assert_eq!(s["results"]["certificate"]["feasible"], false);
    assert_eq!(s["command"], "bell");
    assert!(s["wall_time_s"].is_number());
    // stdout carries the same summary
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["results"], s["results"]);
}

#[test]
fn bell_at_zero_degrees_is_local() {
    let dir = tempfile::tempdir().unwrap();
    let o = bohmlab(&["bell", "--angles", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path(), "bell");
    assert!((s["results"]["lhs"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(s["results"]["certificate"]["feasible"], true);
}

#[test]
fn spin_up_always_reads_plus() {
    let dir = tempfile::tempdir().unwrap();
    let o = bohmlab(&["stern-gerlach", "--alpha2", "1.0", "--n", "100", "--seed", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path(), "stern-gerlach");
    let freqs = s["results"]["frequencies"].as_array().unwrap();
    assert_eq!(freqs.len(), 1);
    assert_eq!(freqs[0]["label"][0].as_f64(), Some(1.0));
    assert_eq!(freqs[0]["frequency"].as_f64(), Some(1.0));
}

#[test]
fn csv_has_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"moments": false}"#).unwrap();
    let o = bohmlab(&["stern-gerlach", "--n", "37", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.code().is_some_and(|c| c <= 1));
    let csv = std::fs::read_to_string(dir.path().join("stern-gerlach.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("trial,status,"));
    assert_eq!(lines.count(), 37);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"angle_deg": 120, "angel": 3}"#).unwrap();
    let o = bohmlab(&["bell", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("bell.json").exists());
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bohmlab(&["hardy", "--config", "/nonexistent/cfg.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = bohmlab(&["stern-gerlach", "--alpha2", "1.5", "--n", "10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"magnet": {"dt": 0.5}, "moments": false}"#).unwrap();
    let o = bohmlab(&["stern-gerlach", "--n", "10", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"product_states": 4, "grid": 8, "budget": 1}"#).unwrap();
    let o = bohmlab(&["hardy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(dir.path(), "hardy")["pass"], false);
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_s");
    v
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"moments": false}"#).unwrap();
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = bohmlab(
            &["stern-gerlach", "--n", "200", "--seed", "11", "--threads", threads, "--config", cfg.to_str().unwrap()],
            &out,
        );
        assert!(o.status.code().is_some_and(|c| c <= 1));
        let csv = std::fs::read_to_string(out.join("stern-gerlach.csv")).unwrap();
        runs.push((without_wall_time(summary(&out, "stern-gerlach")), csv));
    }
    assert_eq!(runs[0], runs[1]);
}
