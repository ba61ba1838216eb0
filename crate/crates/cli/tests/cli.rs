use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn ccplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccplan"))
        .args(args)
        .env_remove("CCPLAN_BACKEND")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn plan(name: &str, out: &Path) -> Output {
    ccplan(&["plan", arg(&fixture(name)), "--out", arg(out)])
}

#[test]
fn plan_writes_a_certified_bundle() {
    let dir = TempDir::new().unwrap();
    let out = plan("exponential_cwh.json", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let solution = read_json(&dir.path().join("solution.json"));
    assert_eq!(solution["certified"], Value::Bool(true));
    assert!(solution["cost"].as_f64().unwrap() > 0.0);
    assert_eq!(solution["bound"], "vp");

    let meta = read_json(&dir.path().join("metadata.json"));
    assert_eq!(meta["scenario_hash"], solution["scenario_hash"]);
    assert_eq!(meta["seed"], 2024);

    let mut reader = csv::Reader::from_path(dir.path().join("trajectories.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["vehicle", "k", "x", "y", "vx", "vy"]);
    assert_eq!(reader.records().count(), 3 * 9);
}

#[test]
fn plan_is_byte_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    plan("exponential_cwh.json", a.path());
    plan("exponential_cwh.json", b.path());
    let read = |d: &TempDir| fs::read(d.path().join("solution.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn gaussian_fixture_plans_and_passes_every_check() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("gaussian_los.json");
    assert_eq!(plan("gaussian_los.json", dir.path()).status.code(), Some(0));
    let solution = dir.path().join("solution.json");
    let v = ccplan(&["validate", arg(&scenario), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(v.status.code(), Some(0));
    let report = read_json(&dir.path().join("satisfaction.json"));
    assert!(report["target"]["probability"].as_f64().unwrap() >= 0.95);

    let u = ccplan(&["unimodal-check", arg(&scenario), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(u.status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("unimodality.json"))["all_unimodal"], true);
}

#[test]
fn validate_and_unimodal_check_on_the_exponential_plan() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("exponential_cwh.json");
    plan("exponential_cwh.json", dir.path());
    let solution = dir.path().join("solution.json");

    let v = ccplan(&["validate", arg(&scenario), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(v.status.code(), Some(0));
    let report = read_json(&dir.path().join("satisfaction.json"));
    assert!(report["target"]["probability"].as_f64().unwrap() >= 0.925);
    assert!(report["collision"]["probability"].as_f64().unwrap() >= 0.925);
    assert_eq!(report["samples"], 10_000);

    let u = ccplan(&["unimodal-check", arg(&scenario), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(u.status.code(), Some(0));
    let rows = read_json(&dir.path().join("unimodality.json"));
    let collision = rows["rows"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["group"] == "collision")
        .collect::<Vec<_>>();
    assert_eq!(collision.len(), 24);
    assert!(collision.iter().all(|r| r["unimodal"] == true));
}

#[test]
fn small_sample_validation_warns() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("gaussian_los.json");
    plan("gaussian_los.json", dir.path());
    let solution = dir.path().join("solution.json");
    let v = ccplan(&[
        "validate",
        arg(&scenario),
        arg(&solution),
        "--samples",
        "10",
        "--out",
        arg(dir.path()),
    ]);
    let stdout = String::from_utf8_lossy(&v.stdout);
    assert!(stdout.contains("too few"), "{stdout}");
    assert_eq!(read_json(&dir.path().join("satisfaction.json"))["wide_interval"], true);
}

#[test]
fn bimodal_disturbance_fails_the_unimodality_check() {
    let dir = TempDir::new().unwrap();
    let scenario = fixture("bimodal_line.json");
    assert_eq!(plan("bimodal_line.json", dir.path()).status.code(), Some(0));
    let solution = dir.path().join("solution.json");
    let u = ccplan(&["unimodal-check", arg(&scenario), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(u.status.code(), Some(2));
    assert_eq!(read_json(&dir.path().join("unimodality.json"))["all_unimodal"], false);
}

#[test]
fn compare_writes_both_rows() {
    let dir = TempDir::new().unwrap();
    let c = ccplan(&["compare", arg(&fixture("exponential_cwh.json")), "--out", arg(dir.path())]);
    assert_eq!(c.status.code(), Some(0), "{}", String::from_utf8_lossy(&c.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("comparison.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][col("method")], "vp");
    assert_eq!(&rows[1][col("method")], "cantelli");
    let cost = |r: &csv::StringRecord| r[col("cost")].parse::<f64>().unwrap();
    assert!(cost(&rows[0]) <= cost(&rows[1]));
    for r in &rows {
        assert_eq!(&r[col("certified")], "true");
        assert!(r[col("target_satisfaction")].parse::<f64>().unwrap() >= 0.925);
        assert!(r[col("collision_satisfaction")].parse::<f64>().unwrap() >= 0.925);
    }
    assert!(dir.path().join("solution_vp.json").exists());
    assert!(dir.path().join("solution_cantelli.json").exists());
}

#[test]
fn out_of_range_threshold_exits_with_the_restriction() {
    let dir = TempDir::new().unwrap();
    let mut doc = read_json(&fixture("gaussian_los.json"));
    doc["thresholds"]["alpha"] = 0.3.into();
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = ccplan(&["plan", arg(&path), "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("(0, 1/6)"), "{stderr}");
}

#[test]
fn unknown_key_is_reported_with_its_path() {
    let dir = TempDir::new().unwrap();
    let mut doc = read_json(&fixture("gaussian_los.json"));
    doc["vehicles"][0]["colour"] = "red".into();
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = ccplan(&["plan", arg(&path), "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("vehicles[0]") && stderr.contains("colour"), "{stderr}");
}

#[test]
fn mismatched_or_corrupt_solution_exits_one() {
    let dir = TempDir::new().unwrap();
    plan("gaussian_los.json", dir.path());
    let solution = dir.path().join("solution.json");
    let other = fixture("exponential_cwh.json");
    let v = ccplan(&["validate", arg(&other), arg(&solution), "--out", arg(dir.path())]);
    assert_eq!(v.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&v.stderr).contains("hash"));

    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, "{\"inputs\": [").unwrap();
    let scenario = fixture("gaussian_los.json");
    let v = ccplan(&["validate", arg(&scenario), arg(&corrupt), "--out", arg(dir.path())]);
    assert_eq!(v.status.code(), Some(1));
}

#[test]
fn unreachable_target_exits_one() {
    let dir = TempDir::new().unwrap();
    let mut doc = read_json(&fixture("gaussian_los.json"));
    doc["inputs"]["lower"] = serde_json::json!([-1e-4, -1e-4]);
    doc["inputs"]["upper"] = serde_json::json!([1e-4, 1e-4]);
    let path = dir.path().join("tight.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = ccplan(&["plan", arg(&path), "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn iteration_cap_exits_two() {
    let dir = TempDir::new().unwrap();
    let mut doc = read_json(&fixture("exponential_cwh.json"));
    doc["ccp"] = serde_json::json!({"max_iterations": 2});
    let path = dir.path().join("capped.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = ccplan(&["plan", arg(&path), "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(read_json(&dir.path().join("solution.json"))["certified"], false);
}

#[test]
fn unknown_backend_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = ccplan(&[
        "plan",
        arg(&fixture("gaussian_los.json")),
        "--backend",
        "nope",
        "--out",
        arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
