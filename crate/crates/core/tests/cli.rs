use std::path::Path;
use std::process::{Command, Output};

use frontier_lab::experiment::ExperimentConfig;

fn frontier_lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontier-lab"))
        .current_dir(dir)
        .env("FRONTIER_LAB_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn lambda_tail_columns_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["lambda-tail", "--t", "30", "--z", "2,3,4,5", "--replicas", "300", "--seed", "7", "--dt", "0.1"];
    let out = frontier_lab(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("lambda-tail.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("z,p_hat,stderr,ci_lo,ci_hi,shape"));
    assert_eq!(lines.count(), 4);

    let again = frontier_lab(dir.path(), &args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("lambda-tail.csv")).unwrap(), first);
}

#[test]
fn missing_t_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = frontier_lab(dir.path(), &["lambda-tail", "--z", "2,3", "--replicas", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t"));
    assert!(files(dir.path()).is_empty());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = frontier_lab(dir.path(), &["feller-validate", "--t", "0.5", "--start", "0.2", "--replicas", "500", "--seed", "3", "--out", "a.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(dir.path()), ["a.csv", "a.csv.manifest.json"]);

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["partial"], false);
    let mut config = ExperimentConfig::from_toml(manifest["config"].as_str().unwrap()).unwrap();
    config.out = Some("b.csv".into());
    std::fs::write(dir.path().join("b.toml"), config.to_toml().unwrap()).unwrap();
    let replay = frontier_lab(dir.path(), &["run", "--config", "b.toml"]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), std::fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "experiment = \"jaffuel-survival\"\nt_list = [1.0]\nreplicas = 50\n").unwrap();
    let out = frontier_lab(dir.path(), &["run", "--config", "c.toml", "--replicas", "80", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("s.csv.manifest.json")).unwrap();
    assert!(manifest.contains("replicas = 80"));
}

#[test]
fn validate_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = frontier_lab(dir.path(), &["validate", "--experiment", "lambda-tail", "--t", "30", "--z", "0.5", "--dt", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("dt"));
    assert!(text.contains("[1, a_c t^(1/3)/2]"));
    assert!(files(dir.path()).is_empty());

    let ok = frontier_lab(dir.path(), &["validate", "--experiment", "lambda-tail", "--t", "30", "--z", "2,3"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(ok.stdout.is_empty());
}

#[test]
fn population_cap_flags_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = frontier_lab(dir.path(), &["jaffuel-survival", "--t-list", "5", "--replicas", "20", "--population-cap", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("jaffuel-survival.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], true);
}

#[test]
fn json_nulls_non_finite_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = frontier_lab(dir.path(), &["lambda-location", "--t-list", "10", "--replicas", "40", "--dt", "1", "--margin", "0.1", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("lambda-location.json")).unwrap()).unwrap();
    assert_eq!(doc["columns"][0], "t");
    assert_eq!(doc["manifest"]["experiment"], "lambda-location");
    assert!(doc["rows"][0]["q3"].is_null());
}

#[test]
fn help_documents_columns_and_threads() {
    let out = frontier_lab(Path::new("."), &["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("z,p_hat,stderr,ci_lo,ci_hi,shape"));
    assert!(text.contains("FRONTIER_LAB_THREADS"));
}
