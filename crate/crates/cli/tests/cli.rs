use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const OU: &str = r#"[model]
name = "ou-gauss"
gamma = 1
sigma = 1
signal = "sin(2*pi*t/T)"
T = 1

[plan]
h = 0.01
K = 200
N = 40
seed = 7
scheme = "exact-ou"

[functional]
F = "x1"
"#;

fn pergo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pergo")).args(args).env_remove("PERGO_THREADS").output().expect("binary runs")
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.ini");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    pergo(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pearson_certificate_passes() {
    let cfg = "[model]\nname = \"pearson\"\ntheta = 1\nc0 = 1\nc1 = 0\nsignal = \"sin(2*pi*t)\"\n";
    let (dir, path) = setup(cfg);
    let out = dir.path().join("o");
    let o = run("check", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("check.json"));
    assert_eq!(doc["certificate"]["verdicts"]["overall"], Value::Bool(true));
    assert_eq!(doc["pass"], Value::Bool(true));
}

#[test]
fn gbm_certificate_fails_with_status_2() {
    let (dir, path) = setup("[model]\nname = \"gbm\"\nmu = -1\nsigma = 1\n");
    let out = dir.path().join("o");
    let o = run("check", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out.join("manifest.json"))["verdict"], "fail");
}

#[test]
fn ergodic_matches_analytic_limit() {
    let (dir, path) = setup(OU);
    let out = dir.path().join("o");
    let o = run("ergodic", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("ergodic.json"));
    assert!(doc["analytic"].as_f64().unwrap().abs() < 1e-9);
    let trace = fs::read_to_string(out.join("ergodic_trace.csv")).unwrap();
    assert!(trace.starts_with("path_id,t,A_t,A_t_over_t\n"));
    // one row per path and period end
    assert_eq!(trace.lines().count(), 1 + 40 * 200);
}

#[test]
fn invariant_test_accepts_exact_chain() {
    let (dir, path) = setup(OU);
    let out = dir.path().join("o");
    let o = run("invariant-test", &path, &out, &["--level", "0.05"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("invariant.json"));
    assert_eq!(doc["test"]["pass"], Value::Bool(true));
    assert!(out.join("kde.csv").exists());
    assert_eq!(json(&out.join("manifest.json"))["level"], 0.05);
}

#[test]
fn manifest_records_config_hash_and_artifacts() {
    let (dir, path) = setup(OU);
    let out = dir.path().join("o");
    assert_eq!(run("simulate", &path, &out, &["--seed", "99"]).status.code(), Some(0));
    let m = json(&out.join("manifest.json"));
    let digest: String = Sha256::digest(OU.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["config_sha256"], Value::String(digest));
    assert_eq!(m["seed"], 99);
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["file"].as_str().unwrap())).unwrap();
        let d: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(a["sha256"], Value::String(d));
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn artifacts_identical_across_threads_and_reruns() {
    let cfg = OU.replace("exact-ou", "em");
    let (dir, path) = setup(&cfg);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(run("report", &path, &a, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run("report", &path, &b, &["--threads", "4"]).status.code(), Some(0));
    assert_eq!(run("report", &path, &c, &["--threads", "4"]).status.code(), Some(0));
    let sa = snapshot(&a);
    assert!(sa.len() >= 9);
    assert!(sa == snapshot(&b), "thread count changed the artifacts");
    assert!(sa == snapshot(&c), "rerun changed the artifacts");
}

#[test]
fn malformed_config_reports_lines_and_exits_1() {
    let cfg = OU.replace("gamma = 1", "gamma = -1").replace("N = 40", "N = forty");
    let (dir, path) = setup(&cfg);
    let o = run("check", &path, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3:"), "{err}");
    assert!(err.contains("line 11:"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(pergo(&["frobnicate", "--config", "x.ini"]).status.code(), Some(1));
    assert_eq!(pergo(&["check"]).status.code(), Some(1));
    assert_eq!(pergo(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_file_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = run("check", &dir.path().join("absent.ini"), &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
}
