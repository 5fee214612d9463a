use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gendyne(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gendyne"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SHORT: [&str; 6] = ["--t-final", "0.2", "--dim", "20", "--seed", "7"];

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.csv", "b.csv"] {
        let o = gendyne(dir.path(), &[&["trajectory", "--engine", "fock", "--out", out][..], &SHORT].concat());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let (header, rows) = read_csv(&dir.path().join("a.csv"));
    assert_eq!(header, ["t", "dw1", "dw2", "theta1", "theta2", "mean_q", "mean_p", "var_q", "var_p", "cov_qp", "trace_err"]);
    assert_eq!(rows.len(), 200);
}

#[test]
fn homodyne_record_leaves_theta2_empty() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &[&["trajectory", "--upsilon", "1", "--out", "h.csv"][..], &SHORT].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for engine in ["fock", "gaussian"] {
        let (_, rows) = read_csv(&dir.path().join(format!("h.{engine}.csv")));
        assert!(rows.iter().all(|r| r[4].is_empty() && !r[3].is_empty()));
    }
}

#[test]
fn both_engines_share_noise_and_write_a_diff() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &[&["trajectory", "--upsilon", "-0.4", "--out", "run.csv"][..], &SHORT].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, f) = read_csv(&dir.path().join("run.fock.csv"));
    let (_, g) = read_csv(&dir.path().join("run.gaussian.csv"));
    assert_eq!(f.len(), g.len());
    for (a, b) in f.iter().zip(&g) {
        assert_eq!(a[..3], b[..3]);
    }
    let diff = json(&dir.path().join("run.diff.json"));
    assert_eq!(diff["shared_noise"], Value::Bool(true));
    assert!(diff["max_abs"]["mean_q"].as_f64().unwrap() < 0.05);
    assert!(!dir.path().join("run.csv").exists());
}

#[test]
fn manifest_reruns_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &[&["trajectory", "--stepper", "milstein", "--out", "first/run.csv"][..], &SHORT].concat());
    assert_eq!(code(&o), 0);
    let manifest = json(&dir.path().join("first/run.manifest.json"));
    assert_eq!(manifest["config"]["seed"], 7);
    assert_eq!(manifest["config"]["stepper"], "milstein");
    assert_eq!(manifest["core_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    let o = gendyne(dir.path(), &["rerun", "first/run.manifest.json", "--out", "second/run.csv", "--verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["run.fock.csv", "run.gaussian.csv", "run.diff.json"] {
        assert_eq!(fs::read(dir.path().join("first").join(name)).unwrap(), fs::read(dir.path().join("second").join(name)).unwrap());
    }
}

#[test]
fn tampered_output_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &[&["trajectory", "--engine", "gaussian", "--out", "g.csv"][..], &SHORT].concat());
    assert_eq!(code(&o), 0);
    let path = dir.path().join("g.manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut m: Value = serde_json::from_str(&text).unwrap();
    m["outputs"][0]["sha256"] = Value::String("0".repeat(64));
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let o = gendyne(dir.path(), &["rerun", "g.manifest.json", "--out", "again.csv", "--verify"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn povm_audit_passes_with_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &["povm-audit", "--upsilon", "0.5", "--n-bath", "1", "--dim", "15", "--out", "audit.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("audit.json"));
    assert_eq!(report["pass"], Value::Bool(true));
    let checks = report["checks"].as_array().unwrap();
    let completeness = checks.iter().find(|c| c["name"] == "completeness").unwrap();
    assert!(completeness["value"].as_f64().unwrap() < 1e-3);
    assert_eq!(completeness["tolerance"].as_f64().unwrap(), 1e-3);
    assert!(checks.iter().any(|c| c["name"] == "outcome_covariance"));
    assert!(dir.path().join("audit.manifest.json").exists());
}

#[test]
fn heterodyne_audit_checks_the_husimi_law() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &["povm-audit", "--upsilon", "0", "--dim", "10", "--out", "q.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("q.json"));
    let husimi = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "husimi_law").unwrap().clone();
    assert_eq!(husimi["pass"], Value::Bool(true));
}

#[test]
fn homodyne_audit_uses_the_quadrature_branch() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &["povm-audit", "--upsilon=-1", "--dim", "12", "--format", "csv", "--out", "h.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("h.csv"));
    assert!(rows.iter().all(|r| r[3] == "PASS"));
}

#[test]
fn out_of_range_upsilon_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &["povm-audit", "--upsilon", "1.5"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("upsilon"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gendyne(dir.path(), &["trajectory", "--no-such-flag"])), 1);
    assert_eq!(code(&gendyne(dir.path(), &["trajectory", "--dt", "0.5"])), 1);
    assert_eq!(code(&gendyne(dir.path(), &["trajectory", "--init", "fock:2", "--engine", "gaussian"])), 1);
    assert_eq!(code(&gendyne(dir.path(), &["trajectory", "--upsilon", "0.1,0.2"])), 1);
    assert_eq!(code(&gendyne(dir.path(), &["rerun", "missing.json"])), 3);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), b"").unwrap();
    let o = gendyne(dir.path(), &[&["trajectory", "--engine", "gaussian", "--out", "blocker/run.csv"][..], &SHORT].concat());
    assert_eq!(code(&o), 3);
}

#[test]
fn steady_scan_is_sorted_and_not_saturated() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "steady-scan", "--upsilon", "0.9,-0.5,0,-0.9,0.5", "--n-bath", "1", "--engine", "gaussian", "--t-final", "16", "--burn-in", "10", "--n-traj", "4", "--out",
        "scan.csv",
    ];
    let o = gendyne(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("scan.csv"));
    assert_eq!(header[0], "upsilon");
    let us: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(us, [-0.9, -0.5, 0.0, 0.5, 0.9]);
    for r in &rows {
        let var: f64 = r[2].parse().unwrap();
        assert!((var - 3.0).abs() < 0.15, "{r:?}");
        assert_eq!(r[9].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(r[10], "NOT saturated");
    }
    let first = fs::read(dir.path().join("scan.csv")).unwrap();
    assert_eq!(code(&gendyne(dir.path(), &args)), 0);
    assert_eq!(first, fs::read(dir.path().join("scan.csv")).unwrap());
}

#[test]
fn zero_temperature_heterodyne_steady_state_is_the_vacuum() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(
        dir.path(),
        &["steady-scan", "--upsilon", "0", "--n-bath", "0", "--t-final", "3", "--dim", "20", "--n-traj", "2", "--out", "v.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("v.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let var: f64 = r[2].parse().unwrap();
        assert!((var - 1.0).abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn scheme_commands_report_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(dir.path(), &["scheme-check", "--upsilon", "0.5", "--theta", "1,-0.5", "--out", "sc.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("sc.json"));
    assert_eq!(report["transmissivity"].as_f64().unwrap(), 0.75);
    assert_eq!(report["points"].as_array().unwrap().len(), 1);

    let o = gendyne(dir.path(), &["scheme-sample", "--upsilon", "1", "--n-traj", "500", "--out", "s.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("s.csv"));
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r[1].is_empty()));
    assert_eq!(json(&dir.path().join("s.summary.json"))["pass"], Value::Bool(true));
}

#[test]
fn ensemble_json_rows_carry_error_bars() {
    let dir = tempfile::tempdir().unwrap();
    let o = gendyne(
        dir.path(),
        &["ensemble", "--engine", "gaussian", "--t-final", "0.5", "--n-traj", "8", "--sample-every", "100", "--format", "json", "--out", "e.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&dir.path().join("e.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["mean_q"].as_f64().unwrap(), 2.0);
    assert!(rows[5]["mean_q_se"].as_f64().unwrap() > 0.0);
}
