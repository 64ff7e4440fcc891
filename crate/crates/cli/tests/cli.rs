use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bandedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandedge")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

/// Rows of a band CSV, header dropped.
fn csv_rows(out: &Output) -> Vec<Vec<f64>> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("k1,k2,lambda_0"));
    lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

const FREE: &str = r#"{"model": "plane_wave", "e_cut": 60.0, "n_bands": 3, "grid": [9, 9]}"#;
const CHECKERBOARD: &str = "model = \"checkerboard\"\ngrid = [201, 201]\n[checkerboard]\nv0 = 1.0\nv1 = -1.0\n";

#[test]
fn free_operator_bottom_is_zero_at_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "free.json", FREE);
    let rows = csv_rows(&bandedge(&["bands", "-c", &cfg]));
    assert_eq!(rows.len(), 81);
    assert_eq!(&rows[0][..3], &[0.0, 0.0, 0.0]);
    assert!(rows.iter().all(|r| r[2] >= 0.0));
}

#[test]
fn checkerboard_bands_match_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cb.toml", CHECKERBOARD);
    let rows = csv_rows(&bandedge(&["bands", "-c", &cfg]));
    let range = |j: usize| {
        let vals = rows.iter().map(|r| r[2 + j]);
        (vals.clone().fold(f64::INFINITY, f64::min), vals.fold(f64::NEG_INFINITY, f64::max))
    };
    let s17 = 17f64.sqrt();
    let ((a, b), (c, d)) = (range(0), range(1));
    for (got, want) in [(a, -s17), (b, -1.0), (c, 1.0), (d, s17)] {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("bad.json", "{\"model\": \"plane_wave\", "),
        ("unknown.json", r#"{"modle": "plane_wave"}"#),
        ("tol.json", r#"{"tolerances": {"edge_tol": -1.0}}"#),
        ("missing.json", r#"{"model": "doubled"}"#),
    ];
    for (name, text) in cases {
        let cfg = write(dir.path(), name, text);
        let out = bandedge(&["bands", "-c", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(bandedge(&["bands", "-c", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(bandedge(&["bands", "--grid", "7y"]).status.code(), Some(2));
    assert_eq!(bandedge(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cb.toml", &format!("{CHECKERBOARD}[edges]\ngap = 4\n"));
    assert_eq!(bandedge(&["edges", "-c", &cfg, "--grid", "21"]).status.code(), Some(3));
}

#[test]
fn edge_classifications() {
    let dir = tempfile::tempdir().unwrap();
    let cb = write(dir.path(), "cb.toml", &format!("{CHECKERBOARD}[edges]\ngap = 0\nside = \"lower\"\n"));
    let v = json_stdout(&bandedge(&["edges", "-c", &cb]));
    assert_eq!(v["version"], 1);
    assert_eq!(v["edge_set"]["classification"], "fails_B");

    let free = write(dir.path(), "free.json", FREE);
    let v = json_stdout(&bandedge(&["edges", "-c", &free]));
    assert_eq!(v["edge_set"]["classification"], "nondegenerate");
    assert_eq!(v["edge_set"]["points"].as_array().unwrap().len(), 1);

    let doubled = write(dir.path(), "d.toml", "model = \"doubled\"\n[doubled]\nv = 1.0\neps = 0.05\n[edges]\ngap = 0\n");
    let v = json_stdout(&bandedge(&["edges", "-c", &doubled]));
    assert_eq!(v["edge_set"]["classification"], "nondegenerate");
}

#[test]
fn zcheck_agrees_for_a_cosine_potential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "trig.json",
        r#"{
          "potential": {"coeffs": [{"m": [1, 0], "re": 1.0, "im": 0.0}, {"m": [-1, 0], "re": 1.0, "im": 0.0}]},
          "e_cut": 120.0,
          "zcheck": {"k": [0.3, 0.2], "shift": {"mu": [1, 0], "p_num": 1, "p_den": 6}}
        }"#,
    );
    let v = json_stdout(&bandedge(&["zcheck", "-c", &cfg]));
    assert_eq!(v["fit"]["agrees"], true);
    assert!(v["fit"]["relative_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn remove_checkerboard_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cb.toml", &format!("{CHECKERBOARD}[remove]\nbudget = 0.1\n"));
    let v = json_stdout(&bandedge(&["remove", "-c", &cfg]));
    assert_eq!(v["version"], 1);
    assert_eq!(v["outcome"], "nondegenerate");
    assert_eq!(v["rounds"].as_array().unwrap().len(), 1);
    assert_eq!(v["model"]["kind"], "doubled");
}

#[test]
fn discrete_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.toml", "model = \"doubled\"\n[doubled]\nv = 1.0\neps = 0.05\n");
    let v = json_stdout(&bandedge(&["discrete", "-c", &d]));
    assert_eq!(v["upper_band_minimum"]["passed"], true);
    let n = write(dir.path(), "n.json", r#"{"model": "nsite", "nsite": {"v": [0.0, 3.0, 4.0]}, "grid": [40, 40]}"#);
    let v = json_stdout(&bandedge(&["discrete", "-c", &n]));
    assert!(v["bands"][0][1].as_f64().unwrap().abs() < 1e-12);
    assert!(v["constraint_warning"].is_null());
}

#[test]
fn outputs_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cb.toml", CHECKERBOARD);
    let runs: Vec<Vec<u8>> = ["1", "3", "3"]
        .iter()
        .map(|w| {
            let out = bandedge(&["edges", "-c", &cfg, "--grid", "61", "--workers", w]);
            assert!(out.status.success());
            out.stdout
        })
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn out_directory_receives_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "free.json", FREE);
    let out_dir = dir.path().join("out");
    let out = bandedge(&["bands", "-c", &cfg, "--grid", "5x4", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(out_dir.join("bands.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("bands.json")).unwrap()).unwrap();
    assert_eq!(v["bands"]["dims"], serde_json::json!([5, 4]));
}
