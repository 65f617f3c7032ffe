use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const COUPLED: &str = r#"{"family":"gaussian","precision":[6,3,3,2]}"#;
const RIDGE: &str = r#"{"family":"ridge","alpha":0.75}"#;

fn zigzag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zigzag")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn ridge_sample_has_no_switches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ridge.csv");
    let o = zigzag(&[
        "sample",
        "--target",
        RIDGE,
        "--T",
        "1000",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "t,i,x1,x2,th1,th2\n0,0,0,0,1,1\n1000,0,1000,1000,1,1\n"
    );

    let manifest = read_json(&out.with_extension("manifest.json"));
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"][0]["file"], "ridge.csv");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn exact_method_rejects_non_gaussian_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = zigzag(&[
        "sample",
        "--target",
        RIDGE,
        "--T",
        "10",
        "--method",
        "exact",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn reach_on_the_coupled_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.json");
    let o = zigzag(&[
        "reach",
        "--target",
        COUPLED,
        "--from-x",
        "-2,1",
        "--from-theta",
        "1,-1",
        "--to-x",
        "3,-4",
        "--to-theta",
        "-1,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.with_extension("report.json"));
    assert_eq!(report["admissible"], true);
    assert!(report["min_rate"].as_f64().unwrap() > 0.0);
    assert!(report["endpoint_error"].as_f64().unwrap() < 1e-8);

    // The control file round-trips through --control.
    let check = dir.path().join("check.json");
    let o = zigzag(&[
        "reach",
        "--target",
        COUPLED,
        "--from-x",
        "-2,1",
        "--from-theta",
        "1,-1",
        "--control",
        out.to_str().unwrap(),
        "--out",
        check.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = read_json(&check.with_extension("report.json"));
    assert_eq!(again["admissible"], true);
    assert_eq!(again["endpoint"], report["endpoint"]);
}

#[test]
fn reach_between_identical_states_is_a_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loop.json");
    let o = zigzag(&[
        "reach",
        "--target",
        COUPLED,
        "--from-x",
        "1,1",
        "--from-theta",
        "1,1",
        "--to-x",
        "1,1",
        "--to-theta",
        "1,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.with_extension("report.json"));
    assert_eq!(report["admissible"], true);
    assert!(report["num_switches"].as_u64().unwrap() > 0);
    assert!(report["total_time"].as_f64().unwrap() > 0.0);
}

#[test]
fn singular_precision_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.json");
    let o = zigzag(&[
        "reach",
        "--target",
        r#"{"family":"gaussian","precision":[1,1,1,1]}"#,
        "--from-x",
        "0,0",
        "--from-theta",
        "1,1",
        "--to-x",
        "1,1",
        "--to-theta",
        "1,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn drift_on_power_law_finds_a_margin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drift.json");
    let o = zigzag(&[
        "drift",
        "--target",
        r#"{"family":"powerlaw","alpha":2,"dim":2}"#,
        "--n-radial",
        "8",
        "--n-angular",
        "32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&out);
    assert!(s["epsilon"].as_f64().unwrap() > 0.0);
    assert_eq!(s["bound_holds"], true);
    let grid = fs::read_to_string(out.with_extension("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 8 * 32 * 4);
}

#[test]
fn drift_on_ridge_has_no_margin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("drift.json");
    let o = zigzag(&["drift", "--target", RIDGE, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read_json(&out)["epsilon"].is_null());
}

#[test]
fn growth_flags_linear_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let o = zigzag(&[
        "growth",
        "--target",
        r#"{"family":"powerlaw","alpha":1,"dim":2}"#,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&out)["gc3_consistent"], false);

    let o = zigzag(&[
        "growth",
        "--target",
        r#"{"family":"powerlaw","alpha":2,"dim":2}"#,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&out)["gc3_consistent"], true);
}

#[test]
fn estimate_interval_covers_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.json");
    let o = zigzag(&[
        "estimate",
        "--target",
        r#"{"family":"gaussian","precision":[1]}"#,
        "--T",
        "1e4",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out);
    let r = &v["replicates"][0]["result"];
    assert!(
        r["ci_low"].as_f64().unwrap() < 0.0 && r["ci_high"].as_f64().unwrap() > 0.0,
        "{r}"
    );
    assert!(out.with_extension("replicates.csv").exists());
}

#[test]
fn estimate_rejects_bad_expression() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("est.json");
    let o = zigzag(&[
        "estimate",
        "--target",
        COUPLED,
        "--T",
        "10",
        "--g",
        "x3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x3"));
}

#[test]
fn overflowing_start_is_a_numerical_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = zigzag(&[
        "sample",
        "--target",
        r#"{"family":"powerlaw","alpha":4,"dim":1}"#,
        "--T",
        "10",
        "--init",
        "1e200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn config_errors_carry_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.json");
    fs::write(
        &cfg,
        "{\n  \"family\": \"ridge\",\n  \"alpha\": 0.5,\n  \"beta\": 1\n}\n",
    )
    .unwrap();
    let out = dir.path().join("x.csv");
    let o = zigzag(&[
        "sample",
        "--target",
        cfg.to_str().unwrap(),
        "--T",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    fs::write(&cfg, "{\n  \"family\": \"ridge\",\n  \"alpha\": 0.5,\n").unwrap();
    let o = zigzag(&[
        "sample",
        "--target",
        cfg.to_str().unwrap(),
        "--T",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}
