use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn systems(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(name)
}

fn symplift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symplift")).args(args).output().expect("binary runs")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check `{name}` in {}", report["checks"]))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("symplift-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn analyze_the_triple() {
    let f = systems("triple.toml");
    let types = |system: &str| -> (bool, Value) {
        let o = symplift(&["analyze", f.to_str().unwrap(), "--system", system, "--point", "0,0,0,0"]);
        assert_eq!(o.status.code(), Some(0));
        let r = json(&o);
        let p = &r["result"]["systems"][0]["singular_points"][0];
        (p["verdict"] == "degenerate", p["williamson"].clone())
    };
    assert_eq!(types("F"), (false, serde_json::json!([2, 0, 0])));
    assert!(types("G").0);
    assert!(types("H").0);
}

#[test]
fn analyze_saddle_and_scan() {
    let f = systems("saddle.toml");
    let o = symplift(&["analyze", f.to_str().unwrap(), "--grid", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    let pts = r["result"]["systems"][0]["singular_points"].as_array().unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0]["williamson"], serde_json::json!([0, 1, 0]));
    assert_eq!(r["config"]["grid"], 3);
}

#[test]
fn empty_functions_block_is_a_located_error() {
    let p = tmp("empty.toml");
    std::fs::write(&p, "[chart]\nn = 1\n[functions]\n").unwrap();
    let o = symplift(&["analyze", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":3:1:") && err.contains("empty"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn lifts() {
    let f = systems("lifts.toml");
    let f = f.to_str().unwrap();
    let o = symplift(&["lift", f, "--action", "hyperbolic"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["result"]["lifted"][0], "exp(-t)*q");
    assert_eq!(r["result"]["lifted"][1], "exp(-t)^(-1)*p");
    assert_eq!(check(&r, "lift_lambda_pullback")["pass"], true);

    let r = json(&symplift(&["lift", f, "--action", "translation"]));
    assert_eq!(r["outcome"], "pass");
    let lifted = r["result"]["lifted"].as_array().unwrap();
    assert_eq!(lifted[2], "p1");
    assert_eq!(lifted[3], "p2");

    let o = symplift(&["lift", f, "--action", "hyperbolic", "--raw-map", "broken"]);
    assert_eq!(o.status.code(), Some(1));
    let r = json(&o);
    assert_eq!(r["outcome"], "fail");
    assert_eq!(check(&r, "lift_lambda_pullback")["pass"], false);
}

#[test]
fn conjugations() {
    let f = systems("conjugate.toml");
    let f = f.to_str().unwrap();
    let o = symplift(&["conjugate", f, "--action1", "rot", "--action2", "rot", "--quad-n", "32"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["result"]["conjugation"]["closed_form"], serde_json::json!(["q"]));

    let csv = tmp("conj.csv");
    let svg = tmp("conj.svg");
    let o = symplift(&[
        "conjugate", f, "--action1", "rot", "--action2", "wobbled", "--quad-n", "2048", "--samples", "200",
        "--csv", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(&o);
    assert!(check(&r, "residual_conj")["value"].as_f64().unwrap() <= 1e-6);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("nodes,residual_conj"));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let o = symplift(&["conjugate", f, "--action1", "rot", "--action2", "far", "--quad-n", "64"]);
    assert_eq!(o.status.code(), Some(2));
    let r = json(&o);
    assert_eq!(r["outcome"], "refused");
    assert!(check(&r, "precondition")["detail"].as_str().unwrap().contains("not close"));
}

#[test]
fn flow_csv_has_one_row_per_step() {
    let csv = tmp("flow.csv");
    let o = symplift(&[
        "flow",
        systems("flow.toml").to_str().unwrap(),
        "--system",
        "quartic",
        "--x0",
        "0.5,-0.25",
        "--steps",
        "250",
        "--dt",
        "1e-3",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("t,x,y,f1"));
    assert_eq!(lines.count(), 251);
}

#[test]
fn flow_action_variable() {
    let o = symplift(&["flow", systems("elliptic.toml").to_str().unwrap(), "--x0", "2,0", "--steps", "10", "--level", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let a = json(&o)["result"]["action"]["action"].as_f64().unwrap();
    assert!((a - 2.0).abs() < 1e-8, "{a}");
}

#[test]
fn rigidity_verdicts_and_exit_codes() {
    let o = symplift(&["rigidity-experiment", systems("triple.toml").to_str().unwrap(), "--system", "G"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["verdict"], "RIGID");
    assert_eq!(r["result"]["reduced"]["fits"][0]["formula"], "I1^2");

    let o = symplift(&["rigidity-experiment", systems("saddle_block.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&o)["verdict"], "HYPOTHESIS-FAILED");
}

#[test]
fn reduce_and_leaf() {
    let r = json(&symplift(&["reduce", systems("triple.toml").to_str().unwrap(), "--system", "G"]));
    assert_eq!(r["outcome"], "pass");
    let o = symplift(&["reduce", systems("focus_focus.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = symplift(&["run", systems("leaf.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn run_selects_experiments_and_reports_the_worst_outcome() {
    let f = systems("triple.toml");
    let o = symplift(&["run", f.to_str().unwrap(), "--only", "rigid-G,reduce-G"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    let names: Vec<&str> = r["experiments"].as_array().unwrap().iter().map(|e| e[0].as_str().unwrap()).collect();
    assert_eq!(names, ["reduce-G", "rigid-G"]);

    let o = symplift(&["run", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = symplift(&["run", f.to_str().unwrap(), "--only", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reports_are_reproducible_and_every_number_is_named() {
    let f = systems("triple.toml");
    let args = ["reduce", f.to_str().unwrap(), "--system", "G", "--seed", "99"];
    let a = symplift(&args);
    let b = symplift(&args);
    assert_eq!(a.stdout, b.stdout);
    let r = json(&a);
    assert_eq!(r["config"]["reduce"]["seed"], 99);
    for c in r["checks"].as_array().unwrap() {
        assert!(!c["name"].as_str().unwrap().is_empty());
    }
}

#[test]
fn text_format() {
    let o = symplift(&["analyze", systems("saddle.toml").to_str().unwrap(), "--format", "text"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[PASS] default: involution"));
    assert!(text.contains("(k_e, k_h, k_f) = (0, 1, 0)"));
    assert!(text.ends_with("outcome: pass\n"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let f = systems("saddle.toml");
    let o = symplift(&["analyze", f.to_str().unwrap(), "--domain", "1:-1,0:1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty interval"));
    let o = symplift(&["analyze", f.to_str().unwrap(), "--domain", "-1:1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("expected 2"));
}
