use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcast_core::equilibrium::desk_instance;
use mcast_core::model::instance_to_json;
use serde_json::Value;
use tempfile::TempDir;

const SYMMETRIC: &str = r#"{"links":[{"id":"l1","capacity":10}],"agents":[
  {"group":1,"member":1,"valuation":{"family":"LogSat","a":1,"b":1},"route":[{"link":"l1","alpha":1}]},
  {"group":2,"member":1,"valuation":{"family":"LogSat","a":1,"b":1},"route":[{"link":"l1","alpha":1}]}]}"#;

fn mcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcast"))
        .args(args)
        .env_remove("MECH_THREADS")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn setup(instance: &str) -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("instance.json");
    fs::write(&path, instance).unwrap();
    (dir, path.display().to_string())
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn solve_splits_the_symmetric_link_evenly() {
    let (dir, inst) = setup(SYMMETRIC);
    let o = out(&dir, "run");
    let res = mcast(&["solve", "--instance", &inst, "--tol", "1e-8", "--out", &o]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let sol = json(&dir.path().join("run/solution.json"));
    for label in ["1.1", "2.1"] {
        assert!((sol["x"][label].as_f64().unwrap() - 5.0).abs() < 1e-8);
    }
    let manifest = json(&dir.path().join("run/manifest.json"));
    assert_eq!(manifest["config"]["command"], "solve");
    assert_eq!(manifest["config"]["tol"], 1e-8);
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["versions"]["mcast_core"].is_string());
}

#[test]
fn malformed_json_exits_with_a_parse_error() {
    let (dir, inst) = setup("{\"links\": [");
    let o = out(&dir, "run");
    let res = mcast(&["solve", "--instance", &inst, "--out", &o]);
    assert_eq!(res.status.code(), Some(2));
    let err = json(&dir.path().join("run/error.json"));
    assert_eq!(err["kind"], "parse");
    assert_eq!(json(&dir.path().join("run/manifest.json"))["exit_code"], 2);
}

#[test]
fn lone_group_link_fails_validation() {
    let (dir, inst) = setup(
        r#"{"links":[{"id":"l1","capacity":10}],"agents":[
        {"group":1,"member":1,"valuation":{"family":"LogSat","a":1,"b":1},"route":[{"link":"l1","alpha":1}]}]}"#,
    );
    let o = out(&dir, "run");
    let res = mcast(&["solve", "--instance", &inst, "--out", &o]);
    assert_eq!(res.status.code(), Some(3));
    let err = json(&dir.path().join("run/error.json"));
    assert_eq!(err["details"]["violations"][0]["kind"], "too_few_groups");
}

#[test]
fn bad_configuration_is_a_validation_error() {
    let (dir, inst) = setup(SYMMETRIC);
    let o = out(&dir, "run");
    let missing = out(&dir, "nowhere.json");
    assert_eq!(
        mcast(&["solve", "--instance", &missing, "--out", &o])
            .status
            .code(),
        Some(3)
    );
    let res = mcast(&["certify", "--instance", &inst, "--eta=-1", "--out", &o]);
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(mcast(&["certify", "--out", &o]).status.code(), Some(2));

    let res = Command::new(env!("CARGO_BIN_EXE_mcast"))
        .args(["solve", "--instance", &inst, "--out", &o])
        .env("MECH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn instance_violating_a4_exits_with_code_4() {
    // The first draw of desk seed 17 has a link with one active group.
    let (dir, inst) = setup(&instance_to_json(&desk_instance(17).unwrap()));
    let o = out(&dir, "run");
    assert_eq!(
        mcast(&["solve", "--instance", &inst, "--out", &o])
            .status
            .code(),
        Some(0)
    );
    let res = mcast(&["solve", "--instance", &inst, "--require-a4", "--out", &o]);
    assert_eq!(res.status.code(), Some(4));
    let res = mcast(&["certify", "--instance", &inst, "--out", &o]);
    assert_eq!(res.status.code(), Some(4));
    assert_eq!(json(&dir.path().join("run/error.json"))["kind"], "a4");
}

#[test]
fn certify_reports_are_byte_identical_across_runs() {
    let (dir, inst) = setup(SYMMETRIC);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let o = out(&dir, name);
        let res = mcast(&[
            "certify",
            "--instance",
            &inst,
            "--variant",
            "sbb",
            "--out",
            &o,
        ]);
        assert_eq!(res.status.code(), Some(0));
        texts.push(fs::read(dir.path().join(name).join("report.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let report = json(&dir.path().join("a/report.json"));
    assert_eq!(report["certified"], true);
    assert!(report["lemmas"]["sbb"].as_f64().unwrap() <= 1e-9);
}

fn summary(dir: &TempDir, name: &str) -> Vec<Vec<String>> {
    fs::read_to_string(dir.path().join(name).join("summary.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn seed_sweep_certifies_fifty_instances() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "sweep");
    let res = mcast(&[
        "certify",
        "--seeds",
        "1..50",
        "--variant",
        "sbb",
        "--out",
        &o,
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stdout)
    );
    let rows = summary(&dir, "sweep");
    assert_eq!(rows.len(), 51);
    assert!(column(&rows, "certified").iter().all(|c| c == "true"));
    assert!(column(&rows, "passes").iter().all(|c| c == "true"));
    for v in column(&rows, "abs_sum_t") {
        assert!(v.parse::<f64>().unwrap() <= 1e-9, "{v}");
    }
}

#[test]
fn large_eta_shows_the_shrink_iterations() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "sweep");
    let res = mcast(&["certify", "--seeds", "2..3", "--eta", "10", "--out", &o]);
    assert_eq!(res.status.code(), Some(0));
    let rows = summary(&dir, "sweep");
    assert!(column(&rows, "shrink_steps")
        .iter()
        .all(|s| s.parse::<usize>().unwrap() > 1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("shrink 1: eta 5e0"));
    let reports = json(&dir.path().join("sweep/reports.json"));
    assert_eq!(reports[0]["shrink"][0]["eta"], 10.0);
    assert_eq!(reports[0]["shrink"][0]["passes"], false);
}

#[test]
fn dynamics_from_the_equilibrium_stop_after_one_round() {
    let (dir, inst) = setup(SYMMETRIC);
    let o = out(&dir, "ne");
    let res = mcast(&[
        "dynamics",
        "--instance",
        &inst,
        "--start",
        "ne",
        "--out",
        &o,
    ]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("ne/trajectory.csv")).unwrap();
    let rounds: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert!(rounds.iter().all(|&r| r == "1"));
    assert_eq!(json(&dir.path().join("ne/dynamics.json"))["rounds"], 1);
}

#[test]
fn dynamics_from_zero_stay_feasible_within_the_round_cap() {
    let (dir, inst) = setup(SYMMETRIC);
    let o = out(&dir, "zero");
    let args = [
        "dynamics",
        "--instance",
        &inst,
        "--start",
        "zero",
        "--rounds",
        "5",
    ];
    let res = mcast(
        &[
            &args[..],
            &["--schedule", "jacobi", "--budget", "200", "--out", &o],
        ]
        .concat(),
    );
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("zero/trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,agent,y,x,t,gain,feasible");
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));
    assert!(
        json(&dir.path().join("zero/dynamics.json"))["rounds"]
            .as_u64()
            .unwrap()
            <= 5
    );
}

#[test]
fn evaluate_reads_back_a_certified_profile() {
    let (dir, inst) = setup(SYMMETRIC);
    let o = out(&dir, "cert");
    assert_eq!(
        mcast(&["certify", "--instance", &inst, "--out", &o])
            .status
            .code(),
        Some(0)
    );
    let profile = out(&dir, "cert/profile.json");
    let o = out(&dir, "eval");
    let res = mcast(&[
        "evaluate",
        "--instance",
        &inst,
        "--profile",
        &profile,
        "--out",
        &o,
    ]);
    assert_eq!(res.status.code(), Some(0));
    let outcome = json(&dir.path().join("eval/outcome.json"));
    assert!((outcome["x"]["1.1"].as_f64().unwrap() - 5.0).abs() < 1e-8);
    assert!(outcome["total_tax"].as_f64().unwrap() > 0.0);
}
