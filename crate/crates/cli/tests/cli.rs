use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qse"))
        .args(args)
        .env("QSE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn status(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let file = dir.join("config.json");
    fs::write(&file, json).unwrap();
    file.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const STATIC_WELL: &str = r#"{
    "model": {"kind": "double_well", "radius": 1.5, "horizon": 1.0},
    "deltas": [0.1, 0.05]
}"#;

#[test]
fn effective_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(status(&qse(&["evolve", "--out", path(&out), "--delta", "1/10"])), 0);
    let first = fs::read_to_string(out.join("effective_config.json")).unwrap();
    let copy = tmp.path().join("effective.json");
    fs::write(&copy, &first).unwrap();
    assert_eq!(status(&qse(&["evolve", "--config", path(&copy)])), 0);
    assert_eq!(fs::read_to_string(out.join("effective_config.json")).unwrap(), first);
}

#[test]
fn artifacts_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(status(&qse(&["sweep", "--out", path(&a), "--jobs", "1"])), 0);
    assert_eq!(status(&qse(&["sweep", "--out", path(&b), "--jobs", "3"])), 0);
    let mut compared = 0;
    for sub in ["delta_00", "delta_01", "delta_02"] {
        for name in ["trajectory.csv", "mu.csv", "power.csv", "energy_sums.csv", "balance.json"] {
            let (x, y) = (a.join(sub).join(name), b.join(sub).join(name));
            assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{}", x.display());
            compared += 1;
        }
    }
    assert_eq!(fs::read(a.join("sweep.json")).unwrap(), fs::read(b.join("sweep.json")).unwrap());
    assert_eq!(compared, 15);
}

#[test]
fn bad_configs_exit_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), r#"{"deltas": [0.1], "temperature": 3}"#);
    assert_eq!(status(&qse(&["evolve", "--config", &unknown, "--out", path(tmp.path())])), 2);
    assert_eq!(status(&qse(&["evolve", "--delta", "0", "--out", path(tmp.path())])), 2);
    assert_eq!(status(&qse(&["evolve", "--config", "/nonexistent/config.json"])), 2);
    let one = tmp.path().join("one");
    assert_eq!(status(&qse(&["sweep", "--delta", "0.1", "--out", path(&one)])), 2);
}

#[test]
fn runtime_failure_exits_with_status_one_and_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "double_well", "radius": 1.5, "horizon": 2.0, "tilt": 1.0},
            "rule": {"scheme": {"kind": "gradient_flow", "step_max": 0.01, "slope_tol": 1e-8, "max_steps": 1}},
            "deltas": [0.1]
        }"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["evolve", "--config", &config, "--out", path(&out)])), 1);
    let trajectory = fs::read_to_string(out.join("delta_00/trajectory.csv")).unwrap();
    assert!(trajectory.starts_with("node,time,energy,x0\n"));
    assert_eq!(trajectory.lines().count(), 2, "header and the initial state");
    assert!(out.join("delta_00/mu.csv").exists());
    assert!(!out.join("delta_00/balance.json").exists());
}

#[test]
fn static_sweep_has_no_jumps() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), STATIC_WELL);
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["sweep", "--config", &config, "--out", path(&out)])), 0);
    for sub in ["delta_00", "delta_01"] {
        assert_eq!(fs::read_to_string(out.join(sub).join("mu.csv")).unwrap(), "node,time,mass\n");
    }
    let sweep = read_json(&out.join("sweep.json"));
    for s in sweep["summaries"].as_array().unwrap() {
        assert!(s["jump_set"].as_array().unwrap().is_empty());
        assert_eq!(s["mu_total"], 0.0);
    }
}

#[test]
fn large_steps_skip_the_inequality_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "double_well", "radius": 1.5, "horizon": 1.0},
            "deltas": [0.1, 0.05],
            "verify": {"tau": 0.1}
        }"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["verify", "--config", &config, "--out", path(&out)])), 0);
    let report = read_json(&out.join("verify.json"));
    assert!(report["inequalities"]["skipped"].is_string());
    assert!(report["inequality_note"].as_str().unwrap().contains("tau·L"));
    assert_eq!(report["passed"], true);
}

#[test]
fn default_verification_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["verify", "--out", path(&out)])), 0);
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["jump"]["status"], "checked");
}

/// Number of nodes at which some spring goes from intact to broken.
fn fracture_events(trajectory: &str, springs: usize) -> usize {
    let rows: Vec<Vec<f64>> = trajectory
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    rows.windows(2)
        .filter(|w| {
            let (a, b) = (&w[0][w[0].len() - springs..], &w[1][w[1].len() - springs..]);
            a.iter().zip(b).any(|(z0, z1)| *z0 < 0.5 && *z1 >= 0.5)
        })
        .count()
}

#[test]
fn rod_breaks_once_at_the_coarsest_step() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["rod", "--delta", "1/15,1/30", "--out", path(&out)])), 0);
    let trajectory = fs::read_to_string(out.join("delta_00/trajectory.csv")).unwrap();
    assert_eq!(fracture_events(&trajectory, 9), 1);
    let rod = read_json(&out.join("rod.json"));
    let first = &rod["runs"][0];
    assert_eq!(first["broken_springs"].as_array().unwrap().len(), 1);
    assert!(first["healing"].as_array().unwrap().is_empty());
    let frames = fs::read_to_string(out.join("delta_00/keyframes.csv")).unwrap();
    for label in ["start", "pre_jump", "post_jump", "end"] {
        assert_eq!(frames.lines().filter(|l| l.split(',').nth(1) == Some(label)).count(), 10);
    }
}

#[test]
fn rod_verification_balances() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "rod"},
            "rule": {"scheme": {"kind": "bdf2", "tau": 0.1}, "stop_energy_tol": 1e-5, "stationarity_tol": null},
            "deltas": [0.0666666666666666667, 0.0333333333333333333]
        }"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["verify", "--config", &config, "--out", path(&out)])), 0);
    let report = read_json(&out.join("verify.json"));
    for run in report["runs"].as_array().unwrap() {
        assert_eq!(run["balance_passed"], true);
        assert!(run["balance"]["max_abs_residual"].as_f64().unwrap() <= 1e-6);
    }
    assert!(report["inequalities"].is_null());
}

#[test]
fn action_reports_every_functional() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "double_well", "radius": 1.5, "horizon": 1.0},
            "action": {"tau": 0.1, "grid_points": 121, "chain": {"budget": 8}}
        }"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(status(&qse(&["action", "--config", &config, "--out", path(&out)])), 0);
    let a = read_json(&out.join("action.json"));
    let gf = a["gradient_flow"]["value"].as_f64().unwrap();
    assert!((gf - 2.0).abs() <= 0.04, "{gf}");
    assert_eq!(a["oracle"]["gradient_flow_exact"], 2.0);
    for key in ["mms", "bdf2"] {
        let chain = a[key]["value"].as_f64().unwrap();
        let oracle = a["oracle"][key]["value"].as_f64().unwrap();
        assert!(chain >= 1.0 && oracle >= 1.0, "{key}: {chain} {oracle}");
    }
}
