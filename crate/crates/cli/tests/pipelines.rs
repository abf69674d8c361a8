use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn leakstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leakstat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = leakstat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"{
  "graph": {"kind": "grid", "cols": 8, "rows": 6, "spacing": 100.0},
  "sensors": {"kind": "farthest-point", "count": 6},
  "noise": 0.02,
  "events": EVENTS
}"#;

fn scenario(dir: &Path, events: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, SMALL.replace("EVENTS", events)).unwrap();
    path
}

#[test]
fn clean_panel_alarm_rate_is_calibrated() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sc = scenario(d, "[]");
    let sim = d.join("sim");
    ok(&["simulate", "--scenario", p(&sc), "--horizon", "24", "--train-horizon", "960", "--seed", "11", "--out", p(&sim)]);
    let train = d.join("train");
    ok(&["train", "--panel", p(&sim.join("training.csv")), "--out", p(&train)]);
    let det = d.join("det");
    ok(&[
        "detect",
        "--panel",
        p(&sim.join("training.csv")),
        "--model",
        p(&train.join("model.json")),
        "--alpha",
        "0.05",
        "--out",
        p(&det),
    ]);
    let rate = report(&det)["metrics"]["alarm_rate"].as_f64().unwrap();
    assert!(rate <= 0.10, "alarm rate {rate}");
}

#[test]
fn simulated_leak_is_detected_and_located() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let leak = r#"[{"type": "leak", "id": "L1", "site": {"kind": "edge", "id": "p40"},
        "profile": "abrupt", "start": 120, "magnitude": 5.0}]"#;
    let sc = scenario(d, leak);
    let sim = d.join("sim");
    ok(&["simulate", "--scenario", p(&sc), "--horizon", "240", "--train-horizon", "960", "--seed", "3", "--out", p(&sim)]);
    let train = d.join("train");
    ok(&["train", "--panel", p(&sim.join("training.csv")), "--out", p(&train)]);
    let det = d.join("det");
    let graph = sim.join("graph");
    ok(&[
        "detect",
        "--panel",
        p(&sim.join("panel.csv")),
        "--model",
        p(&train.join("model.json")),
        "--graph",
        p(&graph),
        "--out",
        p(&det),
    ]);
    let eval = d.join("eval");
    ok(&[
        "evaluate",
        "--truth",
        p(&sim.join("truth.csv")),
        "--detections",
        p(&det.join("detections.csv")),
        "--graph",
        p(&graph),
        "--stats",
        p(&det.join("stats.csv")),
        "--out",
        p(&eval),
    ]);
    let m = &report(&eval)["metrics"];
    assert_eq!(m["true_positives"], 1, "{m}");
    assert_eq!(m["false_positives"], 0, "{m}");

    // the statistics CSV feeds the change-point stage
    let cp = d.join("cp");
    ok(&["changepoints", "--stats", p(&det.join("stats.csv")), "--out", p(&cp)]);
    assert!(report(&cp)["metrics"]["events"].as_u64().unwrap() >= 1);
}

#[test]
fn same_seed_same_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sc = scenario(d, "[]");
    let (a, b) = (d.join("a"), d.join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--scenario", p(&sc), "--horizon", "50", "--seed", "5", "--out", p(out)]);
    }
    for f in ["panel.csv", "truth.csv", "graph/nodes.csv", "graph/sensors.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_sensor_exits_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sc = scenario(d, "[]");
    let sim = d.join("sim");
    ok(&["simulate", "--scenario", p(&sc), "--horizon", "48", "--train-horizon", "480", "--seed", "1", "--out", p(&sim)]);
    let train = d.join("train");
    ok(&["train", "--panel", p(&sim.join("training.csv")), "--scheme", "single", "--out", p(&train)]);

    let text = std::fs::read_to_string(sim.join("panel.csv")).unwrap();
    let renamed = text.replacen("s3", "s3x", 1);
    let bad = d.join("renamed.csv");
    std::fs::write(&bad, renamed).unwrap();
    let out = leakstat(&["detect", "--panel", p(&bad), "--model", p(&train.join("model.json")), "--out", p(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'s3'"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(leakstat(&["detect"]).status.code(), Some(1));
    assert_eq!(leakstat(&["frobnicate"]).status.code(), Some(1));
    let out = leakstat(&[
        "train",
        "--panel",
        "missing.csv",
        "--strategy",
        "mcd",
        "--out",
        "/tmp/leakstat-never",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
