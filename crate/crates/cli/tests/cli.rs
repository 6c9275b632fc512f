use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drivewatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivewatch")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = drivewatch(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let model = dir.path().join("model.json");
    ok(&["synth", "--out", s(&corpus), "--irregular", "2", "--regular", "2", "--duration-s", "60", "--seed", "4"]);
    assert_eq!(fs::read_dir(&corpus).unwrap().count(), 4);

    let report: serde_json::Value = serde_json::from_str(&ok(&[
        "train",
        "--sessions",
        s(&corpus),
        "--baseline-group",
        "non_pd",
        "--out",
        s(&model),
    ]))
    .unwrap();
    assert_eq!(report["n_windows"], 44);
    assert_eq!(report["n_baseline_sessions"], 2);
    let text = fs::read_to_string(&model).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["version"], 1);
    assert_eq!(parsed["checksum"].as_str().unwrap().len(), 64);

    let eval = dir.path().join("eval.json");
    let line = ok(&["eval", "--model", s(&model), "--sessions", s(&corpus), "--report", s(&eval)]);
    assert!(line.starts_with("agreement "), "{line}");
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(eval["judged_windows"], 44);

    let session = corpus.join("pd01");
    let privacy = dir.path().join("privacy.ndjson");
    fs::write(&privacy, "{\"t_ms\":30000,\"enabled\":true}\n").unwrap();
    let log = dir.path().join("alerts.ndjson");
    let windows = dir.path().join("windows.ndjson");
    ok(&[
        "replay",
        "--session",
        s(&session),
        "--model",
        s(&model),
        "--emit",
        s(&log),
        "--privacy-script",
        s(&privacy),
        "--windows",
        s(&windows),
    ]);
    assert_eq!(fs::read_to_string(&windows).unwrap().lines().count(), 11);
    for l in fs::read_to_string(&log).unwrap().lines() {
        let a: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(a["suppressed"].as_bool().unwrap(), a["t_ms"].as_u64().unwrap() >= 30_000);
    }

    let dump = ok(&["features", "--session", s(&session)]);
    assert_eq!(dump.lines().count(), 11);
}

#[test]
fn visual_test_replay_needs_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["synth", "--out", s(&corpus), "--irregular", "0", "--regular", "1", "--duration-s", "65"]);
    let log = dir.path().join("a.ndjson");
    let summary = ok(&[
        "replay",
        "--session",
        s(&corpus.join("nc01")),
        "--emit",
        s(&log),
        "--mode",
        "visual_test",
        "--position",
        "hud",
    ]);
    assert!(summary.starts_with("2 alerts"), "{summary}");
    let times: Vec<u64> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["t_ms"].as_u64().unwrap())
        .collect();
    assert_eq!(times, vec![30_000, 60_000]);
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = drivewatch(&["train", "--sessions", s(dir.path()), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("training set has 0 rows"));

    let session = dir.path().join("nothing");
    let out = drivewatch(&["replay", "--session", s(&session), "--emit", s(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = drivewatch(&["replay", "--session", s(&session), "--emit", "x", "--mode", "bogus"]);
    assert!(!out.status.success());
}
