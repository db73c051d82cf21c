use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fobprint"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn fobprint")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn synth_train_detect_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["synth", "--count", "12", "--seed", "5", "--out", "legit"],
    );
    ok(
        d,
        &[
            "synth",
            "--count",
            "2",
            "--seed",
            "6",
            "--preset",
            "digital_relay",
            "--out",
            "mix",
        ],
    );
    let trained = ok(d, &["train", "legit/manifest.json", "--model", "m.json"]);
    assert!(trained.contains("12 captures"), "{trained}");

    let det = ok(
        d,
        &[
            "detect",
            "--model",
            "m.json",
            "--dataset",
            "mix/manifest.json",
            "--out",
            "det",
        ],
    );
    let lines: Vec<&str> = det.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[..2].iter().all(|l| l.contains("Accept")), "{det}");
    assert!(
        lines[2..]
            .iter()
            .all(|l| l.contains("digital_relay") && l.contains("Reject")),
        "{det}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("det/detect.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 4);
}

#[test]
fn train_refuses_attack_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--count",
            "1",
            "--preset",
            "playback_8bit",
            "--out",
            "mix",
        ],
    );
    let err = fails(d, &["train", "mix/manifest.json", "--model", "m.json"]);
    assert!(err.contains("refusing to train"), "{err}");
    assert!(!d.join("m.json").exists());
}

#[test]
fn train_needs_ten_captures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "4", "--out", "few"]);
    let err = fails(d, &["train", "few/manifest.json", "--model", "m.json"]);
    assert!(err.contains("at least 10"), "{err}");
}

#[test]
fn unreadable_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "10", "--out", "legit"]);
    ok(d, &["train", "legit/manifest.json", "--model", "m.json"]);
    fs::write(d.join("odd.cf32"), [0u8; 12]).unwrap();
    fs::copy(
        d.join("legit/captures/00000_legit.json"),
        d.join("odd.json"),
    )
    .unwrap();
    let err = fails(d, &["detect", "--model", "m.json", "odd.cf32"]);
    assert!(err.contains("truncated"), "{err}");
    fs::write(d.join("m2.json"), "{not json").unwrap();
    fails(
        d,
        &[
            "detect",
            "--model",
            "m2.json",
            "legit/captures/00000_legit.cf32",
        ],
    );
    fails(d, &["detect", "--model", "m.json", "missing.cf32"]);
}

#[test]
fn rank_features_needs_two_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "6", "--out", "legit"]);
    let err = fails(d, &["rank-features", "legit/manifest.json"]);
    assert!(err.contains("two classes"), "{err}");
    ok(
        d,
        &[
            "synth",
            "--count",
            "12",
            "--preset",
            "digital_relay",
            "--out",
            "mix",
        ],
    );
    ok(d, &["rank-features", "mix/manifest.json", "--out", "r"]);
    let ranking: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("r/ranking.json")).unwrap()).unwrap();
    assert_eq!(ranking["features"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_report_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.json"), r#"{"presets":["digital_relay"],"seed":3,"train_count":15,"legit_test_count":5,"attack_count":5}"#).unwrap();
    let out = ok(d, &["experiment", "--config", "exp.json", "--out", "a"]);
    assert!(out.contains("FNR 0.00%"), "{out}");
    ok(d, &["experiment", "--config", "exp.json", "--out", "b"]);
    assert_eq!(
        fs::read(d.join("a/report.json")).unwrap(),
        fs::read(d.join("b/report.json")).unwrap()
    );
    assert!(fs::read_to_string(d.join("a/scores.csv"))
        .unwrap()
        .starts_with("scenario,"));
    let err = fails(d, &["experiment", "--preset", "no_such_attack"]);
    assert!(err.contains("unknown preset"), "{err}");
}

#[test]
fn bench_reports_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["bench", "--repetitions", "2", "--out", "b"]);
    assert!(out.contains("detect (end to end)"), "{out}");
    assert!(tmp.path().join("b/bench.json").exists());
    fails(tmp.path(), &["bench", "--repetitions", "0"]);
}
