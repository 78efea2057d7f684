use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segstack::imagery::{list_pngs, load_mask, Dataset};
use segstack::metrics::MetricReport;

fn segstack(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segstack"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = segstack(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_loadable_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", "a", "--seed", "7"], tmp.path());
    ok(&["synth", "--out", "b", "--seed", "7"], tmp.path());
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    let data = Dataset::load(&tmp.path().join("a"), 3).unwrap();
    assert_eq!(data.len(), 60);
    assert_eq!((data.width(), data.height(), data.channels()), (64, 64, 3));
    for (m, f) in segstack::synth::class_frequencies(&data).iter().enumerate() {
        assert!(*f >= 0.05, "class {m}: {f}");
    }
}

#[test]
fn evaluating_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", "d", "--count", "5", "--width", "24", "--height", "24"], tmp.path());
    ok(
        &["evaluate", "--pred", "d/masks", "--data", "d", "--classes", "3", "--out", "r.json"],
        tmp.path(),
    );
    let reports: Vec<MetricReport> = serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    for c in &reports[0].per_class {
        assert_eq!(c.dice, 1.0);
        assert_eq!(c.hausdorff, Some(0.0));
    }
}

#[test]
fn train_predict_on_training_images() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["synth", "--out", "d", "--count", "6", "--width", "20", "--height", "16"], p);
    ok(&["train", "--data", "d", "--out", "m", "--classes", "3", "--folds", "3"], p);
    ok(&["predict", "--model", "m", "--data", "d", "--out", "pred"], p);
    let masks = list_pngs(&p.join("pred/masks")).unwrap();
    assert_eq!(masks.len(), 6);
    for path in masks.values() {
        let m = load_mask(path).unwrap();
        assert_eq!((m.width(), m.height()), (20, 16));
        assert!(m.labels().iter().all(|&l| l < 3));
    }
}

#[test]
fn one_layer_and_two_layer_rows_both_appear() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["synth", "--out", "d", "--count", "6", "--width", "20", "--height", "16"], p);
    ok(&["train", "--data", "d", "--out", "two", "--classes", "3", "--folds", "3"], p);
    ok(&["train", "--data", "d", "--out", "one", "--classes", "3", "--folds", "3", "--ole"], p);
    assert!(!p.join("one/layer2/0.model").exists());
    for m in ["one", "two"] {
        ok(&["predict", "--model", m, "--data", "d", "--out", &format!("pred-{m}"), "--baselines"], p);
        ok(
            &[
                "evaluate", "--pred", &format!("pred-{m}"), "--data", "d", "--classes", "3",
                "--name", m, "--out", &format!("{m}.json"),
            ],
            p,
        );
    }
    let table = ok(&["report", "one.json", "two.json"], p);
    let rows: Vec<&str> = table.lines().map(|l| l.split_whitespace().next().unwrap_or("")).collect();
    assert!(rows.contains(&"one") && rows.contains(&"two"), "{table}");
    assert!(rows.iter().any(|r| r.ends_with("naiveBayesPatch")), "{table}");
}

#[test]
fn config_file_values_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["synth", "--out", "d", "--count", "4", "--width", "12", "--height", "12"], p);
    fs::write(
        p.join("run.json"),
        r#"{"data": "d", "out": "m", "classes": 3, "folds": 9, "solver": "nnls",
            "learners": [{"kind": "naiveBayesPatch", "radius": 0}, {"kind": "logisticPixel", "epochs": 20}]}"#,
    )
    .unwrap();
    // folds 9 > 4 items would fail; the flag wins
    ok(&["train", "--config", "run.json", "--folds", "2"], p);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(p.join("m/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["folds"], 2);
    assert_eq!(manifest["solver"], "nnls");
    assert_eq!(manifest["models"], 2);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let code = |args: &[&str]| segstack(args, p).status.code();
    assert_eq!(code(&["train", "--data", "missing", "--out", "m", "--classes", "3"]), Some(3));
    assert_eq!(code(&["train", "--data", "d", "--out", "m", "--folds", "1"]), Some(2));
    assert_eq!(code(&["train", "--data", "d", "--solver", "magic"]), Some(2));
    fs::write(p.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&["train", "--config", "bad.json"]), Some(2));

    ok(&["synth", "--out", "d", "--count", "3", "--width", "8", "--height", "8", "--classes", "4"], p);
    // masks hold labels up to 3; declaring 2 classes overflows
    let out = segstack(&["train", "--data", "d", "--out", "m", "--classes", "2", "--folds", "2"], p);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train: loading d"));
    assert_eq!(code(&["predict", "--model", "nowhere", "--data", "d", "--out", "o"]), Some(3));
}
