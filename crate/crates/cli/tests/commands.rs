//! End-to-end checks of the `edgescope` binary at small scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgescope_cli::EvalSummary;

fn edgescope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgescope")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = edgescope(args);
    assert_eq!(code(&out), 0, "{args:?}\nstdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A quick config on 16x16 synthetic data.
fn small_config(dir: &Path, test_anomaly: usize, extra: &str) -> PathBuf {
    let path = dir.join(format!("config-{test_anomaly}.json"));
    let quick = r#"{"epochs": 2, "batch_size": 16}"#;
    let text = format!(
        r#"{{"seed": 5, "preset": "desk_micro",
            "data": {{"source": "synth", "normal": 40, "anomaly": 40, "test_normal": 10, "test_anomaly": {test_anomaly}, "size": 16}},
            "train": {{"clf": {quick}, "ae": {quick}, "semi": {quick}}},
            "ensemble": {{"draws": 2}} {extra}}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

/// The single run directory created under `out`.
fn only_run(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn synth_writes_counted_deterministic_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--normal", "500", "--anomaly", "500", "--size", "32", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--normal", "500", "--anomaly", "500", "--size", "32", "--seed", "7", "--out", s(&b)]);
    let rows = csv_rows(&a.join("manifest.csv"));
    assert_eq!(rows.len(), 1000);
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 1000);
    assert_eq!(rows.iter().filter(|r| &r[1] != "normal").count(), 500);
    assert_eq!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(b.join("manifest.csv")).unwrap());
    assert_eq!(fs::read(a.join("images/00321.png")).unwrap(), fs::read(b.join("images/00321.png")).unwrap());

    ok(&["synth", "--normal", "20", "--anomaly", "0", "--size", "8", "--out", s(&c)]);
    let rows = csv_rows(&c.join("manifest.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| &r[1] == "normal"));
}

#[test]
fn unwritable_output_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("blocker");
    fs::write(&file, "").unwrap();
    assert_eq!(code(&edgescope(&["synth", "--normal", "2", "--anomaly", "2", "--size", "8", "--out", s(&file)])), 2);
    assert_eq!(code(&edgescope(&["train", "bogus"])), 2);
    assert_eq!(code(&edgescope(&["pipeline", "--config", s(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn train_reports_losses_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10, "");
    let (o1, o2) = (dir.path().join("r1"), dir.path().join("r2"));
    ok(&["train", "clf", "--config", s(&cfg), "--out", s(&o1)]);
    ok(&["train", "clf", "--config", s(&cfg), "--out", s(&o2)]);
    let (r1, r2) = (only_run(&o1), only_run(&o2));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(r1.join("train_report_clf.json")).unwrap()).unwrap();
    assert_eq!(report["epoch_losses"].as_array().unwrap().len(), 2);
    assert!(r1.join("resolved_config.json").is_file());
    assert_eq!(fs::read(r1.join("clf.ckpt.json")).unwrap(), fs::read(r2.join("clf.ckpt.json")).unwrap());
}

#[test]
fn train_clf_defaults_to_fifteen_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"preset": "desk_micro", "data": {"source": "synth", "normal": 40, "anomaly": 40, "test_normal": 2, "test_anomaly": 2, "size": 16}}"#,
    )
    .unwrap();
    let out = dir.path().join("runs");
    ok(&["train", "clf", "--config", s(&cfg), "--out", s(&out)]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(only_run(&out).join("train_report_clf.json")).unwrap()).unwrap();
    assert_eq!(report["epoch_losses"].as_array().unwrap().len(), 15);
}

#[test]
fn autoencoder_fed_anomalies_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10, r#", "ae_filter": "all""#);
    let out = edgescope(&["train", "ae", "--config", s(&cfg), "--out", s(&dir.path().join("runs"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("anomal"), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Trains all three learners once and returns their checkpoint paths.
fn trained_bundle(dir: &Path, cfg: &Path) -> [PathBuf; 3] {
    let out = dir.join("base");
    for learner in ["clf", "ae", "semi"] {
        ok(&["train", learner, "--config", s(cfg), "--out", s(&out.join(learner))]);
    }
    ["clf", "ae", "semi"].map(|learner| only_run(&out.join(learner)).join(format!("{learner}.ckpt.json")))
}

#[test]
fn ensembles_and_eval_write_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10, "");
    let [clf, ae, semi] = trained_bundle(dir.path(), &cfg);
    let bundle = ["--clf", s(&clf), "--ae", s(&ae), "--semi", s(&semi)];

    let missing = dir.path().join("nope.ckpt.json");
    let out = edgescope(&["fit-ensemble", "rf", "--clf", s(&clf), "--ae", s(&missing), "--semi", s(&semi), "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 4);

    let mut model_paths = Vec::new();
    let mut feature_files = Vec::new();
    for kind in ["rf", "svm"] {
        let out = dir.path().join(kind);
        let mut args = vec!["fit-ensemble", kind];
        args.extend(bundle);
        args.extend(["--config", s(&cfg), "--draws", "1", "--out", s(&out)]);
        ok(&args);
        let run = only_run(&out);
        assert_eq!(csv_rows(&run.join("tuning_log.csv")).len(), 1);
        feature_files.push(fs::read(run.join("features.csv")).unwrap());
        model_paths.push(run.join(format!("{kind}_model.json")));
    }
    assert_eq!(feature_files[0], feature_files[1]);
    assert_ne!(fs::read(&model_paths[0]).unwrap(), fs::read(&model_paths[1]).unwrap());

    let out = dir.path().join("eval");
    let mut args = vec!["eval", "--model", s(&model_paths[0]), "--model", s(&model_paths[1])];
    args.extend(bundle);
    args.extend(["--config", s(&cfg), "--out", s(&out)]);
    let stdout = ok(&args);
    assert!(stdout.contains("AUC") && stdout.contains("Precision"), "{stdout}");
    let run = only_run(&out);

    let raw: serde_json::Value = serde_json::from_slice(&fs::read(run.join("metrics.json")).unwrap()).unwrap();
    for entry in raw["models"].as_array().unwrap() {
        for key in ["AUC", "Recall", "Accuracy", "F1 Score", "MCC", "Precision"] {
            assert!(entry["metrics"][key].is_number(), "{key} in {entry}");
        }
    }
    let summary: EvalSummary = serde_json::from_value(raw).unwrap();
    let names: Vec<&str> = summary.models.iter().map(|m| m.model.as_str()).collect();
    assert_eq!(names, ["clf", "ae", "semi", "rf", "svm"]);

    let scatter = csv_rows(&run.join("scatter.csv"));
    assert_eq!(scatter.len(), summary.test_samples);
    assert_eq!(summary.test_samples, 20);
    let tally = |o: &str| scatter.iter().filter(|r| &r[2] == o).count();
    let c = summary.get(&summary.scatter_model).unwrap().confusion;
    assert_eq!([tally("TP"), tally("TN"), tally("FP"), tally("FN")], [c.tp, c.tn, c.fp, c.fn_]);

    let per_class = csv_rows(&run.join("per_class.csv"));
    assert!(per_class.iter().any(|r| &r[0] == "rf"));

    let single = small_config(dir.path(), 0, "");
    let single_out = dir.path().join("eval-single");
    let mut args = vec!["eval", "--model", s(&model_paths[0])];
    args.extend(bundle);
    args.extend(["--config", s(&single), "--out", s(&single_out)]);
    assert_eq!(code(&edgescope(&args)), 5);
}

#[test]
fn pipeline_rerun_from_its_resolved_config_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10, "");
    let (o1, o2) = (dir.path().join("first"), dir.path().join("second"));
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&o1)]);
    let first = only_run(&o1);
    ok(&["pipeline", "--config", s(&first.join("resolved_config.json")), "--out", s(&o2)]);
    let second = only_run(&o2);
    for file in [
        "metrics.json",
        "features.csv",
        "test_features.csv",
        "tuning_log.csv",
        "scatter.csv",
        "clf.ckpt.json",
        "ae.ckpt.json",
        "semi.ckpt.json",
        "rf_model.json",
        "svm_model.json",
    ] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn pipeline_rejects_single_class_test_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 0, "");
    assert_eq!(code(&edgescope(&["pipeline", "--config", s(&cfg), "--out", s(&dir.path().join("runs"))])), 5);
}
