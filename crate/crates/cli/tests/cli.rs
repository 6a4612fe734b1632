mod common;

use std::fs;

use common::*;
use dualsparse::data::{make_banana, make_blobs, make_sine, make_sine_gap};
use serde_json::json;

fn error_kind(stderr: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(stderr).expect("stderr is a JSON error");
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn missing_data_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &sine_config(8));
    let out = run_in(
        dir.path(),
        &["train", "--config", cfg.to_str().unwrap(), "--data", "nope.csv", "--out", "w.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out.stderr), "MissingFile");
}

#[test]
fn unknown_config_keys_exit_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sine_config(8);
    cfg["train"]["lr"] = json!(0.1);
    write_config(dir.path(), "cfg.json", &cfg);
    write_data(dir.path(), "d.csv", &make_sine(20, 0.1, 0));
    let out = run_in(
        dir.path(),
        &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("w.json").exists());
}

#[test]
fn unknown_baseline_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.json", &sine_config(8));
    write_data(dir.path(), "d.csv", &make_sine(30, 0.1, 0));
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    let out = run_in(
        dir.path(),
        &["fit", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--out", "p.json",
          "--baseline", "magic"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out.stderr), "UnknownStrategy");
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.json", &sine_config(8));
    write_data(dir.path(), "d.csv", &make_sine(40, 0.1, 0));
    for name in ["a.json", "b.json"] {
        ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", name]);
    }
    let a = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.json")).unwrap());
    let report = read_json(dir.path().join("a.json.report.json"));
    assert!(report["eval"]["nlpd"].as_f64().unwrap().is_finite());
    assert_eq!(report["model"], "nn_map");
}

#[test]
fn seed_flag_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.json", &sine_config(8));
    write_data(dir.path(), "d.csv", &make_sine(40, 0.1, 0));
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "a.json"]);
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "b.json", "--seed", "9"]);
    assert_ne!(
        fs::read(dir.path().join("a.json")).unwrap(),
        fs::read(dir.path().join("b.json")).unwrap()
    );
}

#[test]
fn empty_update_leaves_posterior_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.json", &sine_config(8));
    write_data(dir.path(), "d.csv", &make_sine(40, 0.1, 0));
    fs::write(dir.path().join("empty.csv"), "x,y\n").unwrap();
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--out", "p.json"]);
    ok(dir.path(), &["update", "--posterior", "p.json", "--data", "empty.csv", "--out", "q.json"]);
    assert_eq!(
        fs::read(dir.path().join("p.json")).unwrap(),
        fs::read(dir.path().join("q.json")).unwrap()
    );
    assert_eq!(read_json(dir.path().join("q.json.report.json"))["new_points"], 0);
}

#[test]
fn update_with_retrain_reports_both_timings() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "cfg.json", &sine_config(8));
    write_data(dir.path(), "d.csv", &make_sine(40, 0.1, 0));
    write_data(dir.path(), "new.csv", &make_sine_gap(10, 0.1, 1));
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--out", "p.json"]);
    ok(
        dir.path(),
        &["update", "--config", "cfg.json", "--posterior", "p.json", "--data", "new.csv", "--out", "q.json",
          "--retrain", "--train-data", "d.csv"],
    );
    let r = read_json(dir.path().join("q.json.report.json"));
    assert_eq!(r["new_points"], 10);
    assert!(r["nondeterministic"]["update_seconds"].as_f64().unwrap() >= 0.0);
    assert!(r["nondeterministic"]["retrain_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn sparse_fit_on_every_point_matches_the_dense_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_sine(40, 0.1, 3);
    // The train split holds 28 rows; asking for them all makes Z = X.
    write_config(dir.path(), "cfg.json", &sine_config(28));
    write_data(dir.path(), "d.csv", &data);
    write_data(dir.path(), "test.csv", &make_sine(15, 0.1, 4));
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--out", "p.json"]);
    ok(dir.path(), &["predict", "--config", "cfg.json", "--posterior", "p.json", "--data", "test.csv", "--out", "sparse.csv",
          "--mode", "pseudo_targets"]);
    ok(
        dir.path(),
        &["oracle-gp", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--test", "test.csv",
          "--out", "dense.csv", "--mode", "pseudo_targets"],
    );
    let (h, sparse) = read_table(dir.path().join("sparse.csv"));
    let (h2, dense) = read_table(dir.path().join("dense.csv"));
    assert_eq!(h, h2);
    assert_eq!(h, ["x", "mean_0", "var_0"]);
    for col in ["mean_0", "var_0"] {
        for (a, b) in column(&h, &sparse, col).iter().zip(column(&h, &dense, col)) {
            assert!((a - b).abs() <= 1e-6, "{col}: {a} vs {b}");
        }
    }
}

#[test]
fn classification_predictions_carry_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sine_config(10);
    cfg["likelihood"] = json!({"kind": "bernoulli"});
    write_config(dir.path(), "cfg.json", &cfg);
    write_data(dir.path(), "d.csv", &make_banana(60, 0));
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    ok(dir.path(), &["fit", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--out", "p.json"]);
    ok(dir.path(), &["predict", "--config", "cfg.json", "--posterior", "p.json", "--data", "d.csv", "--out", "pred.csv"]);
    let (h, rows) = read_table(dir.path().join("pred.csv"));
    assert_eq!(h, ["x0", "x1", "mean_0", "var_0", "prob_0", "prob_1"]);
    for r in &rows {
        assert!((r[4] + r[5] - 1.0).abs() <= 1e-12);
    }
    ok(
        dir.path(),
        &["eval", "--config", "cfg.json", "--posterior", "p.json", "--data", "d.csv", "--split", "test",
          "--out", "e.json", "--mode", "nn_mean"],
    );
    let e = read_json(dir.path().join("e.json"));
    assert!(e["eval"]["accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn a_single_task_continuum_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let centers = vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.5]];
    let mut cfg = sine_config(8);
    cfg["likelihood"] = json!({"kind": "categorical", "num_classes": 3});
    cfg["cl"] = json!({"tau": 1.0, "points_per_task": 10, "classes_per_task": 3});
    write_config(dir.path(), "cfg.json", &cfg);
    write_data(dir.path(), "d.csv", &make_blobs(30, &centers, 1.2, 0).unwrap());
    ok(dir.path(), &["cl", "--config", "cfg.json", "--data", "d.csv", "--out", "cl.json"]);
    ok(dir.path(), &["train", "--config", "cfg.json", "--data", "d.csv", "--out", "w.json"]);
    ok(
        dir.path(),
        &["eval", "--config", "cfg.json", "--checkpoint", "w.json", "--data", "d.csv", "--split", "test",
          "--out", "e.json"],
    );
    let cl = read_json(dir.path().join("cl.json"));
    let e = read_json(dir.path().join("e.json"));
    assert_eq!(cl["accuracy"][0][0], e["eval"]["accuracy"]);
    assert_eq!(cl["average_final_accuracy"], e["eval"]["accuracy"]);
}
