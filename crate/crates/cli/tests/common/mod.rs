#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualsparse::data::{write_csv, Dataset};
use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualsparse"))
}

/// Runs the binary in `dir` and returns its output, whatever the exit status.
pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it succeeds.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn write_data(dir: &Path, name: &str, data: &Dataset) -> PathBuf {
    let path = dir.join(name);
    write_csv(&path, data, "y").unwrap();
    path
}

pub fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Numeric columns of a headered CSV.
pub fn read_table(path: impl AsRef<Path>) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

pub fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j]).collect()
}

/// A small regression setup on the sine fixture.
pub fn sine_config(num_inducing: usize) -> Value {
    serde_json::json!({
        "likelihood": {"kind": "gaussian", "noise_variance": 0.2},
        "network": {"hidden": [16, 16], "activation": "tanh"},
        "train": {"learning_rate": 0.01, "batch_size": 16, "max_epochs": 60, "patience": 20,
                  "prior_precision": 0.5, "seed": 1},
        "posterior": {"num_inducing": num_inducing, "seed": 2, "batch": 7}
    })
}
