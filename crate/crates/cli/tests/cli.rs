use std::path::Path;
use std::process::{Command, Output};

use gdsolver_core::{Activation, Dnn, Layer, Matrix};
use tempfile::TempDir;

const HEADER: &str = "method,phase,epoch,train_loss,val_loss,test_loss,test_accuracy,elapsed_ms";

fn gdsolver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdsolver"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gdsolver(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Csv {
    comments: Vec<String>,
    header: String,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Csv {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let mut comments = Vec::new();
    let header = loop {
        let l = lines.next().expect("header line");
        match l.strip_prefix("# ") {
            Some(c) => comments.push(c.to_string()),
            None => break l.to_string(),
        }
    };
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Csv { comments, header, rows }
}

fn col(name: &str) -> usize {
    HEADER.split(',').position(|h| h == name).unwrap()
}

fn num(row: &[String], name: &str) -> f64 {
    row[col(name)].parse().unwrap()
}

fn path_str(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

/// Single linear layer that always predicts class 0.
fn constant_classifier(d: usize, classes: usize) -> String {
    let mut bias = vec![0.0; classes];
    bias[0] = 1.0;
    let layer = Layer::new(Matrix::zeros(classes, d), bias, Activation::Identity).unwrap();
    Dnn::new(vec![layer]).unwrap().to_json()
}

#[test]
fn experiment1_identity_shape_and_timing() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "e1.csv");
    ok(&["experiment1", "--task", "identity", "--seed", "0", "--out", &out]);
    let csv = read_csv(Path::new(&out));
    assert_eq!(csv.header, HEADER);
    assert_eq!(csv.comments.len(), 1);
    assert!(csv.comments[0].starts_with("experiment1 task=identity"));
    assert_eq!(csv.rows.len(), 100);
    for method in ["sgd", "sgd-lrs", "adam", "adam-lrs", "gdsolver"] {
        let epochs: Vec<usize> = csv
            .rows
            .iter()
            .filter(|r| r[0] == method)
            .map(|r| r[col("epoch")].parse().unwrap())
            .collect();
        assert_eq!(epochs, (1..=20).collect::<Vec<_>>(), "{method}");
    }
    let at = |m: &str, e: &str| csv.rows.iter().find(|r| r[0] == m && r[col("epoch")] == e).unwrap();
    assert!(num(at("gdsolver", "10"), "elapsed_ms") > num(at("sgd", "10"), "elapsed_ms"));
    assert!(at("gdsolver", "10")[col("phase")].starts_with("sweep:"));
}

#[test]
fn experiment1_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path_str(&dir, "a.csv"), path_str(&dir, "b.csv"));
    for p in [&a, &b] {
        ok(&["experiment1", "--task", "affine", "--epochs", "4", "--seed", "3", "--out", p]);
    }
    let strip = |c: Csv| {
        c.rows
            .into_iter()
            .map(|mut r| {
                r.remove(col("elapsed_ms"));
                r
            })
            .collect::<Vec<_>>()
    };
    let (ca, cb) = (read_csv(Path::new(&a)), read_csv(Path::new(&b)));
    assert_eq!(ca.comments, cb.comments);
    assert_eq!(strip(ca), strip(cb));
}

#[test]
fn experiment2_blobs_grid() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "e2.csv");
    ok(&["experiment2", "--task", "blobs", "--seed", "1", "--out", &out]);
    let csv = read_csv(Path::new(&out));
    assert_eq!(csv.header, HEADER);
    assert_eq!(csv.rows.len(), 20);
    for r in &csv.rows {
        assert!(num(r, "epoch") <= 10.0, "{r:?}");
        if r[col("phase")] == "n=2000" {
            assert!(num(r, "test_accuracy") >= 0.99, "{r:?}");
        }
    }
}

#[test]
fn export_lp_regression_sections_and_determinism() {
    let dir = TempDir::new().unwrap();
    let snap = path_str(&dir, "net.json");
    ok(&["regress", "--task", "affine", "--epochs", "3", "--snapshot-out", &snap, "--out", &path_str(&dir, "r.csv")]);
    let (a, b) = (path_str(&dir, "a.lp"), path_str(&dir, "b.lp"));
    for p in [&a, &b] {
        let out = ok(&["export-lp", "--task", "affine", "--snapshot", &snap, "--lp-out", p, "--sweep-size", "4"]);
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("variables="));
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let text = String::from_utf8(text).unwrap();
    assert!(text.contains("\nSubject To\n") && text.contains("\nBounds\n"));
}

#[test]
fn export_lp_classification_lists_every_c() {
    let dir = TempDir::new().unwrap();
    let snap = path_str(&dir, "net.json");
    std::fs::write(&snap, constant_classifier(8, 4)).unwrap();
    let lp = path_str(&dir, "c.lp");
    ok(&["export-lp", "--task", "blobs", "--snapshot", &snap, "--lp-out", &lp]);
    let text = std::fs::read_to_string(&lp).unwrap();
    let binaries: Vec<&str> = text.split("Binaries\n").nth(1).unwrap().split_whitespace().collect();
    for t in 0..32 {
        assert!(binaries.contains(&format!("c_{t}").as_str()), "c_{t} missing");
    }
}

#[test]
fn sweep_only_reports_and_saves() {
    let dir = TempDir::new().unwrap();
    let snap = path_str(&dir, "net.json");
    std::fs::write(&snap, constant_classifier(8, 4)).unwrap();
    let after = path_str(&dir, "after.json");
    let out = ok(&["sweep-only", "--task", "blobs", "--snapshot", &snap, "--snapshot-out", &after]);
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("outcome="), "{line}");
    let saved = Dnn::from_json(&std::fs::read_to_string(&after).unwrap()).unwrap();
    if line.starts_with("outcome=improved") {
        assert_ne!(saved.to_json(), constant_classifier(8, 4));
    } else {
        assert_eq!(saved.to_json(), constant_classifier(8, 4));
    }
}

#[test]
fn classify_writes_records() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "c.csv");
    ok(&["classify", "--task", "blobs", "--epochs", "4", "--out", &out]);
    let csv = read_csv(Path::new(&out));
    assert!(csv.comments[0].starts_with("classify task=blobs"));
    let gd = csv.rows.iter().filter(|r| r[col("phase")] == "gd").count();
    assert!((1..=4).contains(&gd));
    assert!(csv.rows.iter().all(|r| !r[col("test_accuracy")].is_empty()));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let code = |args: &[&str]| gdsolver(args).status.code();
    assert_eq!(code(&["regress", "--task", "affine", "--optimizer", "rmsprop"]), Some(2));
    assert_eq!(code(&["regress", "--task", "affine", "--epochs", "0"]), Some(2));
    assert_eq!(code(&["regress", "--task", "blobs"]), Some(2));
    assert_eq!(code(&["regress", "--task", "affine", "--radius", "-1"]), Some(2));
    assert_eq!(code(&["export-lp", "--task", "affine"]), Some(2));

    let missing = dir.path().join("none");
    let out = gdsolver(&["experiment2", "--task", "mnist", "--mnist-dir", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train-images-idx3-ubyte") && err.contains("train-labels-idx1-ubyte"), "{err}");

    let unwritable = dir.path().join("no/such/dir/out.csv");
    assert_eq!(
        code(&["experiment1", "--task", "identity", "--epochs", "1", "--out", unwritable.to_str().unwrap()]),
        Some(3)
    );
    let garbage = path_str(&dir, "garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    assert_eq!(code(&["sweep-only", "--task", "affine", "--snapshot", &garbage]), Some(3));
}
