//! End-to-end tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn acqh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acqh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = acqh(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth_small(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "3",
        "--per-class",
        "25",
        "--dx",
        "12",
        "--dy",
        "10",
        "--seed",
        seed,
    ]);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth_small(&a, "1");
    synth_small(&b, "1");
    synth_small(&c, "2");
    for name in ["x.acqd", "y.acqd", "labels.acqd", "query_x.acqd", "query_y.acqd", "query_labels.acqd"] {
        let bytes_a = fs::read(a.join(name)).unwrap();
        let bytes_b = fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{} differs across identical seeds", name);
    }
    assert_ne!(
        fs::read(a.join("x.acqd")).unwrap(),
        fs::read(c.join("x.acqd")).unwrap(),
        "different seeds must differ"
    );
}

#[test]
fn full_pipeline_reaches_high_map() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", data.to_str().unwrap(), "--seed", "1"]);
    let model = tmp.path().join("model.acqh");
    let trace = tmp.path().join("trace.csv");
    ok(&[
        "train",
        "--x",
        data.join("x.acqd").to_str().unwrap(),
        "--y",
        data.join("y.acqd").to_str().unwrap(),
        "--labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--bits",
        "15",
        "--codebooks",
        "2",
        "--atoms",
        "16",
        "--iters",
        "40",
        "--tol",
        "1e-4",
    ]);
    let report = tmp.path().join("report");
    ok(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--query-x",
        data.join("query_x.acqd").to_str().unwrap(),
        "--query-y",
        data.join("query_y.acqd").to_str().unwrap(),
        "--query-labels",
        data.join("query_labels.acqd").to_str().unwrap(),
        "--db-labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);

    let map_csv = fs::read_to_string(report.join("map.csv")).unwrap();
    let mut seen = 0;
    for line in map_csv.lines().skip(1) {
        let (direction, value) = line.split_once(',').unwrap();
        let map: f64 = value.parse().unwrap();
        assert!(map >= 0.95, "{} MAP {} below 0.95", direction, map);
        seen += 1;
    }
    assert_eq!(seen, 2);

    let trace_csv = fs::read_to_string(&trace).unwrap();
    assert!(trace_csv.starts_with("iteration,objective,"));
    assert!(trace_csv.lines().count() >= 2);

    for name in ["topn_i2t.csv", "topn_t2i.csv", "pr_i2t.csv", "pr_t2i.csv"] {
        assert!(report.join(name).exists(), "{} missing", name);
    }
}

#[test]
fn train_defaults_match_documented_values() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--classes",
        "3",
        "--per-class",
        "20",
        "--dx",
        "40",
        "--dy",
        "36",
        "--seed",
        "3",
    ]);
    let model = tmp.path().join("model.acqh");
    // Only the iteration cap is overridden; K, m, n, lambda, mu stay at
    // their defaults.
    ok(&[
        "train",
        "--x",
        data.join("x.acqd").to_str().unwrap(),
        "--y",
        data.join("y.acqd").to_str().unwrap(),
        "--labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--iters",
        "1",
    ]);
    let info = ok(&["info", "--model", model.to_str().unwrap()]);
    assert!(info.contains("code length K    32"), "info:\n{}", info);
    assert!(info.contains("stages m         4"));
    assert!(info.contains("atoms n          256"));
    assert!(info.contains("lambda / mu      0.0001 / 0.01"));
    assert!(info.contains("bytes per item   4 (8-bit atom indices)"));
}

#[test]
fn query_emits_ranked_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "5");
    let model = tmp.path().join("model.acqh");
    ok(&[
        "train",
        "--x",
        data.join("x.acqd").to_str().unwrap(),
        "--y",
        data.join("y.acqd").to_str().unwrap(),
        "--labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--bits",
        "8",
        "--codebooks",
        "2",
        "--atoms",
        "8",
        "--iters",
        "10",
    ]);
    let out = tmp.path().join("ranked.csv");
    ok(&[
        "query",
        "--model",
        model.to_str().unwrap(),
        "--queries",
        data.join("query_y.acqd").to_str().unwrap(),
        "--modality",
        "text",
        "--k",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("query_id,rank,item_id,score"));
    let first = lines.next().unwrap();
    let cells: Vec<&str> = first.split(',').collect();
    assert_eq!(cells[0], "0");
    assert_eq!(cells[1], "1");
    cells[3].parse::<f64>().unwrap();
    // 15 queries (3 classes x 5) times k = 5 rows.
    assert_eq!(csv.lines().count(), 1 + 15 * 5);
}

#[test]
fn centered_training_round_trips_through_centers_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "7");
    let model = tmp.path().join("model.acqh");
    ok(&[
        "train",
        "--x",
        data.join("x.acqd").to_str().unwrap(),
        "--y",
        data.join("y.acqd").to_str().unwrap(),
        "--labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--bits",
        "8",
        "--codebooks",
        "2",
        "--atoms",
        "8",
        "--iters",
        "15",
        "--center",
    ]);
    let centers = tmp.path().join("model.acqh.centers.csv");
    assert!(centers.exists());
    let report = tmp.path().join("report");
    ok(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--query-x",
        data.join("query_x.acqd").to_str().unwrap(),
        "--query-y",
        data.join("query_y.acqd").to_str().unwrap(),
        "--query-labels",
        data.join("query_labels.acqd").to_str().unwrap(),
        "--db-labels",
        data.join("labels.acqd").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--centers",
        centers.to_str().unwrap(),
    ]);
    let map_csv = fs::read_to_string(report.join("map.csv")).unwrap();
    for line in map_csv.lines().skip(1) {
        let (_, value) = line.split_once(',').unwrap();
        assert!(value.parse::<f64>().unwrap() >= 0.95);
    }
}

#[test]
fn bad_inputs_yield_nonzero_exit() {
    let out = acqh(&["train", "--x", "/nonexistent.acqd"]);
    assert!(!out.status.success()); // missing required flags

    let out = acqh(&["info", "--model", "/nonexistent.acqh"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let out = acqh(&["synth", "--out", "/tmp/x", "--no-such-flag"]);
    assert!(!out.status.success());

    // Corrupt label file: one entry outside {0, 1}.
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "9");
    let labels = data.join("labels.acqd");
    let mut bytes = fs::read(&labels).unwrap();
    let last = bytes.len() - 1;
    bytes[last] = 2;
    fs::write(&labels, &bytes).unwrap();
    let out = acqh(&[
        "train",
        "--x",
        data.join("x.acqd").to_str().unwrap(),
        "--y",
        data.join("y.acqd").to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--model",
        tmp.path().join("m.acqh").to_str().unwrap(),
        "--bits",
        "4",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not 0 or 1"), "stderr: {}", stderr);
}
