//! End-to-end runs of the `simpdm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use simpdm::bench::{mean_impute, rmse};
use simpdm::dataset::{load_csv, CsvOptions, NormalizationParams, RawCsv, Table};
use simpdm::numeric::Matrix;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn simpdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simpdm"))
        .args(args)
        .env("SIMPDM_DATA_DIR", data_dir())
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = simpdm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    simpdm(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_mask(path: &Path) -> Matrix {
    let raw = RawCsv::read(path).unwrap();
    let rows: Vec<Vec<f64>> = raw
        .records
        .iter()
        .map(|r| r.iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    ok(&[
        "simulate",
        "--input",
        "iris",
        "--mechanism",
        "mcar",
        "--ratio",
        "0.3",
        "--seed",
        seed,
        "--out-dir",
        s(dir),
    ]);
}

#[test]
fn simulate_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "7");
    let mask = read_mask(&dir.path().join("iris.mask.csv"));
    let masked = RawCsv::read(dir.path().join("iris.masked.csv")).unwrap();
    let holdout = RawCsv::read(dir.path().join("iris.holdout.csv")).unwrap();
    let original = RawCsv::read(data_dir().join("iris.csv")).unwrap();

    let ones = mask.sum() as usize;
    let fraction = ones as f64 / (mask.rows() * mask.cols()) as f64;
    assert!((fraction - 0.3).abs() < 0.03, "masked fraction {fraction}");
    assert_eq!(holdout.records.len(), ones);
    for (i, row) in masked.records.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if mask[(i, j)] == 1.0 {
                assert!(cell.is_empty());
            } else {
                assert_eq!(cell, &original.records[i][j]);
            }
        }
    }
    for name in ["iris.masked.csv", "iris.mask.csv", "iris.holdout.csv"] {
        assert!(dir.path().join(format!("{name}.meta.json")).is_file());
    }
}

#[test]
fn simulate_is_repeatable() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    simulate(a.path(), "3");
    simulate(b.path(), "3");
    simulate(c.path(), "4");
    let read = |d: &Path| std::fs::read(d.join("iris.masked.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn simulate_rejects_bad_ratio_and_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&[
            "simulate",
            "--input",
            "iris",
            "--ratio",
            "0",
            "--out-dir",
            s(dir.path())
        ]),
        2
    );
    assert_eq!(
        code(&[
            "simulate",
            "--input",
            "no_such_table",
            "--out-dir",
            s(dir.path())
        ]),
        1
    );
}

#[test]
fn round_trip_beats_mean_imputation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "5");
    let masked = d.join("iris.masked.csv");
    let ckpt = d.join("models/nested/iris.ckpt");
    let out = d.join("iris.imputed.csv");
    ok(&[
        "train",
        "--input",
        s(&masked),
        "--mask",
        s(&d.join("iris.mask.csv")),
        "--checkpoint",
        s(&ckpt),
        "--seed",
        "5",
    ]);
    assert!(ckpt.is_file(), "checkpoint directory created");
    assert!(Path::new(&format!("{}.meta.json", s(&ckpt))).is_file());

    let trace = std::fs::read_to_string(format!("{}.trace.jsonl", s(&ckpt))).unwrap();
    let totals: Vec<f64> = trace
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["total"]
                .as_f64()
                .unwrap()
        })
        .collect();
    assert_eq!(totals.len(), 2000);
    assert!(totals.last().unwrap() < totals.first().unwrap());

    ok(&[
        "impute",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&masked),
        "--output",
        s(&out),
        "--seed",
        "5",
    ]);
    let opts = CsvOptions::default();
    let truth = load_csv(data_dir().join("iris.csv"), &opts).unwrap();
    let holes = load_csv(&masked, &opts).unwrap();
    let imputed = load_csv(&out, &opts).unwrap();
    let mask = read_mask(&d.join("iris.mask.csv"));
    let scaling = NormalizationParams::fit(&truth);
    let score = |t: &Table| rmse(&truth, t, &mask, &scaling).unwrap().unwrap();
    let baseline = score(&mean_impute(&holes).unwrap().table);
    let model = score(&imputed);
    assert!(model < baseline, "model {model} vs mean {baseline}");
}

#[test]
fn gamma_zero_trains_and_ensemble_writes_spread() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "2");
    let masked = d.join("iris.masked.csv");
    let ckpt = d.join("base.ckpt");
    ok(&[
        "train",
        "--input",
        s(&masked),
        "--checkpoint",
        s(&ckpt),
        "--gamma",
        "0",
        "--no-augment",
        "--epochs",
        "20",
    ]);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{}.meta.json", s(&ckpt))).unwrap())
            .unwrap();
    assert_eq!(meta["config"]["gamma"], 0.0);
    assert_eq!(meta["config"]["augment"], false);
    let trace = std::fs::read_to_string(d.join("base.ckpt.trace.jsonl")).unwrap();
    // the alignment term is still reported but carries no weight
    for line in trace.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let f = |k: &str| r[k].as_f64().unwrap();
        assert!((f("total") - f("dm1") - f("dm2")).abs() <= 1e-12 * f("total").abs());
    }

    let out = d.join("filled.csv");
    ok(&[
        "impute",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&masked),
        "--output",
        s(&out),
        "--ensemble",
        "5",
    ]);
    let spread = read_mask(&d.join("filled.std.csv"));
    let mask = read_mask(&d.join("iris.mask.csv"));
    assert_eq!(spread.shape(), mask.shape());
    for i in 0..mask.rows() {
        for j in 0..mask.cols() {
            if mask[(i, j)] == 0.0 {
                assert_eq!(spread[(i, j)], 0.0);
            } else {
                assert!(spread[(i, j)] >= 0.0);
            }
        }
    }
}

#[test]
fn complete_input_is_returned_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "1");
    let ckpt = d.join("m.ckpt");
    ok(&[
        "train",
        "--input",
        s(&d.join("iris.masked.csv")),
        "--checkpoint",
        s(&ckpt),
        "--epochs",
        "5",
    ]);
    let input = data_dir().join("iris.csv");
    let out = d.join("same.csv");
    ok(&[
        "impute",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&input),
        "--output",
        s(&out),
    ]);
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "9");
    let masked = d.join("iris.masked.csv");
    let ckpt = d.join("m.ckpt");

    // mask file that disagrees with the empty cells
    assert_eq!(
        code(&[
            "train",
            "--input",
            s(&masked),
            "--mask",
            s(&d.join("iris.mask.csv")),
            "--checkpoint",
            s(&ckpt),
            "--epochs",
            "1",
            "--null-token",
            "5.1",
        ]),
        4
    );

    let config = d.join("bad.toml");
    std::fs::write(&config, "epoch = 3\n").unwrap();
    assert_eq!(
        code(&[
            "train",
            "--input",
            s(&masked),
            "--checkpoint",
            s(&ckpt),
            "--config",
            s(&config),
        ]),
        2
    );

    assert_eq!(
        code(&[
            "train",
            "--input",
            s(&masked),
            "--checkpoint",
            s(&ckpt),
            "--lr",
            "1e300",
            "--epochs",
            "3",
        ]),
        3
    );
    assert!(d.join("m.ckpt.diagnostics.json").is_file());

    ok(&[
        "train",
        "--input",
        s(&masked),
        "--checkpoint",
        s(&ckpt),
        "--epochs",
        "1",
    ]);
    let other = d.join("other.csv");
    std::fs::write(&other, "a,b\n1,\n2,3\n").unwrap();
    assert_eq!(
        code(&[
            "impute",
            "--checkpoint",
            s(&ckpt),
            "--input",
            s(&other),
            "--output",
            s(&d.join("x.csv")),
        ]),
        4
    );
    assert_eq!(
        code(&[
            "impute",
            "--checkpoint",
            s(&d.join("absent.ckpt")),
            "--input",
            s(&masked),
            "--output",
            s(&d.join("x.csv")),
        ]),
        1
    );
}

/// Report JSON with wall-clock fields removed.
fn without_timings(mut v: Value) -> Value {
    match &mut v {
        Value::Object(map) => {
            map.remove("ms");
            map.remove("wall_ms");
            for x in map.values_mut() {
                *x = without_timings(x.take());
            }
        }
        Value::Array(items) => {
            for x in items.iter_mut() {
                *x = without_timings(x.take());
            }
        }
        _ => {}
    }
    v
}

#[test]
fn benchmark_reports_every_run_and_repeats() {
    let run = |dir: &Path| {
        ok(&[
            "benchmark",
            "--datasets",
            "iris",
            "--methods",
            "mean,knn,simpdm",
            "--repeats",
            "5",
            "--epochs",
            "10",
            "--out-dir",
            s(dir),
        ]);
        let json: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap())
                .unwrap();
        let csv = RawCsv::read(dir.join("report.csv")).unwrap();
        (json, csv)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (json, csv) = run(a.path());
    assert_eq!(csv.records.len(), 15);
    let ranks = json["ranks"].as_array().expect("rank summary");
    assert_eq!(ranks.len(), 3);
    assert!(a.path().join("report.csv.meta.json").is_file());

    let (again, _) = run(b.path());
    assert_eq!(without_timings(json), without_timings(again));
}
