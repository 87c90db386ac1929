use std::path::Path;
use std::process::{Command, Output};

fn ueeg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ueeg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth_tiny(dir: &Path, name: &str) {
    let out = ueeg(
        dir,
        &[
            "synth",
            "--channels",
            "3",
            "--timesteps",
            "16",
            "--classes",
            "2",
            "--records",
            "24",
            "--difficulty",
            "easy",
            "--out",
            name,
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        ueeg(dir.path(), &["train", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(
        ueeg(dir.path(), &["train", "--preset", "SEED"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ueeg(dir.path(), &["gradcheck", "--geometry", "3,16"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(ueeg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn train_eval_encode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_tiny(d, "tiny.eegc");
    let out = ueeg(
        d,
        &[
            "train",
            "--arch",
            "four_cnn",
            "--data",
            "tiny.eegc",
            "--epochs",
            "2",
            "--out",
            "run",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(
        stdout(&out)
            .lines()
            .filter(|l| l.starts_with("epoch"))
            .count(),
        2
    );
    for file in ["checkpoint.ueeg", "history.json", "config.json"] {
        assert!(d.join("run").join(file).exists(), "{file}");
    }

    let out = ueeg(
        d,
        &[
            "eval",
            "--checkpoint",
            "run",
            "--data",
            "tiny.eegc",
            "--csv",
            "report.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(
        csv.starts_with("dataset,model,acc,f1,auc\nsynthetic,FourCNN,"),
        "{csv}"
    );
    assert!(stdout(&out).contains(&csv));

    // the saved configuration reproduces the run exactly
    let out = ueeg(
        d,
        &["train", "--config", "run/config.json", "--out", "rerun"],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let a = std::fs::read(d.join("run/checkpoint.ueeg")).unwrap();
    let b = std::fs::read(d.join("rerun/checkpoint.ueeg")).unwrap();
    assert_eq!(a, b);

    let out = ueeg(
        d,
        &[
            "encode",
            "--checkpoint",
            "run/checkpoint.ueeg",
            "--data",
            "tiny.eegc",
            "--out",
            "emb.eegc",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let emb = ueeg::data::EegDataset::load(&d.join("emb.eegc")).unwrap();
    assert_eq!((emb.len(), emb.channels), (24, 1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_tiny(d, "tiny.eegc");
    let out = ueeg(
        d,
        &[
            "train",
            "--arch",
            "four_cnn",
            "--data",
            "missing.eegc",
            "--epochs",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("junk.eegc"), b"not a container").unwrap();
    assert_eq!(
        ueeg(d, &["train", "--arch", "four_cnn", "--data", "junk.eegc"])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        ueeg(
            d,
            &[
                "train",
                "--arch",
                "four_cnn",
                "--data",
                "tiny.eegc",
                "--epochs",
                "1",
                "--out",
                "run"
            ]
        )
        .status
        .code(),
        Some(0)
    );
    let out = ueeg(
        d,
        &[
            "eval",
            "--checkpoint",
            "run",
            "--preset",
            "SEED",
            "--records",
            "40",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry"));
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_tiny(d, "tiny.eegc");
    let out = ueeg(
        d,
        &[
            "train",
            "--arch",
            "four_cnn",
            "--data",
            "tiny.eegc",
            "--epochs",
            "5",
            "--lr",
            "1e30",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("training diverged at epoch 0"));
}

#[test]
fn csv_export_and_import() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_tiny(d, "tiny.eegc");
    let out = ueeg(
        d,
        &[
            "synth",
            "--preset",
            "ERN",
            "--records",
            "12",
            "--csv",
            "--out",
            "ern.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let out = ueeg(d, &["synth", "--import", "ern.csv", "--out", "ern.eegc"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let ds = ueeg::data::EegDataset::load(&d.join("ern.eegc")).unwrap();
    assert_eq!(
        (ds.name.as_str(), ds.channels, ds.timesteps, ds.len()),
        ("ERN", 56, 200, 12)
    );
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = ueeg(
        dir.path(),
        &["gradcheck", "--arch", "gru_encoder", "--layers"],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("ok")), "{text}");
    assert!(text.contains("layer conv2d"));
}

#[test]
fn bench_renders_the_grid_and_flags_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_tiny(d, "tiny.eegc");
    let suite = r#"{
        "cells": [
            {"arch": "four_cnn", "data": {"container": {"path": "tiny.eegc"}}},
            {"arch": "gru_encoder", "data": {"container": {"path": "tiny.eegc"}}},
            {"arch": "autoencoder", "data": {"container": {"path": "tiny.eegc"}}},
            {"arch": "four_cnn", "data": {"container": {"path": "ghost.eegc"}}}
        ],
        "max_epochs": 1
    }"#;
    std::fs::write(d.join("suite.json"), suite).unwrap();
    let out = ueeg(d, &["bench", "--suite", "suite.json", "--csv", "bench.csv"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table
        .lines()
        .any(|l| l.starts_with("FourCNN") && l.contains("ERROR")));
    let csv = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
