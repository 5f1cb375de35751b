mod common;

use std::path::Path;
use std::process::{Command, Output};

fn explore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_explore")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = explore(&["build-ratings", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"));
    assert_eq!(explore(&["launch"]).status.code(), Some(1));
    assert_eq!(explore(&[]).status.code(), Some(1));
}

#[test]
fn help_documents_every_subcommand() {
    let out = explore(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let top = text(&out.stdout);
    for sub in ["build-ratings", "train", "evaluate", "recommend", "coldstart", "serve"] {
        assert!(top.contains(sub), "{sub} missing from --help");
        let out = explore(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        assert!(text(&out.stdout).contains("--seed"));
    }
    let train = text(&explore(&["train", "--help"]).stdout);
    for flag in ["--matrix", "--catalog", "--playlist-2022", "--no-mf", "--dims", "--neighbors"] {
        assert!(train.contains(flag), "train --help lacks {flag}");
    }
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = explore(&[
        "build-ratings",
        "--events",
        "/definitely/not/here.tsv",
        "--out",
        &s(&dir.path().join("m.xplm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("cannot open"));
}

#[test]
fn strict_mode_rejects_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path(), 1);
    let out_path = s(&dir.path().join("m.xplm"));
    let lenient = explore(&["build-ratings", "--events", &s(&corpus.events), "--out", &out_path]);
    assert_eq!(lenient.status.code(), Some(0), "{}", text(&lenient.stderr));
    assert!(text(&lenient.stderr).contains("1 skipped lines"));
    let strict = explore(&["build-ratings", "--events", &s(&corpus.events), "--out", &out_path, "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn seed_is_announced() {
    let out = explore(&["evaluate", "--matrix", "/nope.xplm"]);
    assert!(text(&out.stderr).contains("seed: 42"));
    let out = explore(&["evaluate", "--matrix", "/nope.xplm", "--seed", "9"]);
    assert!(text(&out.stderr).contains("seed: 9"));
}

#[test]
fn bad_month_is_a_usage_error() {
    let out = explore(&["build-ratings", "--events", "e", "--out", "o", "--from", "2022/01"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_recommend_coldstart_round() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path(), 4);
    let matrix = s(&dir.path().join("m.xplm"));
    let model = s(&dir.path().join("model.xpls"));
    let grown = s(&dir.path().join("grown.xpls"));
    assert!(explore(&["build-ratings", "--events", &s(&corpus.events), "--catalog", &s(&corpus.catalog), "--out", &matrix])
        .status
        .success());
    let out = explore(&[
        "train",
        "--matrix",
        &matrix,
        "--catalog",
        &s(&corpus.catalog),
        "--playlist-2022",
        &s(&corpus.playlist_2022),
        "--playlist-all-time",
        &s(&corpus.playlist_all_time),
        "--out",
        &model,
        "--dims",
        "4",
        "--epochs",
        "15",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let out = explore(&["recommend", "--snapshot", &model, "--user", "user05", "--k", "4", "--format", "table"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 5);

    let out = explore(&[
        "recommend", "--snapshot", &model, "--user", "user05", "--k", "3", "--source", "best_of_all_time",
        "--algorithm", "mf", "--energy", "0.3,0.9",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let playlist: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entries = playlist["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert!(entries.iter().all(|e| e["source"] == "CROSSWALK"));

    let out = explore(&["recommend", "--snapshot", &model, "--user", "user05", "--energy", "0.9,0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("energy"));
    let out = explore(&["recommend", "--snapshot", &model, "--user", "nobody"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("unknown user"));

    let out = explore(&[
        "coldstart", "--snapshot", &model, "--seeds", &s(&corpus.seeds), "--user-id", "fresh", "--out", &grown, "--k", "5",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("~cold:fresh"));
    let first: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(first["entries"].as_array().unwrap().len(), 5);

    let out = explore(&["recommend", "--snapshot", &grown, "--user", "~cold:fresh", "--k", "5"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let again: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(again, first);
}

#[test]
fn evaluate_formats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::write_corpus(dir.path(), 5);
    let matrix = s(&dir.path().join("m.xplm"));
    assert!(explore(&["build-ratings", "--events", &s(&corpus.events), "--out", &matrix]).status.success());
    let out = explore(&["evaluate", "--matrix", &matrix, "--format", "table", "--k", "5"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.contains("MAP@5") && table.contains("RMSE"));

    let report = dir.path().join("report.json");
    let out = explore(&["evaluate", "--matrix", &matrix, "--out", &s(&report), "--seed", "7"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["seed"], 7);
    assert_eq!(parsed["k"], 3);
    let map = parsed["map_at_k"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));

    let out = explore(&["evaluate", "--matrix", &matrix, "--train-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}
