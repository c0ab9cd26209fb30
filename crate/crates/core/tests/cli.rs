//! The `wtdnet` binary end to end on a small synthetic case.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wtdnet::checkpoint::load_checkpoint_dir;
use wtdnet::config::RunConfig;
use wtdnet::dataio::read_predictions;
use wtdnet::pipeline::{ensemble_prediction, report_from_prediction, LOCK_FILE};
use wtdnet::preprocess::SplitSet;
use wtdnet::training::RunManifest;
use wtdnet::ModelKind;

fn wtdnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wtdnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wtdnet(args);
    assert!(
        out.status.success(),
        "wtdnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 90 weeks, 5x5 grid, 8-week windows; two members trained for two epochs.
fn small_case(dir: &Path) -> PathBuf {
    ok(&["synth", "--seed", "3", "--weeks", "90", "--side", "5", "--window", "8", "--out", s(dir)]);
    let config = dir.join("run.toml");
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("epochs = 80", "epochs = 2")
        .replace("ensemble_size = 10", "ensemble_size = 2");
    fs::write(&config, text).unwrap();
    config
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_refuses_short_records() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["synth", "--seed", "2", "--weeks", "320", "--side", "4", "--out", s(d.path())]);
    }
    assert_eq!(files(a.path()), files(b.path()));

    let c = tempfile::tempdir().unwrap();
    let out = wtdnet(&["synth", "--weeks", "100", "--out", s(c.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("too short"));
}

#[test]
fn full_pipeline_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_case(dir.path());
    let cfg_arg = s(&config);
    ok(&["train", "--config", cfg_arg]);
    let run_dir = dir.path().join("runs/synthetic/tdc-lstm");
    for f in ["member-0003.json", "member-0004.json", "manifest.json", "losses.csv"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    assert!(!run_dir.join(LOCK_FILE).exists());
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seeds, vec![3, 4]);
    assert_eq!(manifest.parameter_count.total, 9705);
    assert_eq!(manifest.histories[0].epochs.len(), 3);
    let losses = fs::read_to_string(run_dir.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 1 + 2 * 3);

    let table = ok(&["evaluate", "--config", cfg_arg]);
    let header = table.lines().next().unwrap();
    let order = ["RMSE[m]", "NRMSE", "BIAS[m]", "NBIAS", "MAPE", "rho", "NSE", "KGE"];
    let pos: Vec<usize> = order.iter().map(|c| header.find(c).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{header}");
    let csv = fs::read_to_string(run_dir.join("report_test.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..3], ["synthetic", "tdc-lstm", "test"]);
    // all eight table metrics are finite numbers
    for v in &row[4..12] {
        assert!(v.parse::<f64>().is_ok_and(f64::is_finite), "{csv}");
    }

    ok(&["predict", "--config", cfg_arg, "--split", "val"]);
    let preds = read_predictions(run_dir.join("predictions_synthetic_tdc-lstm_val.csv")).unwrap();
    let cfg = RunConfig::load(&config).unwrap();
    let data = wtdnet::pipeline::load_dataset(&cfg).unwrap();
    assert_eq!(preds.len(), data.count(SplitSet::Val));
    assert!(preds.iter().all(|p| p.std >= 0.0));

    ok(&["plot", "--config", cfg_arg]);
    let svg = fs::read_to_string(run_dir.join("forecast_synthetic_tdc-lstm_test.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("ensemble mean"));

    // identical config and seeds reproduce every checkpoint byte for byte
    let before: Vec<_> = load_checkpoint_dir(&run_dir).unwrap();
    let snapshot = |d: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = files(d)
            .into_iter()
            .filter(|(n, _)| n.starts_with("member-") || n.ends_with(".csv"))
            .collect();
        v.sort();
        v
    };
    let first = snapshot(&run_dir);
    ok(&["train", "--config", cfg_arg]);
    ok(&["evaluate", "--config", cfg_arg]);
    ok(&["predict", "--config", cfg_arg, "--split", "val"]);
    ok(&["plot", "--config", cfg_arg]);
    assert_eq!(snapshot(&run_dir), first);
    assert_eq!(load_checkpoint_dir(&run_dir).unwrap(), before);

    // a smaller ensemble replaces the earlier members
    ok(&["train", "--config", cfg_arg, "--ensemble-size", "1", "--seed", "9"]);
    let seeds: Vec<u64> = load_checkpoint_dir(&run_dir).unwrap().iter().map(|c| c.seed).collect();
    assert_eq!(seeds, vec![9]);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_case(dir.path());
    let out = dir.path().join("elsewhere");
    ok(&["train", "--config", s(&config), "--seed", "11", "--ensemble-size", "1", "--out", s(&out)]);
    assert!(out.join("synthetic/tdc-lstm/member-0011.json").is_file());

    let bad = wtdnet(&["train", "--config", s(&config), "--model", "transformer"]);
    assert!(!bad.status.success());
}

#[test]
fn preset_values_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_case(dir.path());
    let target = dir.path().join("target");
    fs::copy(target.join("synthetic.csv"), target.join("00425010001.csv")).unwrap();
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("sensor = \"synthetic\"", "sensor = \"00425010001\"")
        .replace("[training]", "[training]\npreset = \"00425010001\"");
    fs::write(&config, text).unwrap();
    ok(&["train", "--config", s(&config), "--ensemble-size", "1"]);
    let path = dir.path().join("runs/00425010001/tdc-lstm/manifest.json");
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!((manifest.training.learning_rate, manifest.training.l2), (0.001, 0.0025));
}

#[test]
fn failures_exit_nonzero_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_case(dir.path());
    let target = dir.path().join("target/synthetic.csv");
    let hidden = dir.path().join("hidden.csv");
    fs::rename(&target, &hidden).unwrap();
    let out = wtdnet(&["train", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synthetic.csv"));
    fs::rename(&hidden, &target).unwrap();

    // evaluation without checkpoints
    let out = wtdnet(&["evaluate", "--config", s(&config)]);
    assert!(!out.status.success());

    // a held lock blocks a second command
    let run_dir = dir.path().join("runs/synthetic/tdc-lstm");
    fs::create_dir_all(&run_dir).unwrap();
    fs::write(run_dir.join(LOCK_FILE), "1").unwrap();
    let out = wtdnet(&["train", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(LOCK_FILE));

    let out = wtdnet(&["train", "--config", s(&dir.path().join("missing.toml"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}

#[test]
fn perfect_oracle_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_case(dir.path());
    ok(&["train", "--config", s(&config), "--ensemble-size", "1"]);
    let cfg = RunConfig::load(&config).unwrap();
    let (data, mut pred) = ensemble_prediction(&cfg, &cfg.run_dir(), SplitSet::Test).unwrap();
    // leak the target into the forecast
    pred.mean = pred.observed.clone();
    let report = report_from_prediction(&pred, &data, ModelKind::TdcLstm, SplitSet::Test).unwrap();
    assert!((report.metrics.nse - 1.0).abs() < 1e-12);
    assert!((report.metrics.kge.unwrap() - 1.0).abs() < 1e-12);
    assert!(report.metrics.rmse.abs() < 1e-12);
}
