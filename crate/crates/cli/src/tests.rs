use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::execute;
use crate::error::{CliError, Result};

const STAGES: [&str; 6] = ["logs", "ingest", "features", "fit", "predict", "eval"];

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn metrocast(args: &[&str]) -> Result<bool> {
    execute(std::iter::once("metrocast").chain(args.iter().copied()))
}

fn failure(args: &[&str]) -> CliError {
    match metrocast(args) {
        Ok(_) => panic!("{args:?} succeeded"),
        Err(e) => e,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn run_toy(root: &Path) {
    let (config, out, truth) = (toy_config(), root.join("out"), root.join("truth"));
    metrocast(&["run", "--config", s(&config), "--out", s(&out), "--truth-dir", s(&truth), "--threads", "1"]).unwrap();
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn toy_pipeline_runs_end_to_end_and_reproduces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_toy(a.path());

    for stage in STAGES {
        let m: Value = serde_json::from_slice(&fs::read(a.path().join("out").join(stage).join("manifest.json")).unwrap())
            .unwrap();
        assert_eq!(m["format_version"], 1);
        assert!(!m["outputs"].as_array().unwrap().is_empty(), "{stage}");
        if stage != "logs" {
            assert!(!m["inputs"].as_array().unwrap().is_empty(), "{stage}");
        }
    }
    let metrics = fs::read_to_string(a.path().join("out/eval/metrics.csv")).unwrap();
    assert!(metrics.lines().count() > 1);
    assert!(metrics.lines().any(|l| l.starts_with("all,")));
    assert!(a.path().join("truth/ground_truth.json").exists());
    assert!(!a.path().join("out/logs/ground_truth.json").exists());

    run_toy(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs between runs", k.display());
    }
}

#[test]
fn one_disruption_stops_at_features() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("one.json");
    fs::write(
        &cfg,
        r#"{"seed": 1, "threads": 1, "simulation": {"stations": 12, "days": 1, "disruptions_per_day": 0.0,
            "scripted": [{"day": 0, "start_hour": 10.0, "duration_minutes": 8.0, "location": 5}]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let err = failure(&["run", "--config", s(&cfg), "--out", s(&out), "--truth-dir", s(&dir.path().join("truth"))]);
    assert_eq!(err.kind(), "TooFewDisruptions");
    assert_eq!(err.exit_code(), 1);
    assert!(out.join("ingest/manifest.json").exists());
    assert!(!out.join("features").exists());

    let err = failure(&["fit", "--features", s(&out.join("features")), "--out", s(&out.join("fit"))]);
    assert_eq!((err.kind(), err.exit_code()), ("Io", 1));
}

#[test]
fn unconverged_fit_withholds_draws_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let (logs, ingest, feats) = (dir.path().join("logs"), dir.path().join("ingest"), dir.path().join("features"));
    let truth = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.json");
    fs::write(&sim, r#"{"stations": 12, "days": 5, "disruptions_per_day": 2.0}"#).unwrap();
    let steps: [Vec<&str>; 3] = [
        vec!["simulate", "--config", s(&sim), "--out", s(&logs), "--truth-dir", s(truth.path()), "--seed", "7"],
        vec!["ingest", "--logs", s(&logs), "--out", s(&ingest)],
        vec!["features", "--ingest", s(&ingest), "--out", s(&feats), "--split", "0.8"],
    ];
    for args in &steps {
        metrocast(args).unwrap_or_else(|e| panic!("{args:?}: {}", e.to_json()));
    }
    let fit_dir = dir.path().join("fit");
    let short = ["fit", "--features", s(&feats), "--out", s(&fit_dir), "--family", "st"];
    let short = [&short[..], &["--chains", "4", "--warmup", "100", "--draws", "10", "--max-depth", "6"]].concat();
    let err = failure(&short);
    assert_eq!((err.kind(), err.exit_code()), ("NotConverged", 1));
    assert!(fit_dir.join("diagnostics.json").exists());
    assert!(!fit_dir.join("draws.csv").exists());
    let diag: Value = serde_json::from_slice(&fs::read(fit_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["converged"], false);
    assert!(diag["max_rhat"].as_f64().unwrap() > 1.05);

    metrocast(&[&short[..], &["--force"]].concat()).unwrap();
    assert!(fit_dir.join("draws.csv").exists());
}

#[test]
fn usage_errors_are_reported_as_json() {
    let err = failure(&["fit", "--features", "x", "--out", "y", "--family", "bogus"]);
    assert_eq!((err.kind(), err.exit_code()), ("Usage", 2));
    let report: Value = serde_json::from_str(&err.to_json()).unwrap();
    assert_eq!(report["error"], "Usage");
    assert!(report["message"].as_str().unwrap().contains("bogus"));

    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("logs");
    let err = failure(&["simulate", "--out", s(&logs), "--truth-dir", s(&logs.join("truth")), "--days", "1"]);
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("separate"));

    let err = failure(&["ingest", "--logs", s(&dir.path().join("missing")), "--out", s(&dir.path().join("i"))]);
    assert_eq!((err.kind(), err.exit_code()), ("Io", 1));
}

