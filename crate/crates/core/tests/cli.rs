//! The command-line front end and the experiment output formats.

use std::path::Path;
use std::process::Command;

use mtd2d::experiment::{
    csv_string, loglog_slope, median, trial_seed, write_csv, Case, ExperimentConfig, ExperimentKind, Snr,
    SummaryRow, TrialRecord, SUMMARY_COLUMNS, TRIAL_COLUMNS,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtd2d"))
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn record() -> TrialRecord {
    TrialRecord {
        experiment: "size-sweep".into(),
        case: "known".into(),
        size: 1000,
        snr: "inf".into(),
        gamma_true: 0.1,
        trial: 3,
        seed: 42,
        err_alpha: 0.0125,
        err_gamma: 0.001,
        gamma_est: 0.0999,
        objective: 1.5e-12,
        iterations: 87,
        stop: "gradient-tolerance".into(),
        failure: String::new(),
        seconds: 2.5,
    }
}

#[test]
fn trial_csv_layout() {
    let text = csv_string(&[record()]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TRIAL_COLUMNS.join(","));
    assert_eq!(
        lines.next().unwrap(),
        "size-sweep,known,1000,inf,0.1,3,42,0.0125,0.001,0.0999,1.5e-12,87,gradient-tolerance,,2.5"
    );
    assert!(lines.next().is_none());
}

#[test]
fn summary_csv_layout_and_empty_files() {
    let row = SummaryRow {
        experiment: "snr-sweep".into(),
        case: "ignored".into(),
        size: 2000,
        snr: "0.5".into(),
        trials: 10,
        failures: 1,
        median_err_alpha: 0.25,
        mean_err_alpha: 0.5,
        median_err_gamma: 0.125,
    };
    let text = csv_string(&[row]).unwrap();
    assert_eq!(text.lines().next().unwrap(), SUMMARY_COLUMNS.join(","));
    assert_eq!(text.lines().nth(1).unwrap(), "snr-sweep,ignored,2000,0.5,10,1,0.25,0.5,0.125");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    write_csv::<TrialRecord>(&p, &TRIAL_COLUMNS, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), TRIAL_COLUMNS.join(","));
}

#[test]
fn config_parsing() {
    let cfg: ExperimentConfig =
        serde_json::from_str(r#"{"experiment": "snr-sweep", "snrs": ["inf", 0.5], "cases": ["known"], "trials": 2}"#)
            .unwrap();
    assert_eq!(cfg.experiment, ExperimentKind::SnrSweep);
    assert_eq!(cfg.snrs, vec![Snr::NOISELESS, Snr(0.5)]);
    assert_eq!(cfg.cases, vec![Case::Known]);
    assert_eq!(cfg.trials, 2);
    assert_eq!(cfg.radius, 2.5);
    cfg.validate().unwrap();
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trails": 2}"#).is_err());
    let bad = ExperimentConfig {
        sizes: vec![],
        ..ExperimentConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(!ExperimentConfig::default().paper_scale());
    let big = ExperimentConfig {
        sizes: vec![30000],
        ..ExperimentConfig::default()
    };
    assert!(big.paper_scale());
    assert_eq!("b".parse::<Case>().unwrap(), Case::Approximated);
    assert_eq!("inf".parse::<Snr>().unwrap(), Snr::NOISELESS);
    assert!("-1".parse::<Snr>().is_err());
}

#[test]
fn statistics_helpers() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
    let xs = [1000.0, 2000.0, 4000.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
    assert!((loglog_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    assert_ne!(trial_seed(0, 1000, 0, 0), trial_seed(0, 1000, 0, 1));
    assert_eq!(trial_seed(5, 2000, 1, 2), trial_seed(5, 2000, 1, 2));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(dir.path(), &["simulate", "--N", "120", "--seed", "7", "--snr", "2", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for ext in ["bin", "sep"] {
        let a = std::fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert!(manifest.to_string().contains("coefficients"));
}

#[test]
fn simulate_moments_recover_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["simulate", "--N", "300", "--seed", "3", "--out", "m"]).status.success());
    assert!(run(d, &["moments", "m.bin", "--out", "mom.bin"]).status.success());
    let o = run(
        d,
        &[
            "recover", "--moments", "mom.bin", "--case", "known", "--separation", "m.sep", "--truth", "m.json",
            "--starts", "2", "--out", "rec",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rec").join("result.json")).unwrap()).unwrap();
    assert!(result["result"]["gamma"].as_f64().is_some());
    assert!(result["metrics"]["err_alpha"].as_f64().unwrap() < 0.5);
    assert!(d.join("rec").join("estimate.pgm").exists());
}

#[test]
fn small_experiment_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "experiment", "--experiment", "size-sweep", "--sizes", "200", "--cases", "known,ignored", "--trials", "1",
            "--starts", "1", "--out", "sweep",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("sweep");
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().next().unwrap(), TRIAL_COLUMNS.join(","));
    assert_eq!(trials.lines().count(), 3);
    assert!(out.join("summary.csv").exists());
    assert!(out.join("config.json").exists());
    assert_eq!(std::fs::read_dir(out.join("trials")).unwrap().count(), 2);
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["simulate", "--N", "100", "--gamma", "-1"]).status.code(), Some(2));
    assert_eq!(run(d, &["simulate", "--N", "100", "--snr", "abc"]).status.code(), Some(2));
    assert_eq!(run(d, &["recover", "--moments", "missing.bin"]).status.code().map(|c| c != 0), Some(true));
    assert_eq!(run(d, &["experiment", "--sizes", "20000"]).status.code(), Some(2));
    assert!(!run(d, &["no-such-command"]).status.success());
}
