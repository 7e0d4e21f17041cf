use std::fs;

use nfl_core::harness::{run_sweep, summary_path, ExperimentConfig, TrialRow, TRIAL_COLUMNS};
use nfl_core::Error;

fn small_config(dir: &std::path::Path, name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(
        "protocols = requ, qu\nn = 1\nsizes = 1, 2\nfamilies = haar, orthogonal\n\
         source = oracle\ntrials = 6\nunitaries = 2\nseed = 11\n",
    )
    .unwrap();
    c.output = Some(dir.join(name));
    c
}

#[test]
fn resumed_sweep_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = small_config(dir.path(), "full.csv");
    run_sweep(&full, 2, None).unwrap();

    let part = small_config(dir.path(), "part.csv");
    let first = run_sweep(&part, 2, Some(7)).unwrap();
    assert_eq!(first.rows_written, 7);
    assert!(first.estimates.is_empty());
    // a torn trailing line from an interrupted write is discarded on resume
    let path = part.output.clone().unwrap();
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("requ,1,2,orth");
    fs::write(&path, text).unwrap();
    let second = run_sweep(&part, 1, None).unwrap();
    assert_eq!(second.rows_resumed, 7);
    assert_eq!(second.rows_written, 48 - 7);

    assert_eq!(fs::read(full.output.as_ref().unwrap()).unwrap(), fs::read(&path).unwrap());
    assert_eq!(
        fs::read(summary_path(full.output.as_ref().unwrap())).unwrap(),
        fs::read(summary_path(&path)).unwrap()
    );
}

#[test]
fn rows_follow_schema_and_summary_is_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "rows.csv");
    let report = run_sweep(&cfg, 0, None).unwrap();
    let text = fs::read_to_string(&report.output).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRIAL_COLUMNS.join(","));
    let rows: Vec<TrialRow> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(rows.len(), 48);
    assert!(rows.iter().all(|r| r.risk >= -1e-12 && r.wall_time_ms.is_none()));
    for est in &report.estimates {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| {
                r.protocol == est.protocol && r.size == est.size && Some(&r.family) == est.family.as_ref() && r.converged
            })
            .map(|r| r.risk)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - est.mean.unwrap()).abs() <= 1e-12);
        assert_eq!(est.trials, Some(6));
    }
}

#[test]
fn mismatched_existing_output_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "a.csv");
    run_sweep(&cfg, 1, Some(3)).unwrap();
    let mut other = cfg.clone();
    other.seed = 12;
    assert!(matches!(run_sweep(&other, 1, None), Err(Error::Parse(_))));
}

#[test]
fn unwritable_output_fails_before_compute() {
    let mut cfg = small_config(std::path::Path::new("/nonexistent-dir/for/sure"), "x.csv");
    cfg.trials = 1_000_000;
    assert!(matches!(run_sweep(&cfg, 1, None), Err(Error::Io(_))));
}

#[test]
fn empty_sizes_are_a_usage_error() {
    assert!(matches!(ExperimentConfig::parse("sizes =\n"), Err(Error::Parse(_))));
}

#[test]
fn timing_column_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), "t.csv");
    cfg.record_timing = true;
    let report = run_sweep(&cfg, 1, None).unwrap();
    let rows: Vec<TrialRow> = csv::Reader::from_path(&report.output)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert!(rows.iter().all(|r| r.wall_time_ms.is_some()));
}
