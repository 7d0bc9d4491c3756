use std::fs;

use ferrycache::exec::Execution;
use ferrycache::experiment::{run_experiment, ExperimentSpec, Scenario};
use ferrycache::metrics::EpochRecord;
use ferrycache::sim::SimConfig;

fn spec(scenario: Scenario, seeds: Vec<u64>, dir: &std::path::Path) -> ExperimentSpec {
    ExperimentSpec {
        scenario,
        base: SimConfig {
            duration: 4_000.0,
            ..SimConfig::desk()
        },
        seeds,
        output_dir: dir.to_path_buf(),
        execution: Execution::default(),
    }
}

#[test]
fn bound_only_writes_one_row_per_community() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec(Scenario::BoundOnly, vec![1], dir.path())).unwrap();
    assert_eq!(report.files, vec![dir.path().join("bound.csv")]);
    let text = fs::read_to_string(dir.path().join("bound.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn two_seeds_give_distinct_series_with_one_schema() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&spec(Scenario::Custom, vec![1, 2], dir.path())).unwrap();
    let a = fs::read_to_string(dir.path().join("fedmab_selective_seed1.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("fedmab_selective_seed2.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(a.lines().next(), Some(EpochRecord::CSV_HEADER));
    assert_eq!(b.lines().next(), Some(EpochRecord::CSV_HEADER));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("fedmab_selective,2,"));
}

#[test]
fn rerun_overwrites_with_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(Scenario::AccessDelay, vec![3], dir.path());
    let first = run_experiment(&s).unwrap();
    let before: Vec<Vec<u8>> = first.files.iter().map(|f| fs::read(f).unwrap()).collect();
    let second = run_experiment(&s).unwrap();
    assert_eq!(first.files, second.files);
    let after: Vec<Vec<u8>> = second.files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(before, after);
    assert!(dir.path().join("delay_series.csv").exists());
    assert_eq!(first.summary.len(), 6);
}

#[test]
fn sequential_and_parallel_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(Scenario::LatencySweep, vec![1, 2], &dir.path().join("seq"));
    s.execution = Execution::Sequential;
    let seq = run_experiment(&s).unwrap();
    s.execution = Execution::Parallel;
    s.output_dir = dir.path().join("par");
    let par = run_experiment(&s).unwrap();
    assert_eq!(seq.summary, par.summary);
    for (x, y) in seq.files.iter().zip(&par.files) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn preference_shift_reports_reactivity_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(Scenario::PreferenceShift, vec![1, 2], dir.path());
    s.base.duration = 12_000.0;
    let report = run_experiment(&s).unwrap();
    assert_eq!(report.reactivity.len(), 2 * 2);
    for row in &report.reactivity {
        assert!((0.0..=1.0).contains(&row.report.zeta_cross));
    }
    assert!(dir.path().join("reactivity.csv").exists());
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("taken");
    fs::write(&file, "").unwrap();
    assert!(run_experiment(&spec(Scenario::Custom, vec![1], &file)).is_err());
}
