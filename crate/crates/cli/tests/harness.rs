use std::fs;
use std::path::{Path, PathBuf};

use dr_cli::report::{csv_string, CSV_HEADER};
use dr_cli::{parse_config_str, run_experiment, RunOptions};

fn spec(text: &str) -> dr_cli::ExperimentSpec {
    parse_config_str(text, Path::new("inline.json")).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dr-harness-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn honest_two_round_is_always_correct() {
    let s = spec(r#"{"protocol":"alg3-2round","n":512,"k":600,"beta":"1/4","trials":10,"seed":3}"#);
    let out = run_experiment(&s, &RunOptions::default()).unwrap();
    assert_eq!(out.len(), 1);
    let sum = &out[0].summary;
    assert_eq!(sum.trials, 10);
    assert_eq!(sum.errors, 0);
    assert_eq!(sum.correct_freq, 1.0);
    assert!(sum.bounds_ok);
}

#[test]
fn capped_trials_count_as_errors() {
    let s = spec(r#"{"protocol":"alg1","n":64,"k":32,"beta":0,"trials":4,"seed":1,"round_cap":1}"#);
    let out = run_experiment(&s, &RunOptions::default()).unwrap();
    let sum = &out[0].summary;
    assert_eq!(sum.errors, 4);
    assert_eq!(sum.trials, 0);
    assert!(!sum.bounds_ok);
    assert!(!sum.error_messages.is_empty());
}

#[test]
fn cells_come_out_in_grid_order() {
    let s = spec(r#"{"protocol":["query-all","alg1"],"n":[64,32],"k":16,"trials":1,"seed":1}"#);
    let labels: Vec<(String, usize)> = run_experiment(&s, &RunOptions::default())
        .unwrap()
        .iter()
        .map(|r| (r.summary.protocol.to_string(), r.summary.n))
        .collect();
    let want = [("alg1", 32), ("alg1", 64), ("query-all", 32), ("query-all", 64)];
    let want: Vec<(String, usize)> = want.iter().map(|(p, n)| (p.to_string(), *n)).collect();
    assert_eq!(labels, want);
}

#[test]
fn empty_result_set_gives_header_only() {
    assert_eq!(csv_string(&[]).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn artifacts_land_in_non_ascii_directory() {
    let dir = scratch("résultats-ü");
    let s = spec(r#"{"protocol":"static-crash","adversary":"random-crash","n":16,"k":4,"beta":"1/4","trials":3,"seed":2,"record_events":true}"#);
    let opts = RunOptions {
        jobs: 1,
        out_dir: Some(dir.clone()),
    };
    run_experiment(&s, &opts).unwrap();
    let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(fs::read_to_string(dir.join("trials.ndjson")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_dir(dir.join("events")).unwrap().count(), 3);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn rerun_gives_identical_bytes_across_thread_counts() {
    let text = r#"{"protocol":["alg4-logn","rapid-crash"],"adversary":"none","n":64,"k":8,"beta":"1/4","trials":6,"seed":9}"#;
    let s = spec(text);
    let csv = |jobs| {
        let out = run_experiment(&s, &RunOptions { jobs, out_dir: None }).unwrap();
        csv_string(&out.iter().map(|r| r.summary.clone()).collect::<Vec<_>>()).unwrap()
    };
    let a = csv(1);
    assert_eq!(a, csv(1));
    assert_eq!(a, csv(3));
}

#[test]
fn bound_expressions_are_checked_per_trial() {
    let s = spec(
        r#"{"protocol":"alg1","n":64,"k":32,"beta":0,"trials":3,"seed":5,
            "bounds":{"loose":"Q <= n","tight":"Q < 1"}}"#,
    );
    let out = run_experiment(&s, &RunOptions::default()).unwrap();
    let b = &out[0].summary.bounds;
    assert!(b.iter().find(|x| x.name == "loose").unwrap().ok);
    let tight = b.iter().find(|x| x.name == "tight").unwrap();
    assert!(!tight.ok);
    assert_eq!(tight.failures, 3);
    assert!(!out[0].summary.bounds_ok);
}

#[test]
fn unknown_bound_variable_is_reported() {
    let s = spec(r#"{"protocol":"query-all","n":8,"k":2,"trials":1,"bounds":["nonsense <= 1"]}"#);
    let out = run_experiment(&s, &RunOptions::default()).unwrap();
    let b = &out[0].summary.bounds[0];
    assert!(!b.ok);
    assert!(b.error.as_deref().unwrap_or("").contains("nonsense"));
}
