use histtest::adversarial::EnsembleKind;
use histtest::harness::{run, write_svg, ExperimentConfig, ExperimentKind, ExperimentResult, BUILD_ID};
use histtest::par::Execution;

fn small(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        ks: vec![8],
        ds: vec![1],
        epss: vec![0.5],
        ensemble: EnsembleKind::Checkerboard,
        budgets: vec![200.0, 2000.0],
        trials: 12,
        seed: 42,
        repetitions: Some(3),
        ..Default::default()
    }
}

fn csv_of(result: &ExperimentResult) -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    result.write_csv(&path).unwrap();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn power_csv_is_identical_across_execution_modes() {
    let cfg = small(ExperimentKind::Power);
    let seq = run(&cfg, Execution::Sequential).unwrap();
    let par = run(&cfg, Execution::Parallel).unwrap();
    let again = run(&cfg, Execution::Parallel).unwrap();
    assert_eq!(csv_of(&seq), csv_of(&par));
    assert_eq!(csv_of(&par), csv_of(&again));
    let text = csv_of(&seq);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,k,d,eps,budget,trials,null_reject,alt_reject,mean_samples,C,seed,build"
    );
    assert_eq!(lines.count(), 2);
    assert!(text.contains(BUILD_ID));
}

#[test]
fn more_budget_means_more_power() {
    let res = run(&small(ExperimentKind::Power), Execution::default()).unwrap();
    assert!(res.rows[1].alt_reject >= res.rows[0].alt_reject);
    assert!(res.rows.iter().all(|r| r.null_reject <= 0.5));
}

#[test]
fn robustness_rows_are_labelled_by_eta() {
    let cfg = ExperimentConfig { etas: vec![0.0, 0.05], budgets: vec![500.0], ..small(ExperimentKind::Robustness) };
    let res = run(&cfg, Execution::default()).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert!(res.rows[0].experiment.starts_with("robustness:eta="));
    assert_eq!(res.rows[0].budget, 1000.0);
}

#[test]
fn calibration_and_outputs() {
    let cfg = ExperimentConfig { c_min: 1.0 / 4096.0, c_steps: 30, trials: 30, ..small(ExperimentKind::Calibrate) };
    let res = run(&cfg, Execution::default()).unwrap();
    assert!(!res.partial);
    let last = res.calibration.last().unwrap();
    assert_eq!(last.c, res.c);
    assert!(last.null_error <= 1.0 / 3.0 && last.alt_error <= 1.0 / 3.0);

    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    res.write_json(&json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(v.get("C").is_some() && v.get("rows").is_some());
    let svg = dir.path().join("r.svg");
    assert!(write_svg(&res, &svg));
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn time_limit_marks_partial_results() {
    let cfg = ExperimentConfig { ks: vec![8, 16, 32], time_limit_secs: Some(0.0), ..small(ExperimentKind::Power) };
    let res = run(&cfg, Execution::default()).unwrap();
    assert!(res.partial);
}

#[test]
fn bad_configs_are_rejected() {
    let cfg = ExperimentConfig { trials: 0, ..small(ExperimentKind::Power) };
    assert!(run(&cfg, Execution::default()).is_err());
    let cfg = ExperimentConfig { ks: vec![8], ..small(ExperimentKind::Scaling) };
    assert!(run(&cfg, Execution::default()).is_err());
    let cfg = ExperimentConfig { ks: vec![12], ..small(ExperimentKind::Power) };
    assert!(run(&cfg, Execution::default()).is_err());
}
