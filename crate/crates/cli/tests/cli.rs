use std::path::Path;
use std::process::{Command, Output};

fn histtest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histtest")).args(args).env_remove("HISTTEST_SEED").output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ensemble_chi_and_identity_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.json");
    let u = dir.path().join("u.json");
    let out = histtest(&["gen-ensemble", "--kind", "checkerboard", "--k", "16", "--d", "2", "--eps", "0.5", "--seed", "3", "-o", s(&q)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(&u, r#"{"dim":2,"domain":"unit_cube","pieces":[{"lo":[0,0],"hi":[1,1],"density":1}]}"#).unwrap();

    let chi = json(&histtest(&["chi", "--base", "u", "--p", s(&q), "--q", s(&q)]));
    assert!((chi["chi"].as_f64().unwrap() - 1.25).abs() < 1e-9);

    let same = histtest(&["identity-test", "--p", s(&u), "--q", s(&u), "--k", "16", "--eps", "0.5", "--budget", "20000"]);
    assert_eq!(same.status.code(), Some(0));
    let v = json(&same);
    assert_eq!(v["decision"], "accept");
    for key in ["statistic", "threshold", "samples_used", "m", "l", "j"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let far = histtest(&["identity-test", "--p", s(&u), "--q", s(&q), "--k", "16", "--eps", "0.5", "--budget", "20000"]);
    assert_eq!(far.status.code(), Some(1));
    assert_eq!(json(&far)["decision"], "reject");
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = histtest(&["identity-test", "--p", s(&missing), "--q", s(&missing), "--k", "2", "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dim":1,"domain":"unit_cube","pieces":[{"lo":[0],"hi":[0.5],"density":1}]}"#).unwrap();
    let out = histtest(&["identity-test", "--p", s(&bad), "--q", s(&bad), "--k", "2", "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn l1k_test_with_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    let q = dir.path().join("q.json");
    let n = 100;
    let probs_p = vec![1.0 / n as f64; n];
    let mut probs_q = vec![0.0; n];
    for x in &mut probs_q[..50] {
        *x = 2.0 / n as f64;
    }
    std::fs::write(&p, serde_json::json!({ "probs": probs_p }).to_string()).unwrap();
    std::fs::write(&q, serde_json::json!({ "probs": probs_q }).to_string()).unwrap();
    let sweep = dir.path().join("sweep.csv");
    let out = histtest(&[
        "l1k-test", "--p", s(&p), "--q", s(&q), "--k", "10", "--eps", "0.5", "--calibrate", s(&sweep), "--trials", "30",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert!(text.starts_with("C,"));
    let out = histtest(&["l1k-test", "--p", s(&p), "--q", s(&p), "--k", "10", "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn verify_covering_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.json");
    let dump = dir.path().join("cov.json");
    std::fs::write(
        &h,
        r#"{"dim":2,"domain":"unit_cube","pieces":[{"lo":[0,0],"hi":[0.3,1],"density":2},{"lo":[0.3,0],"hi":[1,1],"density":0.5714285714285714}]}"#,
    )
    .unwrap();
    let out = histtest(&["verify-covering", "--hist", s(&h), "--k", "4", "--eps", "0.5", "--trials", "20", "--dump", s(&dump)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json(&out)["ok"], true);
    assert!(dump.exists());
}

#[test]
fn experiments_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let common = ["power-curve", "--k", "8", "--budgets", "100,1000", "--trials", "10", "--reps", "3", "--seed", "9"];
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--threads", "1", "--csv", s(&a)]);
    assert!(histtest(&args).status.success());
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--threads", "3", "--csv", s(&b)]);
    assert!(histtest(&args).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn calibration_artifact_feeds_later_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dir.path().join("cal.json");
    let out = histtest(&["calibrate", "--k", "8", "--trials", "20", "--seed", "1", "--json", s(&cal)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&cal).unwrap()).unwrap()["C"].as_f64().unwrap();
    let out = histtest(&["power-curve", "--k", "8", "--trials", "5", "--reps", "1", "--c-file", s(&cal)]);
    assert!(out.status.success());
    assert_eq!(json(&out)["C"].as_f64().unwrap(), c);
}

#[test]
fn exhausted_time_limit_exits_three() {
    let out = histtest(&["power-curve", "--k", "8,16", "--budgets", "100", "--trials", "5", "--time-limit", "0"]);
    assert_eq!(out.status.code(), Some(3));
}
