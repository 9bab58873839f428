// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

fn bocpd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bocpd"))
        .args(args)
        .current_dir(dir)
        .env_remove(bocpd::cli::CONFIG_ENV)
        .output()
        .unwrap()
}

fn simulate(dir: &Path) {
    let out = bocpd(dir, &["simulate", "--output", "s.csv", "--truth", "truth.csv", "--segment-count", "6", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bocpd(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["detect", "--bogus"]), 2);
    assert_eq!(code(&["detect", "--input", "missing.csv"]), 2);
    assert_eq!(code(&["detect", "--input", "missing.csv", "--output", "d.ndjson"]), 3);
    simulate(dir.path());
    assert_eq!(code(&["detect", "--input", "s.csv", "--output", "d.ndjson", "--model", "nope"]), 2);
    assert_eq!(code(&["detect", "--input", "s.csv", "--output", "d.ndjson", "--lambda", "0.5"]), 2);
    std::fs::write(dir.path().join("bad.toml"), "[detect]\nlamda = 3\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "detect", "--input", "s.csv", "--output", "d.ndjson"]), 2);
    std::fs::write(dir.path().join("flat.csv"), "t,dim_0\n1,1\n2,1\n3,1\n4,1\n").unwrap();
    assert_eq!(code(&["detect", "--input", "flat.csv", "--output", "d.ndjson"]), 4);
    assert_eq!(
        code(&[
            "predict-detect", "--input", "flat.csv", "--output", "p.ndjson", "--scores", "sc.csv", "--predictor", "linear_ar", "--scaling",
            "none", "--k", "1",
        ]),
        5
    );
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    std::fs::write(dir.path().join("run.toml"), "[detect]\nlambda = 50.0\noutput = \"d.ndjson\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bocpd"))
        .args(["detect", "--input", "s.csv", "--lambda", "5"])
        .current_dir(dir.path())
        .env(bocpd::cli::CONFIG_ENV, "run.toml")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = std::fs::read_to_string(dir.path().join("d.ndjson.config.toml")).unwrap();
    assert!(echoed.contains("lambda = 5.0"), "{echoed}");
    assert!(echoed.contains("input = \"s.csv\""), "{echoed}");
}

#[test]
fn simulate_detect_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = bocpd(dir.path(), &["detect", "--input", "s.csv", "--output", "d.ndjson"]);
    assert!(out.status.success());
    let out = bocpd(dir.path(), &["evaluate", "--truth", "truth.csv", "--detections", "d.ndjson"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["f_score"].as_f64().unwrap() >= 0.8, "{report}");
}

#[test]
fn gridsearch_and_bench_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out = bocpd(
        dir.path(),
        &[
            "gridsearch", "--input", "s.csv", "--truth", "truth.csv", "--output", "g.csv", "--lambda-values", "10,100",
            "--alpha0-values", "0.01", "--beta0-values", "0.1", "--delay-c-values", "0,1",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    assert_eq!(grid.lines().count(), 5);
    assert!(grid.starts_with("rank,lambda,alpha0,beta0,delay_c,precision,recall,f_score,error\n1,"));

    let out = bocpd(dir.path(), &["bench", "--output", "b.csv", "--t-values", "50,100", "--repeats", "1", "--d", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bench = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(bench.lines().next(), Some("T,model1_seconds,model2_seconds,ratio"));
    assert_eq!(bench.lines().count(), 3);
}
