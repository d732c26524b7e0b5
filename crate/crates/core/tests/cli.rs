use std::fs;
use std::path::Path;

use tracklink::cli::{run_cli, COMPARE_HEADER, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_TRIAL_FAILED, METRICS_HEADER};
use tracklink::config::ScenarioConfig;

fn write_config(dir: &Path, cfg: &ScenarioConfig) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn short() -> ScenarioConfig {
    ScenarioConfig {
        horizon: 5,
        ..ScenarioConfig::demo()
    }
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn run_writes_metrics_timing_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short());
    let out = dir.path().join("out");
    assert_eq!(
        run_cli(["tracklink", "run", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let metrics = lines(&out.join("metrics.csv"));
    assert_eq!(metrics[0], METRICS_HEADER);
    assert_eq!(metrics.len(), 1 + 6);
    assert!(metrics[1].starts_with("0,"));
    assert_eq!(lines(&out.join("timing.csv")).len(), 1 + 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 5);
}

#[test]
fn zero_horizon_run_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &ScenarioConfig { horizon: 0, ..short() });
    let out = dir.path().join("out");
    assert_eq!(
        run_cli(["tracklink", "run", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(lines(&out.join("metrics.csv")).len(), 2);
}

#[test]
fn bad_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(
        run_cli(["tracklink", "run", "--config", "/nonexistent.json", "--out", out]),
        EXIT_CONFIG
    );
    let bad = write_config(dir.path(), &ScenarioConfig { d_min: 20.0, ..short() });
    assert_eq!(
        run_cli(["tracklink", "run", "--config", &bad, "--out", out]),
        EXIT_CONFIG
    );
    assert_eq!(run_cli(["tracklink", "frobnicate"]), EXIT_CONFIG);
    assert_eq!(run_cli(["tracklink", "run", "--config", &bad]), EXIT_CONFIG);
    assert_eq!(run_cli(["tracklink", "--help"]), EXIT_OK);
}

#[test]
fn impossible_placement_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &ScenarioConfig {
            arena: [1.0, 1.0],
            ..short()
        },
    );
    let out = dir.path().join("out");
    assert_eq!(
        run_cli(["tracklink", "run", "--config", &cfg, "--out", out.to_str().unwrap()]),
        EXIT_RUNTIME
    );
}

#[test]
fn batch_writes_trials_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short());
    let out = dir.path().join("batch");
    let code = run_cli([
        "tracklink",
        "batch",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    for t in 0..3 {
        assert_eq!(lines(&out.join(format!("trial_{t:03}.csv"))).len(), 7);
    }
    let aggregate = lines(&out.join("aggregate.csv"));
    assert_eq!(aggregate.len(), 7);
    assert!(aggregate[0].starts_with("step,sq_err_loc_mean,sq_err_loc_std"));
    assert!(!out.join("failures.csv").exists());
}

#[test]
fn failed_trials_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &ScenarioConfig {
            arena: [1.0, 1.0],
            ..short()
        },
    );
    let out = dir.path().join("batch");
    let code = run_cli([
        "tracklink",
        "batch",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "2",
    ]);
    assert_eq!(code, EXIT_TRIAL_FAILED);
    let failures = lines(&out.join("failures.csv"));
    assert_eq!(failures[0], "trial,error");
    assert_eq!(failures.len(), 3);
}

#[test]
fn compare_writes_one_row_per_method_and_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let code = run_cli([
        "tracklink",
        "compare",
        "--out",
        out.to_str().unwrap(),
        "--n-list",
        "2",
        "--trials",
        "2",
        "--budget",
        "50",
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = lines(&out.join("compare.csv"));
    assert_eq!(rows[0], COMPARE_HEADER);
    assert_eq!(rows.len(), 1 + 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("compare_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["methods"].as_array().unwrap().len(), 3);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short());
    let read = |name: &str| {
        let out = dir.path().join(name);
        assert_eq!(
            run_cli([
                "tracklink",
                "run",
                "--config",
                &cfg,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "3"
            ]),
            EXIT_OK
        );
        fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_tracklink");
    let status = |args: &[&str]| {
        std::process::Command::new(bin)
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(status(&["--version"]), Some(EXIT_OK));
    assert_eq!(status(&["run"]), Some(EXIT_CONFIG));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &ScenarioConfig { horizon: 2, ..short() });
    let out = dir.path().join("out");
    assert_eq!(
        status(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]),
        Some(EXIT_OK)
    );
    assert_eq!(lines(&out.join("metrics.csv")).len(), 4);
}
