use std::path::Path;
use std::process::{Command, Output};

use rider_core::io;

fn rider(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rider"))
        .current_dir(dir)
        .env_remove("RIDER_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rider(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
seed = 3
output_dir = "out"

[simulate]
t_len = 40
m = 10
sample_size = 60

[simulate.parent]
kind = "linear_model"
theta0 = [1.0, -0.5]
noise_sd = 1.0

[simulate.process]
phi = [0.8]
variance = 0.09

[estimate]
K = 5

[estimate.method]
type = "rider_nonparametric"

[estimate.method.estimation]
K = 5

[backtest]
K = 5

[backtest.method]
type = "pooling"

[verify]
reps = 200
m = 200
n = 200
inflation_tolerance = 0.5
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(dir.path(), &["--config", "run.toml", "simulate"]);
    dir
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = rider(dir.path(), &["backtest", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_subcommand_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rider(dir.path(), &[]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), format!("{SMALL}\nbogus = 1\n")).unwrap();
    let out = rider(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_panel_file_in_config_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[panel]\npath = \"nowhere.csv\"\n").unwrap();
    let out = rider(dir.path(), &["--config", "c.toml", "estimate-weights"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn failing_verify_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[verify]\nreps = 100\nm = 100\nn = 100\ninflation_tolerance = 0.0\n",
    )
    .unwrap();
    let out = rider(dir.path(), &["--config", "c.toml", "verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn estimate_weights_with_k_one_emits_unit_weight() {
    let dir = setup();
    ok(dir.path(), &["--config", "run.toml", "estimate-weights", "--k", "1"]);
    let doc = io::read_weights_json(&dir.path().join("out/weights.json")).unwrap();
    assert_eq!(doc.k, 1);
    assert_eq!(doc.beta.as_slice(), &[1.0]);
    assert_eq!(io::read_weights_csv(&dir.path().join("out/weights.csv")).unwrap(), doc.beta);
}

#[test]
fn pooling_and_long_half_life_backtests_agree() {
    let dir = setup();
    ok(dir.path(), &["--config", "run.toml", "backtest", "--method", "pooling", "--name", "pool"]);
    ok(dir.path(), &["--config", "run.toml", "backtest", "--method", "exponential", "--half-life", "1e6", "--name", "exp"]);
    let pool = io::read_report_json(&dir.path().join("out/pool.json")).unwrap();
    let exp = io::read_report_json(&dir.path().join("out/exp.json")).unwrap();
    assert!((pool.aggregate - exp.aggregate).abs() <= 1e-6, "{} vs {}", pool.aggregate, exp.aggregate);
}

#[test]
fn every_artifact_reloads() {
    let dir = setup();
    let out = dir.path().join("out");
    ok(dir.path(), &["--config", "run.toml", "estimate-weights"]);
    ok(dir.path(), &["--config", "run.toml", "fit", "--weights", "out/weights.json"]);
    ok(dir.path(), &["--config", "run.toml", "backtest", "--method", "rider", "--name", "bt"]);

    let panel = io::read_panel_csv(&out.join("panel.csv")).unwrap();
    assert_eq!(panel.len(), 40);
    assert_eq!(panel.dim(), 2);
    let field = io::read_weight_field_csv(&out.join("weight_field.csv")).unwrap();
    assert_eq!((field.t_len(), field.m), (40, 10));
    let doc = io::read_weights_json(&out.join("weights.json")).unwrap();
    assert_eq!(doc.k, 5);
    let mm = io::read_moments_csv(&out.join("moments.csv")).unwrap();
    assert_eq!((mm.t_len(), mm.l_len()), (40, 3));
    let model = io::read_model_json(&out.join("model.json")).unwrap();
    assert_eq!(model.weights_used, doc.beta);
    assert_eq!(model.theta.len(), 3);

    let report = io::read_report_json(&out.join("bt.json")).unwrap();
    let rows = io::read_report_csvs(&out.join("bt_scores.csv"), &out.join("bt_trajectories.csv")).unwrap();
    assert_eq!(rows, report.results);
    let lags = io::read_lag_summary_csv(&out.join("bt_lags.csv")).unwrap();
    assert_eq!(lags.len(), 5);

    ok(dir.path(), &["--config", "run.toml", "estimate-weights", "--method", "rider-parametric", "--k", "4"]);
    let table = io::read_cv_table_csv(&out.join("cv_table.csv")).unwrap();
    assert!(!table.is_empty());
    assert!(table.iter().all(|r| r.k == 4));
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = setup();
    let b = setup();
    for dir in [&a, &b] {
        ok(dir.path(), &["--config", "run.toml", "estimate-weights"]);
        ok(dir.path(), &["--config", "run.toml", "fit"]);
        ok(dir.path(), &["--config", "run.toml", "backtest", "--method", "rider"]);
    }
    for file in [
        "panel.csv",
        "weight_field.csv",
        "weights.csv",
        "weights.json",
        "moments.csv",
        "model.json",
        "backtest.json",
        "backtest_scores.csv",
        "backtest_trajectories.csv",
        "backtest_lags.csv",
    ] {
        let x = std::fs::read(a.path().join("out").join(file)).unwrap();
        let y = std::fs::read(b.path().join("out").join(file)).unwrap();
        assert!(x == y, "{file} differs between identical runs");
    }
}

#[test]
fn rider_seed_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    let run = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_rider"));
        cmd.current_dir(dir.path()).env_remove("RIDER_SEED").args(["--config", "run.toml", "--output-dir", out, "simulate"]);
        if let Some(s) = seed {
            cmd.env("RIDER_SEED", s);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(dir.path().join(out).join("panel.csv")).unwrap()
    };
    let base = run(None, "a");
    assert_eq!(run(Some("3"), "b"), base);
    assert_ne!(run(Some("4"), "c"), base);
}

#[test]
fn verify_prints_measured_values() {
    let dir = setup();
    let stdout = ok(dir.path(), &["--config", "run.toml", "verify"]);
    assert!(stdout.contains("measured="));
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 13);
}

#[test]
fn committed_example_config_loads() {
    let dir = tempfile::tempdir().unwrap();
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/example.toml");
    let text = std::fs::read_to_string(example).unwrap();
    let text = text.replace("t_len = 120", "t_len = 30");
    std::fs::write(dir.path().join("example.toml"), text).unwrap();
    ok(dir.path(), &["--config", "example.toml", "simulate"]);
    ok(dir.path(), &["--config", "example.toml", "estimate-weights"]);
}
