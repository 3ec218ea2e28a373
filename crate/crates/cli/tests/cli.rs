use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use mfmdp_cli::{run, sha256_hex, Cli, CliError, RunOutcome};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfmdp-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn invoke(args: &[&str]) -> Result<RunOutcome, CliError> {
    let mut argv = vec!["mfmdp"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).unwrap())
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_passes_on_shipped_broker() {
    let out = scratch("validate");
    let cfg = configs().join("broker.json");
    let r = invoke(&["validate", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).unwrap();
    assert!(r.ok, "{}", r.summary);
    let csv = std::fs::read_to_string(out.join("validation.csv")).unwrap();
    assert!(csv.starts_with("check,passed,lipschitz,detail\n"));
    assert!(!csv.contains(",false,"));
}

#[test]
fn broker_experiment_output_shape_and_manifest() {
    let out = scratch("broker");
    let cfg = configs().join("broker.json");
    let r = invoke(&[
        "broker-experiment",
        cfg.to_str().unwrap(),
        "--n-list",
        "14,28,56",
        "--replications",
        "100",
        "--seed",
        "5",
        "--out-dir",
        out.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(r.files, vec!["plan.csv", "costs.csv", "clt.csv", "gamma_t.csv", "manifest.json"]);
    let costs = std::fs::read_to_string(out.join("costs.csv")).unwrap();
    let rows: Vec<&str> = costs.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for policy in ["a-star", "pi-star", "JSQ", "W-JSQ"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{policy},"))).count(), 3);
    }
    let clt = std::fs::read_to_string(out.join("clt.csv")).unwrap();
    assert_eq!(clt.lines().next(), Some("policy,N,scaled_gap,stderr"));
    assert_eq!(clt.lines().count(), 7);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["settings"]["replications"], 100);
    assert_eq!(manifest["config_sha256"], sha256_hex(&std::fs::read(&cfg).unwrap()));
    for entry in manifest["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(entry["file"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"], sha256_hex(&bytes));
    }
}

#[test]
fn plan_only_writes_plan_and_manifest() {
    let out = scratch("plan");
    let cfg = configs().join("three_queue.json");
    let r = invoke(&["broker-experiment", cfg.to_str().unwrap(), "--plan-only", "--out-dir", out.to_str().unwrap()]).unwrap();
    assert_eq!(r.files, vec!["plan.csv", "manifest.json"]);
    assert!(r.summary.contains("plan cost (base system) = 18"));
    let plan = std::fs::read_to_string(out.join("plan.csv")).unwrap();
    assert_eq!(plan.lines().next(), Some("t,arrivals,q1,q2,q3,leftover"));
    assert_eq!(plan.lines().nth(7), Some("6,6,3,1,2,2"));
}

#[test]
fn oracle_value_only_prints_values() {
    let out = scratch("oracle");
    let cfg = configs().join("toy.json");
    let r = invoke(&["oracle", cfg.to_str().unwrap(), "--value-only", "--n-list", "2,4", "--out-dir", out.to_str().unwrap()])
        .unwrap();
    let values: Vec<f64> = r.summary.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 2);
    assert!(!out.join("oracle_table.csv").exists());
    assert!(out.join("oracle.csv").exists());
}

#[test]
fn oracle_size_cap_is_reported() {
    let out = scratch("cap");
    let cfg = configs().join("toy.json");
    let err = invoke(&["oracle", cfg.to_str().unwrap(), "--max-states", "10", "--out-dir", out.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.kind(), "size-cap");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn unknown_kernel_is_a_config_error() {
    let dir = scratch("kernel");
    let cfg = write_config(
        &dir,
        r#"{"model": {"states": 2, "actions": {"finite": [[0]]}, "kernel": {"name": "teleport"},
            "reward": {"name": "zero"}, "horizon": 2, "initial": {"measure": [1, 0]}}}"#,
    );
    let err = invoke(&["validate", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.kind(), "config");
    assert!(err.to_string().contains("teleport"));
}

#[test]
fn schema_violations_are_rejected() {
    let dir = scratch("schema");
    let cfg = write_config(&dir, r#"{"broker": {"preset": "three-queue"}, "experiment": {"sed": 3}}"#);
    let err = invoke(&["validate", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.kind(), "schema");
    let cfg = write_config(&dir, r#"{"experiment": {}}"#);
    assert_eq!(invoke(&["validate", cfg.to_str().unwrap()]).unwrap_err().kind(), "schema");
}

#[test]
fn baselines_need_a_broker() {
    let dir = scratch("baseline");
    let text = std::fs::read_to_string(configs().join("toy.json")).unwrap().replace(
        "\"replications\": 1000",
        "\"replications\": 10, \"policy\": \"jsq\"",
    );
    let cfg = write_config(&dir, &text);
    let err = invoke(&["simulate", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.kind(), "usage");
}

#[test]
fn simulate_and_meanfield_outputs() {
    let out = scratch("sim");
    let cfg = configs().join("toy.json");
    invoke(&["simulate", cfg.to_str().unwrap(), "--n-list", "10,20", "--replications", "50", "--out-dir", out.to_str().unwrap()])
        .unwrap();
    let est = std::fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(est.lines().next(), Some("policy,N,R,mean,stderr"));
    assert_eq!(est.lines().count(), 3);
    let out = scratch("mf");
    let cfg = configs().join("two_state.json");
    let r = invoke(&["meanfield", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).unwrap();
    assert!(r.files.contains(&"discounted.csv".to_string()));
    assert!(r.files.contains(&"value_grid.json".to_string()));
}

#[test]
fn binary_reports_structured_errors() {
    let dir = scratch("bin");
    let cfg = write_config(&dir, "{ not json");
    let output = Command::new(env!("CARGO_BIN_EXE_mfmdp"))
        .args(["validate", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error[schema]:"));
    let cfg = configs().join("three_queue.json");
    let output = Command::new(env!("CARGO_BIN_EXE_mfmdp"))
        .args(["broker-experiment", cfg.to_str().unwrap(), "--plan-only", "--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
}
