//! End-to-end runs of the `ubo` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ubo(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ubo")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn run_writes_a_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let out_s = out.to_str().unwrap();
    ubo(&["run", "--problem", "rkhs", "--method", "BO", "--budget", "2", "--init", "3", "--seed", "4", "--out", out_s]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], "eval_index,iter,x_0,y,inc_x_0,inc_value,wall_ms");
    assert_eq!(rows.len(), 1 + 5);

    // same seed, same trace apart from timings
    let again = dir.path().join("again.csv");
    ubo(&["run", "--problem", "rkhs", "--method", "BO", "--budget", "2", "--init", "3", "--seed", "4", "--out", again.to_str().unwrap()]);
    let strip = |rows: Vec<String>| rows.into_iter().map(|r| r.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_eq!(strip(rows), strip(csv_rows(&again)));
}

#[test]
fn bench_reads_a_spec_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"problem":"rkhs","methods":["BO","UBO-SP"],"repetitions":2,"seed":1,"budget":1,"n_mc":50,
            "hyper":{"n_samples":2,"burn_in":10,"warm_burn_in":2,"noise_variance":1e-4,"slice":{"width":1.0,"max_step_out":10,"max_shrink":100}}}"#,
    )
    .unwrap();
    let out = dir.path().join("results.csv");
    let summary = dir.path().join("summary.json");
    ubo(&["bench", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--summary", summary.to_str().unwrap()]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], "method,eval_index,mean,ci_lo,ci_hi");
    assert_eq!(rows.len(), 1 + 2 * 6);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(json["methods"].as_array().unwrap().len(), 2);
}

#[test]
fn cluster_log_replays_into_a_new_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cluster");
    ubo(&[
        "cluster", "--nodes", "2", "--problem", "rkhs", "--budget", "1", "--init", "3", "--latency-ms", "2",
        "--drop-rate", "0.1", "--seed", "5", "--out", out.to_str().unwrap(),
    ]);
    for f in ["node-0.csv", "node-1.csv", "global.csv", "messages.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(csv_rows(&out.join("global.csv")).len(), 1 + 8);
    let log = out.join("messages.jsonl");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 8);

    let trace = dir.path().join("replay.csv");
    let res = ubo(&["replay", "--log", log.to_str().unwrap(), "--problem", "rkhs", "--budget", "1", "--out", trace.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bootstrapped 8 points"));
    assert_eq!(csv_rows(&trace).len(), 1 + 1);
}

#[test]
fn world_prints_the_rover_layout() {
    let out = ubo(&["world"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["start"].as_array().unwrap().len(), 2);
    assert!(json["obstacles"].as_array().unwrap().len() >= 2);
}

#[test]
fn unknown_problem_fails() {
    let out = Command::new(env!("CARGO_BIN_EXE_ubo")).args(["run", "--problem", "nope"]).output().unwrap();
    assert!(!out.status.success());
}
