mod common;

use std::path::Path;
use std::process::Command;

use bicx::harness::cmd::{EXIT_BUDGET, EXIT_CONFIG, EXIT_OK};
use bicx::harness::trace::{parse_metrics_csv, read_trace};
use bicx::harness::cmd_run;

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const D1: &str = r#"{
  "d": 1,
  "prior": {"kind": "gaussian", "mean": [0.5], "covariance": [[0.5]]},
  "lambda_bar": 0.05,
  "overrides": {"lambda": 0.05, "kappa": 200, "c_l5": 0.5, "c_l7": 0.1},
  "seed": 3
}"#;

#[test]
fn malformed_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.json", r#"{"d": 2, "lambda_bar": "#);
    assert_eq!(cmd_run(&bad, None, Some(tmp.path())), EXIT_CONFIG);
    let missing_prior = write(tmp.path(), "np.json", r#"{"d": 2, "lambda_bar": 0.05}"#);
    assert_eq!(cmd_run(&missing_prior, None, Some(tmp.path())), EXIT_CONFIG);
    let wrong_dim = write(
        tmp.path(),
        "wd.json",
        r#"{"d": 2, "lambda_bar": 0.05, "prior": {"kind": "gaussian", "mean": [0.5], "covariance": [[0.5]]}}"#,
    );
    assert_eq!(cmd_run(&wrong_dim, None, Some(tmp.path())), EXIT_CONFIG);
}

#[test]
fn binary_reports_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.json", "not json");
    let st = Command::new(env!("CARGO_BIN_EXE_bicx"))
        .args(["run", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(EXIT_CONFIG));
}

#[test]
fn one_dimensional_run_is_initial_phase_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "d1.json", D1);
    let out = tmp.path().join("out");
    assert_eq!(cmd_run(&cfg, None, Some(&out)), EXIT_OK);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("# bicx metrics v1\n"));
    let rows = parse_metrics_csv(&csv).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.phase == "initial"));
    assert!(rows.last().unwrap().min_eig >= 0.05);

    let trace = read_trace(&out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.actions.len(), rows.len());
    assert!(trace.result.is_some());
    assert!(trace.tilts.is_empty());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success"], true);
    assert_eq!(report["exit_code"], 0);
    assert_eq!(report["total_pulls"].as_u64().unwrap() as usize, rows.len());
}

#[test]
fn step_budget_exhaustion_exits_with_budget_code() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
      "d": 2,
      "prior": {"kind": "gaussian", "mean": [0.6, 0.3], "covariance": [[0.5, 0], [0, 0.5]]},
      "lambda_bar": 0.05,
      "overrides": {"lambda": 0.05, "kappa": 400, "c_l5": 0.5, "c_l7": 0.1},
      "run": {"max_steps": 50},
      "seed": 7
    }"#;
    let cfg = write(tmp.path(), "budget.json", body);
    let out = tmp.path().join("out");
    assert_eq!(cmd_run(&cfg, None, Some(&out)), EXIT_BUDGET);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["success"], false);
    assert!(report["failure"].is_object());
}

#[test]
fn same_seed_reproduces_metrics_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::demo_configs()[1].clone();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(cmd_run(&cfg, Some(5), Some(&a)), EXIT_OK);
    assert_eq!(cmd_run(&cfg, Some(5), Some(&b)), EXIT_OK);
    let csv = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert!(csv(&a) == csv(&b), "metrics.csv differs between identical runs");
    // The setup event records the output directory; everything else must match.
    let trace = |d: &Path| {
        let text = std::fs::read_to_string(d.join("trace.jsonl")).unwrap();
        let (setup, rest) = text.split_once('\n').unwrap();
        let mut v: serde_json::Value = serde_json::from_str(setup).unwrap();
        v["payload"]["config"]["output"]["dir"] = serde_json::Value::Null;
        (v, rest.to_string())
    };
    assert!(trace(&a) == trace(&b), "trace.jsonl differs between identical runs");
}

#[test]
fn trace_round_trips_through_the_reader() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::demo_configs()[1].clone();
    let out = tmp.path().join("out");
    assert_eq!(cmd_run(&cfg, None, Some(&out)), EXIT_OK);
    let trace = read_trace(&out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.setup.dim, 2);
    assert!(!trace.tilts.is_empty());
    assert!(!trace.growth.is_empty());
    let csv = parse_metrics_csv(&std::fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(csv.len(), trace.actions.len());
    for (row, a) in csv.iter().zip(&trace.actions) {
        assert_eq!(row.t, a.t);
        assert_eq!(row.phase, a.phase.as_str());
    }
    let ids: Vec<usize> = trace.recommendations.iter().map(|r| r.id).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}
