//! End-to-end exercises of the `orlab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn orlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_figure1(dir: &Path) -> (String, String) {
    let mdp = offline_rl_lab::mdp::make_figure1_mdp(0.3, 0.9).unwrap();
    let mdp_path = dir.join("mdp.json");
    std::fs::write(&mdp_path, mdp.to_json().unwrap()).unwrap();
    let policy = offline_rl_lab::mdp::Policy::uniform(3, 1);
    let policy_path = dir.join("policy.json");
    std::fs::write(&policy_path, policy.to_json().unwrap()).unwrap();
    (
        mdp_path.to_str().unwrap().to_string(),
        policy_path.to_str().unwrap().to_string(),
    )
}

#[test]
fn sample_then_evaluate_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let (mdp, policy) = write_figure1(dir.path());
    let dataset = dir.path().join("d.jsonl");
    let out = orlab(
        &[
            "sample",
            "--mdp",
            &mdp,
            "--policy",
            &policy,
            "--paths",
            "500",
            "--seed",
            "3",
            "--output",
            dataset.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&dataset).unwrap().lines().count(), 500);

    for method in ["model", "is"] {
        let mut args = vec![
            "evaluate",
            "--method",
            method,
            "--dataset",
            dataset.to_str().unwrap(),
            "--target",
            &policy,
        ];
        if method == "model" {
            args.extend(["--mdp", &mdp]);
        } else {
            args.extend(["--behavior", &policy]);
        }
        let out = orlab(&args, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let record: serde_json::Value =
            serde_json::from_slice(&out.stdout).expect("JSON estimate record");
        assert_eq!(record["n_paths"], 500);
        assert!(record["estimate"].as_f64().is_some());
        assert!(record["config_hash"].as_str().unwrap().len() == 64);
    }
}

#[test]
fn evaluate_without_required_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, policy) = write_figure1(dir.path());
    let dataset = dir.path().join("d.jsonl");
    std::fs::write(&dataset, "{\"steps\":[[0,0,0.0]]}\n").unwrap();
    let out = orlab(
        &[
            "evaluate",
            "--method",
            "model",
            "--dataset",
            dataset.to_str().unwrap(),
            "--target",
            &policy,
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mdp"));
}

#[test]
fn optimize_writes_policy() {
    let dir = tempfile::tempdir().unwrap();
    let (mdp, policy) = write_figure1(dir.path());
    let dataset = dir.path().join("d.jsonl");
    orlab(
        &[
            "sample", "--mdp", &mdp, "--policy", &policy, "--paths", "200", "--seed", "1",
            "--output", dataset.to_str().unwrap(),
        ],
        dir.path(),
    );
    let out_policy = dir.path().join("pi.json");
    let out = orlab(
        &[
            "optimize",
            "--dataset",
            dataset.to_str().unwrap(),
            "--mdp",
            &mdp,
            "--output",
            out_policy.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let loaded =
        offline_rl_lab::mdp::Policy::from_json(&std::fs::read_to_string(&out_policy).unwrap())
            .unwrap();
    assert_eq!(loaded.num_states(), 3);
}

#[test]
fn bias_curve_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bias.csv");
    let out = orlab(
        &[
            "bias-curve",
            "--sigma-min",
            "0.01",
            "--sigma-max",
            "0.99",
            "--steps",
            "99",
            "--trials",
            "2000",
            "--output",
            csv_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let content = std::fs::read_to_string(&csv_path).unwrap();
    // hash line + header + 99 data rows
    assert_eq!(content.lines().count(), 101);
    assert!(content.starts_with("# config_hash="));
}

#[test]
fn verify_lemma3_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "kind": "lemma3_coverage",
        "trials": 100,
        "master_seed": 5,
    });
    let config_path = dir.path().join("c.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let report_path = dir.path().join("report.csv");
    let out = orlab(
        &[
            "verify",
            "--experiment",
            "lemma3_coverage",
            "--config",
            config_path.to_str().unwrap(),
            "--output",
            report_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("failure_rate"));

    // rerunning against a report written under a different config refuses
    let other = serde_json::json!({
        "kind": "lemma3_coverage",
        "trials": 100,
        "master_seed": 6,
    });
    std::fs::write(&config_path, other.to_string()).unwrap();
    let out = orlab(
        &[
            "verify",
            "--config",
            config_path.to_str().unwrap(),
            "--output",
            report_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn verify_malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("c.json");
    std::fs::write(&config_path, "{\"kind\": \"nonsense\"}").unwrap();
    let out = orlab(
        &["verify", "--config", config_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bounds_lemma2_threshold_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = orlab(
        &[
            "bounds",
            "lemma2-threshold",
            "--states",
            "5",
            "--epsilon-prime",
            "0.1",
            "--delta-prime",
            "0.1",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let samples = value["samples"].as_f64().unwrap();
    assert!((samples - 129_563.0).abs() <= 2.0, "samples {samples}");
}

#[test]
fn certificate_reports_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let (mdp, policy) = write_figure1(dir.path());
    let dataset = dir.path().join("d.jsonl");
    orlab(
        &[
            "sample", "--mdp", &mdp, "--policy", &policy, "--paths", "300", "--seed", "2",
            "--output", dataset.to_str().unwrap(),
        ],
        dir.path(),
    );
    let out = orlab(
        &[
            "certificate",
            "--dataset",
            dataset.to_str().unwrap(),
            "--mdp",
            &mdp,
            "--target",
            &policy,
            "--delta",
            "0.1",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["delta"], 0.1);
    assert_eq!(cert["n_paths"], 300);
}
