use std::path::Path;
use std::process::Command;

use attnmix::checkpoint::Checkpoint;
use attnmix::commands::{ablation_header, ATTENTION_HEADER};
use attnmix::config::{parse_config_str, to_json, ConfigError, RunConfig};
use attnmix::output::METRICS_HEADER;
use attnmix::{cmd_ablate, cmd_inspect_attention, cmd_train, parse_config};
use attnmix_core::agent::Heads;
use attnmix_core::mixer::MixerKind;
use attnmix_core::numerics::OptimizerKind;
use attnmix_core::trainer::Ablation;
use attnmix_testkit::percentile_linear;
use serde_json::Value;

/// A run small enough to finish in a couple of seconds.
fn tiny(out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"{{"t_max": 300, "batch_size": 4, "buffer_size": 50, "eval_interval": 5, "eval_episodes": 2,
            "embed_dim": 8, "hidden_dim": 8, "mixing_embed_dim": 8, "epsilon_anneal_steps": 200,
            "out_dir": {:?} {extra}}}"#,
        out.to_str().unwrap()
    );
    parse_config_str(&text).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn problems(err: ConfigError) -> Vec<String> {
    match err {
        ConfigError::Validation(p) => p,
        other => panic!("expected validation error, got {other}"),
    }
}

#[test]
fn empty_config_takes_documented_defaults() {
    let run = parse_config_str("{}").unwrap();
    let t = &run.train;
    assert_eq!(t.lambda, 1.0);
    assert_eq!(t.lr, 5e-4);
    assert_eq!(t.rms_smoothing, 0.99);
    assert_eq!((t.epsilon.start, t.epsilon.finish, t.epsilon.anneal_steps), (1.0, 0.05, 50_000));
    assert_eq!(t.batch_size, 32);
    assert_eq!(t.optimizer, OptimizerKind::RmsProp);
    assert_eq!(t.mixer, MixerKind::Monotonic);
    assert_eq!(run.seeds, vec![0]);
}

#[test]
fn negative_lambda_is_named() {
    let p = problems(parse_config_str(r#"{"lambda": -1}"#).unwrap_err());
    assert_eq!(p.len(), 1);
    assert!(p[0].contains("lambda"), "{p:?}");
}

#[test]
fn every_problem_is_reported() {
    let p = problems(parse_config_str(r#"{"lambda": -1, "gamma": 2, "colour": 1, "mixer": "sum", "t_max": -5}"#).unwrap_err());
    for key in ["lambda", "gamma", "colour", "mixer", "t_max"] {
        assert!(p.iter().any(|m| m.starts_with(key)), "{key} missing from {p:?}");
    }
}

#[test]
fn dense_only_forces_lambda_to_zero() {
    let run = parse_config_str(r#"{"mixer": "qmix", "ablation": "dense_only"}"#).unwrap();
    assert_eq!(run.train.mixer, MixerKind::Monotonic);
    assert_eq!(run.train.lambda, 0.0);
    assert_eq!(run.train.ablation.heads(), Heads::DenseOnly);
}

#[test]
fn malformed_and_missing_files() {
    assert!(matches!(parse_config_str("[1, 2]"), Err(ConfigError::Parse(_))));
    assert!(matches!(parse_config_str("{"), Err(ConfigError::Parse(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(parse_config(&dir.path().join("nope.json")), Err(ConfigError::FileNotFound(_))));
}

#[test]
fn smoke_run_writes_metrics_config_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny(dir.path(), r#", "t_max": 2000"#);
    let results = cmd_train(&run, true).unwrap();
    assert_eq!(results.len(), 1);
    let seed_dir = dir.path().join("0");
    let (header, rows) = read_csv(&seed_dir.join("metrics.csv"));
    assert_eq!(header, METRICS_HEADER);
    assert!(!rows.is_empty());
    let steps: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]), "env_steps must be monotone: {steps:?}");
    assert!(*steps.last().unwrap() >= 2000);

    // The resolved config materialises every default and parses back identically.
    let text = std::fs::read_to_string(seed_dir.join("config.json")).unwrap();
    let stored = parse_config_str(&text).unwrap();
    assert_eq!(stored.train, run.train);
    assert_eq!(stored.seeds, vec![0]);
    let (timing, _) = read_csv(&seed_dir.join("timing.csv"));
    assert_eq!(timing, ["episode", "env_steps", "wall_ms"]);
    Checkpoint::load(&seed_dir.join("checkpoint.json")).unwrap();
}

#[test]
fn summary_reports_median_and_quartiles() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny(dir.path(), r#", "seeds": [0, 1, 2]"#);
    let results = cmd_train(&run, true).unwrap();
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let finals: Vec<f64> = results.iter().map(|r| r.final_win_rate).collect();
    let mut sorted = finals.clone();
    sorted.sort_by(f64::total_cmp);
    let block = &summary["final_win_rate"];
    for (key, q) in [("median", 0.5), ("p25", 0.25), ("p75", 0.75)] {
        let want = percentile_linear(&sorted, q);
        assert!((block[key].as_f64().unwrap() - want).abs() < 1e-12, "{key}");
    }
    assert!(summary["best_win_rate"]["median"].is_number());
    assert_eq!(summary["seeds"], serde_json::json!([0, 1, 2]));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&tiny(a.path(), ""), true).unwrap();
    cmd_train(&tiny(b.path(), ""), true).unwrap();
    let read = |dir: &Path, file: &str| std::fs::read(dir.join("0").join(file)).unwrap();
    assert!(read(a.path(), "metrics.csv") == read(b.path(), "metrics.csv"), "metrics.csv differs between identical runs");
    // Checkpoints embed their own output directory; the parameters must match exactly.
    let params = |dir: &Path| serde_json::from_slice::<Value>(&read(dir, "checkpoint.json")).unwrap()["params"].to_string();
    assert_eq!(params(a.path()), params(b.path()));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny(dir.path(), r#", "aux_mixer": "separate""#);
    cmd_train(&run, true).unwrap();
    let path = dir.path().join("0/checkpoint.json");
    let ckpt = Checkpoint::load(&path).unwrap();
    assert!(ckpt.network.aux_mixer.is_some());
    let again = dir.path().join("copy.json");
    ckpt.save(&again).unwrap();
    assert_eq!(Checkpoint::load(&again).unwrap(), ckpt);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&tiny(dir.path(), ""), true).unwrap();
    let value: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("0/checkpoint.json")).unwrap()).unwrap();

    let mut wrong_shape = value.clone();
    wrong_shape["config"]["embed_dim"] = 9.into();
    let err = Checkpoint::from_json(&wrong_shape).unwrap_err();
    assert!(matches!(err.downcast_ref(), Some(attnmix_core::Error::CheckpointMismatch(_))), "{err}");

    let mut wrong_version = value.clone();
    wrong_version["version"] = 99.into();
    assert!(Checkpoint::from_json(&wrong_version).is_err());

    let mut truncated = value;
    truncated["params"].as_array_mut().unwrap().pop();
    assert!(Checkpoint::from_json(&truncated).is_err());
}

#[test]
fn ablation_grid_has_six_conditions_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny(dir.path(), r#", "seeds": [3, 4], "t_max": 150"#);
    let path = cmd_ablate(&run, true).unwrap();
    let (header, rows) = read_csv(&path);
    assert_eq!(header, ablation_header());
    assert_eq!(rows.len(), 6 * 2);
    let mut groups: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    groups.dedup();
    assert_eq!(groups.len(), 6);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in &rows {
        let aux: f64 = r[col("loss_aux")].parse().unwrap();
        match Ablation::parse(&r[1]).unwrap() {
            Ablation::DenseOnly => assert_eq!(aux, 0.0),
            Ablation::S2rl => assert!(aux > 0.0, "{r:?}"),
            Ablation::SparseOnly => {
                assert_eq!(aux, 0.0);
                assert_eq!(r[col("mean_dense_support")], "nan");
            }
        }
    }
    assert!(dir.path().join("qmix_sparse_only/4/metrics.csv").exists());
}

#[test]
fn attention_dump_is_normalised_and_masked() {
    let dir = tempfile::tempdir().unwrap();
    // A narrow sight range guarantees invisible entities in the dump.
    cmd_train(&tiny(dir.path(), r#", "sight_range": 4"#), true).unwrap();
    let path = cmd_inspect_attention(&dir.path().join("0/checkpoint.json"), 7, 30, dir.path()).unwrap();
    let (header, rows) = read_csv(&path);
    assert_eq!(header, ATTENTION_HEADER);
    let run = to_json(&tiny(dir.path(), ""));
    let m = (run["n_allies"].as_u64().unwrap() + run["n_enemies"].as_u64().unwrap() + run["n_distractors"].as_u64().unwrap())
        as usize;
    assert_eq!(rows.len(), 30 * 3 * m);
    let mut invisible = 0;
    for group in rows.chunks(m) {
        let dense: f64 = group.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
        let sparse: f64 = group.iter().map(|r| r[4].parse::<f64>().unwrap()).sum();
        assert!((dense - 1.0).abs() < 1e-6 && (sparse - 1.0).abs() < 1e-6);
        assert_eq!(group[0][5], "self");
        for r in group {
            if r[7] == "0" {
                invisible += 1;
                assert_eq!((r[3].as_str(), r[4].as_str()), ("0", "0"));
            }
        }
    }
    assert!(invisible > 0);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_attnmix");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"lambda": -1}"#).unwrap();
    let out = Command::new(bin).args(["train", bad.to_str().unwrap(), "--quiet"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));

    let missing = Command::new(bin).args(["inspect-attention", "/nonexistent/ckpt.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"t_max": 100, "batch_size": 2, "eval_episodes": 1, "embed_dim": 4, "hidden_dim": 4}"#).unwrap();
    let out_dir = dir.path().join("runs");
    let ok = Command::new(bin)
        .args(["train", good.to_str().unwrap(), "--quiet", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out_dir.join("0/metrics.csv").exists());
}
