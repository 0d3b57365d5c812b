//! Command-line contract tests: exit codes, artifact layout, metric
//! reproducibility, and failure-dump reproduction. Everything runs
//! in-process through `cli::run` with deliberately tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};

use loopsr::cli::{run, EXIT_CONFIG, EXIT_MISSING_ARTIFACT, EXIT_NUMERICAL, EXIT_OK};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("loopsr-cli-tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

/// Tiny-but-complete configuration: enough structure for every artifact
/// to exist while keeping runtimes in seconds.
fn tiny_config() -> serde_json::Value {
    serde_json::json!({
        "schema_version": 1,
        "seed": 11,
        "pretrain": {
            "iterations": 3,
            "encoder_start": 3,
            "envs": 4,
            "steps_per_iteration": 8,
            "checkpoints": 3,
            "trajectories_per_checkpoint": 4
        },
        "codec": {
            "d_model": 16,
            "layers": 1,
            "heads": 2,
            "max_timesteps": 200,
            "batch_size": 4,
            "epochs": 1
        },
        "adapt": {
            "loops": 2,
            "trajectories_per_batch": 2,
            "iterations_per_episode": 2,
            "eval_episodes": 2,
            "reference_iterations": 2
        },
        "theory": { "pairs": 8, "max_states": 5, "max_actions": 3, "seed": 9 }
    })
}

fn write_config(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run_pretrain(dir: &Path) -> PathBuf {
    let config = write_config(dir, &tiny_config());
    let out = dir.join("run");
    let code = run(&args(&[
        "pretrain",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK, "pretrain failed");
    out
}

#[test]
fn pretrain_produces_all_five_artifacts() {
    let dir = workdir("artifacts");
    let out = run_pretrain(&dir);
    for artifact in [
        "config.json",
        "checkpoints/policy.lsrw",
        "checkpoints/codec.lsrw",
        "dataset/trajectories.lsrt",
        "store/reference.lsrs",
        "metrics/pretrain.jsonl",
        "metrics/encoder.jsonl",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    // resolved config echoes the mode and every default
    let resolved = fs::read_to_string(out.join("config.json")).unwrap();
    assert!(resolved.contains("\"mode\": \"pretrain\""));
    assert!(resolved.contains("\"tau\": 0.7"));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = workdir("repro");
    let config = write_config(&dir, &tiny_config());
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let code = run(&args(&[
            "pretrain",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
    }
    for file in [
        "metrics/pretrain.jsonl",
        "metrics/encoder.jsonl",
        "checkpoints/policy.lsrw",
        "checkpoints/codec.lsrw",
        "dataset/trajectories.lsrt",
        "store/reference.lsrs",
    ] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn different_seed_changes_metrics() {
    let dir = workdir("seed-sensitivity");
    let config = write_config(&dir, &tiny_config());
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    assert_eq!(
        run(&args(&[
            "pretrain",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_a.to_str().unwrap(),
        ])),
        EXIT_OK
    );
    assert_eq!(
        run(&args(&[
            "pretrain",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "999",
            "--out",
            out_b.to_str().unwrap(),
        ])),
        EXIT_OK
    );
    let a = fs::read(out_a.join("metrics/pretrain.jsonl")).unwrap();
    let b = fs::read(out_b.join("metrics/pretrain.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn adapt_requires_artifacts_and_names_the_missing_one() {
    let dir = workdir("missing");
    let out = run_pretrain(&dir);
    fs::remove_file(out.join("store/reference.lsrs")).unwrap();
    let code = run(&args(&["adapt", "--run-dir", out.to_str().unwrap()]));
    assert_eq!(code, EXIT_MISSING_ARTIFACT);
}

#[test]
fn adapt_emits_requested_loop_count_and_summary() {
    let dir = workdir("adapt");
    let out = run_pretrain(&dir);
    let code = run(&args(&[
        "adapt",
        "--run-dir",
        out.to_str().unwrap(),
        "--loops",
        "2",
        "--test-terrain",
        "stairs",
        "--test-difficulty",
        "0.9",
    ]));
    assert_eq!(code, EXIT_OK);
    let metrics = fs::read_to_string(out.join("metrics/adapt.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "one record per loop");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "terrain,difficulty,origin_reward,adapted_reward,expert_reward"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("stairs,0.9,"), "row: {row}");
}

#[test]
fn eval_writes_metrics_json() {
    let dir = workdir("eval");
    let out = run_pretrain(&dir);
    let code = run(&args(&[
        "eval",
        "--run-dir",
        out.to_str().unwrap(),
        "--test-terrain",
        "flat",
        "--test-difficulty",
        "0.3",
    ]));
    assert_eq!(code, EXIT_OK);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics/eval.json")).unwrap()).unwrap();
    assert!(metrics["mean_step_reward"].is_f64());
    assert_eq!(metrics["episodes"], 2);
}

#[test]
fn theory_sweep_writes_one_row_per_pair() {
    let dir = workdir("theory");
    let config = write_config(&dir, &tiny_config());
    let out = dir.join("sweep");
    let code = run(&args(&[
        "theory",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(out.join("theory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8, "header plus one row per pair");
    assert!(csv.lines().next().unwrap().starts_with("pair,states,actions,gamma,lhs,rhs"));
}

#[test]
fn corrupted_pair_dump_reproduces_the_failure() {
    let dir = workdir("theory-failure");
    // a pair whose transition row is far from stochastic: value iteration
    // diverges, the sweep must dump the pair and exit 4
    let corrupt_pair = serde_json::json!([{
        "id": 7,
        "train": {
            "n_states": 2, "n_actions": 1,
            "transitions": [1.9, 0.4, 0.3, 0.7],
            "rewards": [1.0, -0.5],
            "gamma": 0.9,
            "initial_dist": [1.0, 0.0]
        },
        "test": {
            "n_states": 2, "n_actions": 1,
            "transitions": [0.5, 0.5, 0.2, 0.8],
            "rewards": [0.3, 0.1],
            "gamma": 0.9,
            "initial_dist": [1.0, 0.0]
        }
    }]);
    let pairs_path = dir.join("pairs.json");
    fs::write(&pairs_path, serde_json::to_string(&corrupt_pair).unwrap()).unwrap();

    let mut config = tiny_config();
    config["theory"]["pairs_file"] = serde_json::json!(pairs_path.to_str().unwrap());
    let config_path = write_config(&dir, &config);

    let out = dir.join("sweep");
    let code = run(&args(&[
        "theory",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_NUMERICAL);
    let dump = out.join("theory_failure.json");
    assert!(dump.exists(), "failure dump missing");

    // re-running on the dump reproduces the same failure class
    let mut config2 = tiny_config();
    config2["theory"]["pairs_file"] = serde_json::json!(dump.to_str().unwrap());
    let config2_path = dir.join("config2.json");
    fs::write(&config2_path, serde_json::to_string(&config2).unwrap()).unwrap();
    let out2 = dir.join("sweep2");
    let code2 = run(&args(&[
        "theory",
        "--config",
        config2_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]));
    assert_eq!(code2, EXIT_NUMERICAL, "dump re-run must fail identically");
}

#[test]
fn ablate_emits_five_domain_rows_by_four_variants() {
    let dir = workdir("ablate");
    let out = run_pretrain(&dir);
    let code = run(&args(&["ablate", "--run-dir", out.to_str().unwrap(), "--loops", "1"]));
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "domain,LSR,LSR-w/o-con,LSR-w/o-AE,LSR-w/o-su");
    assert_eq!(lines.len(), 6, "header + 5 domain rows");
    for (i, domain) in ["Slope", "Stair", "Plain", "Friction", "Mass"].iter().enumerate() {
        assert!(lines[i + 1].starts_with(domain), "{}", lines[i + 1]);
        assert_eq!(lines[i + 1].split(',').count(), 5);
    }
    // soft-update column: numeric for terrain rows, "/" for the rest
    assert!(lines[3].ends_with("/"));
    assert!(lines[4].ends_with("/"));
    assert!(lines[5].ends_with("/"));
}

#[test]
fn invalid_config_key_exits_2() {
    let dir = workdir("badkey");
    let mut config = tiny_config();
    config["pretrain"]["warp_drive"] = serde_json::json!(9000);
    let config_path = write_config(&dir, &config);
    let code = run(&args(&[
        "pretrain",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("run").to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn off_grid_difficulty_exits_2() {
    let dir = workdir("baddiff");
    let out = run_pretrain(&dir);
    let code = run(&args(&[
        "eval",
        "--run-dir",
        out.to_str().unwrap(),
        "--test-difficulty",
        "0.55",
    ]));
    assert_eq!(code, EXIT_CONFIG);
}
