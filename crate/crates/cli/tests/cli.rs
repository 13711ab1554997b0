//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn repdfd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repdfd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn prepare_tiny(dir: &Path) {
    let out = repdfd(
        &[
            "prepare",
            "--out",
            "data",
            "--seed",
            "7",
            "--set",
            "train_videos=6",
            "--set",
            "val_videos=2",
            "--set",
            "test_videos=4",
            "--set",
            "frames_per_video=2",
        ],
        dir,
    );
    assert_success(&out, "prepare");
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = repdfd(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["prepare", "train", "eval", "sweep-p", "sweep-templates", "analyze-sim", "dump-features"] {
        assert!(text.contains(sub), "help missing subcommand {sub}");
    }
}

#[test]
fn unknown_flag_and_command_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = repdfd(&["train", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = repdfd(&["transmogrify"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = repdfd(&["prepare", "--out", "d", "--set", "nope=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
}

#[test]
fn backend_env_var_selects_default_backend() {
    let dir = tempfile::tempdir().unwrap();
    prepare_tiny(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_repdfd"))
        .args(["analyze-sim", "--manifest", "data/manifest.jsonl", "--p", "6"])
        .env("REPDFD_BACKEND", "warp-drive")
        .current_dir(dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("warp-drive"), "stderr should name the backend: {err}");

    // An explicit flag overrides the environment.
    let out = Command::new(env!("CARGO_BIN_EXE_repdfd"))
        .args(["analyze-sim", "--manifest", "data/manifest.jsonl", "--p", "6", "--backend", "toy"])
        .env("REPDFD_BACKEND", "warp-drive")
        .current_dir(dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn train_same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    prepare_tiny(dir.path());
    for run in ["run_a", "run_b"] {
        let out = repdfd(
            &[
                "train",
                "--manifest",
                "data/manifest.jsonl",
                "--out",
                run,
                "--p",
                "6",
                "--epochs",
                "2",
                "--seed",
                "7",
            ],
            dir.path(),
        );
        assert_success(&out, "train");
    }
    let a = std::fs::read(dir.path().join("run_a/final.rpdf")).unwrap();
    let b = std::fs::read(dir.path().join("run_b/final.rpdf")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical checkpoints");

    // The run manifest records matching hashes.
    let ma: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_a/run_manifest.json")).unwrap())
            .unwrap();
    let mb: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_b/run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(
        ma["details"]["checkpoint_final_sha256"],
        mb["details"]["checkpoint_final_sha256"]
    );
    assert!(ma["backend_digest"].is_string());
}

#[test]
fn eval_reports_and_p_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    prepare_tiny(dir.path());
    let manifest_before = std::fs::read(dir.path().join("data/manifest.jsonl")).unwrap();
    let image_before = std::fs::read(dir.path().join("data/images/train000_000.png")).unwrap();
    let out = repdfd(
        &[
            "train", "--manifest", "data/manifest.jsonl", "--out", "run", "--p", "6",
            "--epochs", "1", "--seed", "7",
        ],
        dir.path(),
    );
    assert_success(&out, "train");

    let out = repdfd(
        &[
            "eval", "--manifest", "data/manifest.jsonl", "--checkpoint", "run/final.rpdf",
            "--out", "report.json",
        ],
        dir.path(),
    );
    assert_success(&out, "eval");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report[0]["template_config"], "T0T3");
    assert_eq!(report[0]["n_frames"], 8);

    // Mismatched p between checkpoint and configuration is a config error.
    let out = repdfd(
        &[
            "eval", "--manifest", "data/manifest.jsonl", "--checkpoint", "run/final.rpdf",
            "--p", "4",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));

    // Commands never mutate their inputs.
    assert_eq!(
        manifest_before,
        std::fs::read(dir.path().join("data/manifest.jsonl")).unwrap()
    );
    assert_eq!(
        image_before,
        std::fs::read(dir.path().join("data/images/train000_000.png")).unwrap()
    );
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    prepare_tiny(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "seed = 3\np = 6\nepochs = 1\n").unwrap();
    let out = repdfd(
        &[
            "train", "--config", "run.cfg", "--manifest", "data/manifest.jsonl",
            "--out", "run", "--seed", "7",
        ],
        dir.path(),
    );
    assert_success(&out, "train with config");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["settings"]["seed"], 7, "flag must override config file");
    assert_eq!(manifest["settings"]["p"], 6, "config file must apply");
    assert_eq!(manifest["settings"]["epochs"], 1);
}

#[test]
fn sweeps_and_analysis_produce_tables() {
    let dir = tempfile::tempdir().unwrap();
    prepare_tiny(dir.path());

    let out = repdfd(
        &[
            "sweep-p", "--manifest", "data/manifest.jsonl", "--p", "4,6", "--out", "sweep",
            "--epochs", "1", "--seed", "7",
        ],
        dir.path(),
    );
    assert_success(&out, "sweep-p");
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep/sweep_p.json")).unwrap())
            .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    // #Para column: 6p(H+W) − 12p² at 32×32.
    assert_eq!(rows[0]["p"], 4);
    assert_eq!(rows[0]["param_count"], 6 * 4 * 64 - 12 * 16);
    assert_eq!(rows[1]["p"], 6);
    assert_eq!(rows[1]["param_count"], 6 * 6 * 64 - 12 * 36);

    let out = repdfd(
        &[
            "sweep-templates", "--manifest", "data/manifest.jsonl", "--templates",
            "T0T1,RAND", "--out", "sweep_t", "--p", "6", "--epochs", "1", "--seed", "7",
        ],
        dir.path(),
    );
    assert_success(&out, "sweep-templates");
    let rows: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sweep_t/sweep_templates.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    // Unknown template id fails with a config error.
    let out = repdfd(
        &[
            "sweep-templates", "--manifest", "data/manifest.jsonl", "--templates", "T9T9",
            "--out", "sweep_bad", "--p", "6", "--epochs", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    let out = repdfd(
        &["analyze-sim", "--manifest", "data/manifest.jsonl", "--p", "6", "--out", "sim.json"],
        dir.path(),
    );
    assert_success(&out, "analyze-sim");
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sim.json")).unwrap())
            .unwrap();
    assert_eq!(rows[0]["dataset"], "toy");
    assert_eq!(rows[0]["mean_cos"].as_array().unwrap().len(), 4);

    let out = repdfd(
        &[
            "dump-features", "--manifest", "data/manifest.jsonl", "--p", "6", "--out",
            "features.bin", "--split", "test",
        ],
        dir.path(),
    );
    assert_success(&out, "dump-features");
    assert!(dir.path().join("features.bin").exists());
    assert!(dir.path().join("features.bin.run.json").exists());
}
