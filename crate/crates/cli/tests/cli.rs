//! End-to-end tests of the command-line interface: every subcommand, the
//! exit-code contract and the config-key documentation.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skeldiff"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    write_config_named(dir, "exp.toml", "", extra)
}

/// `prefix` lands before the first section header (top-level keys),
/// `extra` after everything.
fn write_config_named(dir: &Path, name: &str, prefix: &str, extra: &str) -> std::path::PathBuf {
    let base = r#"
seed = 3

[synthetic]
seed = 5
n_actors = 2
n_frames = 30
joint_count = 4

[[synthetic.anomalies]]
kind = "teleport"
rate = 0.1
magnitude = 2.0

[model]
channel_ladder = [2, 6, 2]
cond_width = 4

[conditioning]
strategy = "e2e_embedding"
encoder_hidden = [6]

[train]
epochs = 1
batch_size = 64
learning_rate = 1e-3

[scoring]
generations = 2

[eval]
stats = ["min"]
generation_counts = [1, 2]
"#;
    let path = dir.join("exp.toml");
    std::fs::write(&path, format!("{base}\n{extra}")).unwrap();
    path
}

fn run_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed (code {:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn synth_writes_loadable_deterministic_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    // Missing output directory is created.
    let out_a = dir.path().join("nested/does/not/exist");
    run_ok(&bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .output()
        .unwrap());
    assert!(out_a.join("tracks.jsonl").exists());
    assert!(out_a.join("labels.jsonl").exists());
    assert!(out_a.join("manifest.toml").exists());

    // Round trip through the loader.
    let ds = skeldiff::motion_data::load_dataset::<f64>(&out_a.join("manifest.toml")).unwrap();
    assert_eq!(ds.tracks.len(), 2);
    assert_eq!(ds.skeleton.joint_count, 4);
    assert_eq!(ds.labels.unwrap().len(), 30);

    // Same seed twice: identical bytes.
    let out_b = dir.path().join("again");
    run_ok(&bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_b)
        .output()
        .unwrap());
    for name in ["tracks.jsonl", "labels.jsonl", "manifest.toml"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn train_writes_loadable_checkpoint_and_eval_prints_auc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run_dir = dir.path().join("run");
    run_ok(&bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap());
    let ckpt_path = run_dir.join("checkpoint.json");
    assert!(ckpt_path.exists());
    assert!(run_dir.join("metrics.ndjson").exists());
    let ckpt = skeldiff::training::load_checkpoint::<f64>(&ckpt_path).unwrap();
    assert_eq!(ckpt.state.epoch, 1);

    let text = run_ok(&bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .arg("--histogram")
        .output()
        .unwrap());
    assert!(text.contains("auc[stat=min, m=1]"), "{text}");
    assert!(text.contains("auc[stat=min, m=2]"), "{text}");
    assert!(run_dir.join("report.json").exists());
    assert!(run_dir.join("sweep.csv").exists());
    assert!(run_dir.join("scores.csv").exists());
    assert!(run_dir.join("histogram.csv").exists());

    // Score works without labels.
    let text = run_ok(&bin()
        .args(["score", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap());
    assert!(text.contains("scored"), "{text}");
}

#[test]
fn training_on_anomalous_data_exits_with_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    // Synthesize a dataset WITH anomalies, then point training at it via
    // a manifest.
    let cfg_synth = write_config(dir.path(), "");
    let data_dir = dir.path().join("data");
    run_ok(&bin()
        .args(["synth", "--config"])
        .arg(&cfg_synth)
        .arg("--out")
        .arg(&data_dir)
        .output()
        .unwrap());

    let manifest = data_dir.join("manifest.toml");
    let cfg = write_config_named(
        dir.path(),
        "exp_manifest.toml",
        &format!("dataset = '{}'", manifest.display()),
        "",
    );
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "expected data exit code");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("protocol error"), "{stderr}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let two_epochs = write_config(dir.path(), "[loss]\nlambda_rec = 1.0");
    let text = std::fs::read_to_string(&two_epochs)
        .unwrap()
        .replace("epochs = 1", "epochs = 2");
    let cfg2 = dir.path().join("exp2.toml");
    std::fs::write(&cfg2, &text).unwrap();
    let cfg1 = dir.path().join("exp1.toml");
    std::fs::write(&cfg1, text.replace("epochs = 2", "epochs = 1")).unwrap();

    // Uninterrupted two epochs.
    let full_dir = dir.path().join("full");
    run_ok(&bin()
        .args(["train", "--config"])
        .arg(&cfg2)
        .arg("--out")
        .arg(&full_dir)
        .output()
        .unwrap());

    // One epoch, then resume to two.
    let resumed_dir = dir.path().join("resumed");
    run_ok(&bin()
        .args(["train", "--config"])
        .arg(&cfg1)
        .arg("--out")
        .arg(&resumed_dir)
        .output()
        .unwrap());
    let text = run_ok(&bin()
        .args(["train", "--config"])
        .arg(&cfg2)
        .arg("--out")
        .arg(&resumed_dir)
        .arg("--resume")
        .output()
        .unwrap());
    assert!(text.contains("resuming from epoch 1"), "{text}");

    // Checkpoints agree modulo the timestamp.
    let mut a: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(full_dir.join("checkpoint.json")).unwrap(),
    )
    .unwrap();
    let mut b: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(resumed_dir.join("checkpoint.json")).unwrap(),
    )
    .unwrap();
    a["saved_at_unix"] = 0.into();
    b["saved_at_unix"] = 0.into();
    // The resumed run trained under the 2-epoch config both times.
    assert_eq!(a, b);
}

#[test]
fn missing_checkpoint_fails_clearly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("empty"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "{stderr}");
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["train", "--config", "/definitely/not/here.toml"])
        .output()
        .unwrap();
    // Unreadable config is an I/O problem: data exit code.
    assert_eq!(out.status.code(), Some(2));
    // Bad config contents are usage problems.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "workers = 0").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_emits_one_report_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[ablation]
strategies = ["input_concat", "e2e_embedding", "ae_embedding"]
tasks = ["forecasting"]
"#,
    );
    let run_dir = dir.path().join("ablation");
    let text = run_ok(&bin()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap());
    assert!(run_dir.join("ablation.csv").exists());
    let table = std::fs::read_to_string(run_dir.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}"); // header + 3 cells
    for name in [
        "cell_inputconcat_forecasting.json",
        "cell_e2eembedding_forecasting.json",
        "cell_aeembedding_forecasting.json",
    ] {
        assert!(run_dir.join(name).exists(), "missing {name}\n{text}");
    }
}

#[test]
fn env_overrides_out_dir_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let env_dir = dir.path().join("from-env");
    run_ok(&bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .env("SKELDIFF_OUT", &env_dir)
        .output()
        .unwrap());
    assert!(env_dir.join("tracks.jsonl").exists());

    let out = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .env("SKELDIFF_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_documents_every_config_key() {
    let help = run_ok(&bin().arg("--help").output().unwrap());
    // Serialize a fully populated config and require every key to appear
    // in the help text.
    let mut cfg = skeldiff::config::ExperimentConfig::default();
    cfg.synthetic.anomalies.push(skeldiff::motion_data::AnomalyInjector {
        kind: skeldiff::motion_data::AnomalyKind::Freeze,
        rate: 0.1,
        magnitude: 1.0,
    });
    cfg.dataset = Some("x".into());
    let toml_text = toml::to_string(&cfg).unwrap();
    let mut missing = Vec::new();
    for line in toml_text.lines() {
        let line = line.trim();
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim();
            if !help.contains(key) {
                missing.push(key.to_string());
            }
        } else if line.starts_with('[') {
            let section = line.trim_matches(['[', ']']);
            if !help.contains(section) {
                missing.push(section.to_string());
            }
        }
    }
    assert!(missing.is_empty(), "undocumented config keys: {missing:?}");
}
