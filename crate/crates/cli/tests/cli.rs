use std::path::Path;
use std::process::{Command, Output};

fn pipeline(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipeline"))
        .args(["--log", "warn"])
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "dataset": { "synthetic": {
            "image_side": 16, "n_majority": 16, "n_minority": 6,
            "domain_gap": 1.0, "seed": 3, "channels": 3
        }},
        "image_side": 16,
        "seed": 3,
        "output_dir": "exp",
        "translation": {
            "generator": { "depth": 2, "base_filters": 2 },
            "discriminator": { "n_layers": 2, "base_filters": 2 },
            "cyclegan": { "epochs": 1 },
            "checkpoint_every": 0
        },
        "classifier": { "train": { "max_epochs": 1, "batch_size": 8 } },
        "explain": { "saliency_samples": 1 }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = pipeline(&["run", "--config", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sensitivity"));
    assert!(dir.path().join("exp/report/eval_report.json").exists());

    let out = pipeline(
        &["report", "--experiments", "exp", "--out", "cmp", "--reference"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    assert!(csv.starts_with("method,auc_pct,sensitivity_pct,fn,reference"));
    assert!(csv.contains("MelaNet"));
    assert!(dir.path().join("cmp/roc_overlay.csv").exists());
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let out = pipeline(&["run", "--config", "broken.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = pipeline(&["run", "--config", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_without_prerequisites_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = pipeline(&["stage", "train_classifier", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(&["stage", "nonsense", "--config", "x.json"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn bench_generate_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let bench = serde_json::json!({
        "image_side": 8, "n_majority": 10, "n_minority": 4,
        "domain_gap": 0.5, "seed": 1, "channels": 3
    });
    std::fs::write(dir.path().join("bench.json"), bench.to_string()).unwrap();
    let out = pipeline(&["bench", "generate", "--config", "bench.json", "--out", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("b/train").is_dir());
    assert!(dir.path().join("b/test").is_dir());
}
