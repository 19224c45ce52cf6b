use std::path::Path;

use cyclefocal::benchmark::BenchmarkConfig;
use cyclefocal::data::read_snapshot;
use cyclefocal::error::Error;
use cyclefocal::evaluation::EvalReport;
use cyclefocal::pipeline::{
    run_pipeline, run_stage, DatasetSource, ExperimentConfig, ExperimentRecord, Layout, Mode, Stage, StageStatus,
};
use cyclefocal::translation::{DiscriminatorSpec, GeneratorSpec};

fn tiny(out: &Path, mode: Mode) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        dataset: Some(DatasetSource::Synthetic(BenchmarkConfig {
            image_side: 16,
            n_majority: 20,
            n_minority: 10,
            domain_gap: 1.0,
            seed: 4,
            channels: 3,
        })),
        image_side: 16,
        mode,
        seed: 11,
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    c.translation.generator = GeneratorSpec {
        depth: 2,
        base_filters: 4,
        ..Default::default()
    };
    c.translation.discriminator = DiscriminatorSpec {
        n_layers: 2,
        base_filters: 4,
        ..Default::default()
    };
    c.translation.cyclegan.epochs = 2;
    c.translation.checkpoint_every = 1;
    c.classifier.train.max_epochs = 2;
    c.classifier.train.batch_size = 8;
    c.explain.saliency_samples = 2;
    c
}

#[test]
fn melanet_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(&dir.path().join("exp"), Mode::Melanet);
    let report = run_pipeline(&config).unwrap();
    let layout = Layout::new(&config.output_dir);

    let record = ExperimentRecord::load(&layout.record()).unwrap();
    assert!(Stage::ALL
        .iter()
        .all(|s| record.stages[s.as_str()].status == StageStatus::Completed));
    for path in record.artifacts.values() {
        assert!(layout.root.join(path).is_file(), "{}", path.display());
    }
    assert!(!record.artifacts.contains_key("translator_partial_checkpoint"));

    // 14 benign + 7 malignant originals, plus one synthetic per benign original.
    let ts = record.training_set.unwrap();
    assert_eq!((ts.total, ts.benign, ts.malignant, ts.synthetic), (35, 14, 21, 14));
    let (syn, _) = read_snapshot(&layout.synthetic()).unwrap();
    assert_eq!(syn.len(), 14);

    assert_eq!(report.per_sample_scores.len(), 9);
    assert_eq!(report.counts.total(), 9);
    assert_eq!(report.config_fingerprint, config.fingerprint());
    for f in ["roc.csv", "comparison.csv", "features_train.csv", "features_test.csv", "saliency/metadata.json"] {
        assert!(layout.report_dir().join(f).is_file(), "{f}");
    }
    let features = std::fs::read_to_string(layout.report_dir().join("features_train.csv")).unwrap();
    assert_eq!(features.lines().count(), 36);
}

#[test]
fn chained_stages_match_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(&dir.path().join("a"), Mode::Melanet);
    let b = tiny(&dir.path().join("b"), Mode::Melanet);
    let full = run_pipeline(&a).unwrap();
    for stage in Stage::ALL {
        run_stage(stage, &b).unwrap();
    }
    let chained = EvalReport::load_json(&Layout::new(&b.output_dir).eval_report()).unwrap();
    assert_eq!(full, chained);
}

#[test]
fn baseline_never_touches_the_translator() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(&dir.path().join("base"), Mode::BaselinePlain);
    run_pipeline(&config).unwrap();
    let layout = Layout::new(&config.output_dir);
    assert!(!layout.translator().exists());
    assert!(!layout.synthetic().exists());
    let record = ExperimentRecord::load(&layout.record()).unwrap();
    assert_eq!(record.stages["train_translator"].status, StageStatus::Skipped);
    assert_eq!(record.training_set.unwrap().total, 21);
}

#[test]
fn augment_baseline_grows_the_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(&dir.path().join("aug"), Mode::BaselineAugment);
    config.augmentation = Some(cyclefocal::data::AugmentationSpec {
        factor: 3,
        ..Default::default()
    });
    run_pipeline(&config).unwrap();
    let record = ExperimentRecord::load(&Layout::new(&config.output_dir).record()).unwrap();
    let ts = record.training_set.unwrap();
    assert_eq!((ts.total, ts.original, ts.augmented), (63, 21, 42));
}

#[test]
fn missing_prerequisites_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(&dir.path().join("m"), Mode::Melanet);

    let err = run_stage(Stage::Evaluate, &config).unwrap_err();
    assert!(matches!(err.source, Error::MissingArtifact(ref p) if p.ends_with("config.snapshot")));

    run_stage(Stage::Prepare, &config).unwrap();
    let err = run_stage(Stage::Evaluate, &config).unwrap_err();
    assert!(matches!(err.source, Error::MissingArtifact(ref p) if p.ends_with("classifier.cfna")), "{err}");
    assert_eq!(err.exit_code(), 2);
    let record = ExperimentRecord::load(&Layout::new(&config.output_dir).record()).unwrap();
    assert_eq!(record.failed_stage.as_deref(), Some("evaluate"));

    let err = run_stage(Stage::Synthesize, &config).unwrap_err();
    assert!(matches!(err.source, Error::MissingArtifact(ref p) if p.ends_with("translator.cfna")));

    // A different config may not reuse the directory.
    let mut other = config.clone();
    other.seed += 1;
    let err = run_stage(Stage::TrainClassifier, &other).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn invalid_config_maps_to_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny(&dir.path().join("bad"), Mode::Melanet);
    config.threshold = 2.0;
    assert_eq!(run_pipeline(&config).unwrap_err().exit_code(), 1);
}
