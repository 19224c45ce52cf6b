//! End-to-end experiment orchestration.
//!
//! Every stage reads its inputs from and writes its outputs to the experiment
//! directory, so running the stages one by one is the same computation as
//! [`run_pipeline`]. Layout under the output directory:
//!
//! ```text
//! config.snapshot    resolved configuration (JSON)
//! record.json        stage timings, seeds, artifact paths
//! data/{train,test}/ resized originals
//! checkpoints/       translator.cfna, classifier.cfna
//! synthetic/         translated minority samples
//! logs/              loss histories, training-set listing
//! report/            eval_report.json, roc.csv, comparison tables, saliency/, features
//! ```

mod config;
mod record;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub use config::{ClassifierSection, DatasetSource, ExperimentConfig, ExplainSection, Mode, Overrides, TranslationSection};
pub use record::{ExperimentRecord, StageEntry, StageStatus, TrainingSetSummary};

use crate::benchmark;
use crate::classifier::{build_classifier, train_classifier, write_training_log, ClassifierState};
use crate::data::{
    augment_offline, load_manifest, merge_and_shuffle, pad_and_resize, read_snapshot, standardize, undersample_balance,
    write_snapshot, Label, LabelledDataset, Provenance, SnapshotMetadata, RESAMPLING_KERNEL,
};
use crate::error::{Error, Result};
use crate::evaluation::{compare_report, evaluate, EvalReport};
use crate::explain::{export_features, grad_cam};
use crate::imaging::{ImageTensor, RangeTag};
use crate::translation::{
    load_checkpoint, save_checkpoint, synthesize_minority, train_until, write_history_csv, CycleGanState, StepOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    TrainTranslator,
    Synthesize,
    TrainClassifier,
    Evaluate,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prepare,
        Stage::TrainTranslator,
        Stage::Synthesize,
        Stage::TrainClassifier,
        Stage::Evaluate,
        Stage::Explain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::TrainTranslator => "train_translator",
            Stage::Synthesize => "synthesize",
            Stage::TrainClassifier => "train_classifier",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// A stage failure, with the process exit code it maps to.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Option<Stage>,
    pub source: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "stage {s} failed: {}", self.source),
            None => write!(f, "{}", self.source),
        }
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Error> for PipelineError {
    fn from(source: Error) -> Self {
        Self { stage: None, source }
    }
}

impl PipelineError {
    /// 1 config, 2 data, 3 training, 4 evaluation.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            Error::Config(_) => 1,
            Error::Data(_) | Error::MissingArtifact(_) | Error::Image { .. } => 2,
            _ => match self.stage {
                None | Some(Stage::Prepare) => 2,
                Some(Stage::TrainTranslator | Stage::Synthesize | Stage::TrainClassifier) => 3,
                Some(Stage::Evaluate | Stage::Explain) => 4,
            },
        }
    }
}

/// Fixed artifact paths inside an experiment directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }
    pub fn record(&self) -> PathBuf {
        self.root.join("record.json")
    }
    pub fn train_data(&self) -> PathBuf {
        self.root.join("data/train")
    }
    pub fn test_data(&self) -> PathBuf {
        self.root.join("data/test")
    }
    pub fn translator(&self) -> PathBuf {
        self.root.join("checkpoints/translator.cfna")
    }
    /// Periodic checkpoint of an unfinished translator run.
    pub fn translator_partial(&self) -> PathBuf {
        self.root.join("checkpoints/translator_partial.cfna")
    }
    pub fn classifier(&self) -> PathBuf {
        self.root.join("checkpoints/classifier.cfna")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.root.join("synthetic")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.root.join("report/eval_report.json")
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one stage against the experiment directory named by the config.
pub fn run_stage(stage: Stage, config: &ExperimentConfig) -> Result<(), PipelineError> {
    config.validate()?;
    let layout = Layout::new(&config.output_dir);
    mkdir(&layout.root)?;
    let snapshot = serde_json::to_string_pretty(config).expect("config serializes");
    if stage == Stage::Prepare {
        write_text(&layout.config_snapshot(), &snapshot)?;
    } else {
        check_snapshot(&layout, config)?;
    }
    let mut record = ExperimentRecord::load_or_new(&layout.record(), config)?;

    let skipped = stage_is_skipped(stage, config.mode);
    let started = Instant::now();
    let outcome = if skipped {
        log::info!("{stage}: skipped in {} mode", config.mode);
        Ok(())
    } else {
        log::info!("{stage}: starting");
        execute(stage, config, &layout, &mut record)
    };
    let seconds = started.elapsed().as_secs_f64();
    let status = match (&outcome, skipped) {
        (Err(_), _) => StageStatus::Failed,
        (Ok(()), true) => StageStatus::Skipped,
        (Ok(()), false) => StageStatus::Completed,
    };
    record.set_stage(stage, status, seconds, outcome.as_ref().err().map(|e| e.to_string()));
    record.refresh_artifacts(&layout);
    record.save(&layout.record())?;
    outcome.map_err(|source| PipelineError {
        stage: Some(stage),
        source,
    })
}

/// Runs every stage in order and returns the evaluation report.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<EvalReport, PipelineError> {
    for stage in Stage::ALL {
        run_stage(stage, config)?;
    }
    Ok(EvalReport::load_json(&Layout::new(&config.output_dir).eval_report())?)
}

fn stage_is_skipped(stage: Stage, mode: Mode) -> bool {
    matches!(stage, Stage::TrainTranslator | Stage::Synthesize) && !mode.uses_translation()
}

fn check_snapshot(layout: &Layout, config: &ExperimentConfig) -> Result<()> {
    let path = layout.config_snapshot();
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let prior: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if prior.fingerprint() != config.fingerprint() {
        return Err(Error::Config(format!(
            "{} was prepared with a different configuration; use a fresh output directory",
            layout.root.display()
        )));
    }
    Ok(())
}

fn execute(stage: Stage, config: &ExperimentConfig, layout: &Layout, record: &mut ExperimentRecord) -> Result<()> {
    match stage {
        Stage::Prepare => prepare(config, layout, record),
        Stage::TrainTranslator => train_translator(config, layout, record),
        Stage::Synthesize => synthesize(layout),
        Stage::TrainClassifier => classifier_stage(config, layout, record),
        Stage::Evaluate => evaluate_stage(config, layout),
        Stage::Explain => explain_stage(config, layout),
    }
}

fn prepare(config: &ExperimentConfig, layout: &Layout, record: &mut ExperimentRecord) -> Result<()> {
    let (train, test) = match config.dataset.as_ref().expect("validated") {
        DatasetSource::Synthetic(b) => {
            record.seeds.insert("benchmark".into(), b.seed);
            benchmark::generate(b)?
        }
        DatasetSource::Manifest { train, test, image_root } => {
            let tr = load_manifest(train, image_root)?;
            let te = match test {
                Some(t) => load_manifest(t, image_root)?,
                None => LabelledDataset::default(),
            };
            (tr, te)
        }
    };
    let side = config.image_side;
    let resize = |d: &LabelledDataset| d.map_images(|i| pad_and_resize(&i.convert_range(RangeTag::Raw0To255)?, side));
    let mut meta = SnapshotMetadata {
        resampling_kernel: Some(RESAMPLING_KERNEL.into()),
        image_side: Some(side),
        ..Default::default()
    };
    meta.seeds.insert("master".into(), config.seed);
    write_snapshot(&layout.train_data(), &resize(&train)?, &meta)?;
    write_snapshot(&layout.test_data(), &resize(&test)?, &meta)?;
    Ok(())
}

/// Reads a snapshot and standardizes every image.
fn load_standardized(dir: &Path) -> Result<LabelledDataset> {
    let (ds, _) = read_snapshot(dir)?;
    ds.map_images(standardize)
}

fn train_translator(config: &ExperimentConfig, layout: &Layout, record: &mut ExperimentRecord) -> Result<()> {
    let t = &config.translation;
    let mut cg = t.cyclegan.clone();
    cg.seed = config.stage_seed("train_translator");
    let balance_seed = config.stage_seed("balance");
    record.seeds.insert("train_translator".into(), cg.seed);
    record.seeds.insert("balance".into(), balance_seed);

    let train = load_standardized(&layout.train_data())?;
    let balanced = undersample_balance(&train, balance_seed)?;
    let tanh = |label: Label| -> Result<Vec<ImageTensor>> {
        balanced
            .with_label(label)
            .samples()
            .iter()
            .map(|s| s.image.convert_range(RangeTag::TanhM1To1))
            .collect()
    };
    let (b, m) = (tanh(Label::Benign)?, tanh(Label::Malignant)?);

    let fresh = CycleGanState::new(&t.generator, &t.discriminator, &cg, config.image_side)?;
    let partial = layout.translator_partial();
    let mut state = match load_checkpoint(&partial) {
        Ok(s) if s.config == cg && s.generator_spec() == &t.generator && s.discriminator_spec() == &t.discriminator => {
            log::info!("resuming translator from epoch {}", s.epoch);
            s
        }
        _ => fresh,
    };
    mkdir(&layout.root.join("checkpoints"))?;
    let every = t.checkpoint_every;
    let epochs = cg.epochs;
    train_until(&mut state, &b, &m, epochs, StepOptions::default(), |s| {
        if every > 0 && s.epoch % every == 0 && s.epoch < epochs {
            save_checkpoint(s, &partial)?;
        }
        Ok(())
    })?;
    save_checkpoint(&state, &layout.translator())?;
    if partial.exists() {
        std::fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    mkdir(&layout.logs())?;
    write_history_csv(&state.history, &layout.logs().join("cyclegan_history.csv"))
}

fn synthesize(layout: &Layout) -> Result<()> {
    let ckpt = layout.translator();
    if !ckpt.is_file() {
        return Err(Error::MissingArtifact(ckpt));
    }
    let state = load_checkpoint(&ckpt)?;
    let train = load_standardized(&layout.train_data())?;
    let synthetic = synthesize_minority(&state, &train.with_label(Label::Benign))?;
    let mut meta = SnapshotMetadata {
        image_side: Some(state.image_side),
        ..Default::default()
    };
    meta.notes.insert("direction".into(), "B_to_M".into());
    write_snapshot(&layout.synthetic(), &synthetic, &meta)?;
    Ok(())
}

/// The set the classifier trains on, rebuilt from the experiment directory.
pub fn classifier_training_set(config: &ExperimentConfig, layout: &Layout) -> Result<LabelledDataset> {
    let merge_seed = config.stage_seed("merge");
    match config.mode {
        Mode::Melanet => {
            let train = load_standardized(&layout.train_data())?;
            let synthetic = load_standardized(&layout.synthetic())?;
            merge_and_shuffle(&train, &synthetic, merge_seed)
        }
        Mode::BaselinePlain => {
            let train = load_standardized(&layout.train_data())?;
            merge_and_shuffle(&train, &LabelledDataset::default(), merge_seed)
        }
        Mode::BaselineAugment => {
            let (raw, _) = read_snapshot(&layout.train_data())?;
            let mut spec = config.augmentation.clone().expect("validated");
            spec.seed = config.stage_seed("augment");
            let augmented = augment_offline(&raw, &spec)?.map_images(standardize)?;
            merge_and_shuffle(&augmented, &LabelledDataset::default(), merge_seed)
        }
    }
}

fn classifier_stage(config: &ExperimentConfig, layout: &Layout, record: &mut ExperimentRecord) -> Result<()> {
    let training = classifier_training_set(config, layout)?;
    let init_seed = config.stage_seed("classifier/init");
    let mut train_cfg = config.classifier.train.clone();
    train_cfg.seed = config.stage_seed("classifier/train");
    record.seeds.insert("classifier_init".into(), init_seed);
    record.seeds.insert("classifier_train".into(), train_cfg.seed);
    record.seeds.insert("merge".into(), config.stage_seed("merge"));
    if config.mode == Mode::BaselineAugment {
        record.seeds.insert("augment".into(), config.stage_seed("augment"));
    }

    let state = build_classifier(&config.classifier.spec, config.image_side, init_seed)?;
    let state = train_classifier(state, &training, &config.effective_focal(), &train_cfg)?;
    mkdir(&layout.root.join("checkpoints"))?;
    state.save(&layout.classifier())?;
    mkdir(&layout.logs())?;
    write_training_log(&state.history, &layout.logs().join("classifier_training.csv"))?;

    let mut listing = String::from("id,label,provenance,source_id\n");
    for s in training.samples() {
        listing.push_str(&format!(
            "{},{},{},{}\n",
            s.id,
            s.label,
            s.provenance.kind(),
            s.provenance.source_id().unwrap_or("")
        ));
    }
    write_text(&layout.logs().join("training_set.csv"), &listing)?;
    record.training_set = Some(TrainingSetSummary::of(&training));
    Ok(())
}

fn load_classifier(layout: &Layout) -> Result<ClassifierState> {
    let path = layout.classifier();
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    ClassifierState::load(&path)
}

fn load_test(layout: &Layout) -> Result<LabelledDataset> {
    let test = load_standardized(&layout.test_data())?;
    if test.is_empty() {
        return Err(Error::Evaluation("no test samples; configure a test manifest".into()));
    }
    Ok(test)
}

fn evaluate_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let state = load_classifier(layout)?;
    let test = load_test(layout)?;
    let report = evaluate(&state, &test, config.threshold, &config.fingerprint())?;
    let dir = layout.report_dir();
    mkdir(&dir)?;
    report.save_json(&layout.eval_report())?;
    report.write_roc_csv(&dir.join("roc.csv"))?;
    let table = compare_report(&[(config.mode.to_string(), report)])?.with_reference_rows();
    write_text(&dir.join("comparison.csv"), &table.to_csv())?;
    write_text(&dir.join("comparison.txt"), &table.render())
}

fn explain_stage(config: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let state = load_classifier(layout)?;
    let test = load_test(layout)?;
    let dir = layout.report_dir();
    let saliency = dir.join("saliency");
    mkdir(&saliency)?;
    let mut meta = serde_json::json!({
        "target_layer": state.last_conv_name(),
        "score": "pre-softmax logit",
        "class_index": config.explain.class_index,
        "upsampling": "bilinear",
        "maps": [],
    });
    for s in test.samples().iter().take(config.explain.saliency_samples) {
        let map = grad_cam(&state, &s.image, config.explain.class_index, &s.id)?;
        let stem = s.id.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_");
        map.write(&s.image, &saliency, &stem)?;
        meta["maps"].as_array_mut().expect("array").push(serde_json::json!(stem));
    }
    write_text(&saliency.join("metadata.json"), &serde_json::to_string_pretty(&meta).expect("json"))?;

    let training = classifier_training_set(config, layout)?;
    export_features(&state, &training)?.write_csv(&dir.join("features_train.csv"))?;
    export_features(&state, &test)?.write_csv(&dir.join("features_test.csv"))
}

/// Loads `report/eval_report.json` from each experiment directory and builds
/// a comparison table named after the directories.
pub fn compare_experiments(dirs: &[PathBuf]) -> Result<crate::evaluation::ComparisonTable> {
    let mut reports = Vec::with_capacity(dirs.len());
    for d in dirs {
        let layout = Layout::new(d);
        let report = EvalReport::load_json(&layout.eval_report())?;
        let name = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| d.display().to_string());
        reports.push((name, report));
    }
    compare_report(&reports)
}

/// Counts per provenance in a training set; for quick checks on synthetic data.
pub fn provenance_counts(ds: &LabelledDataset) -> (usize, usize, usize) {
    ds.samples().iter().fold((0, 0, 0), |(o, s, a), x| match x.provenance {
        Provenance::Original => (o + 1, s, a),
        Provenance::Synthetic { .. } => (o, s + 1, a),
        Provenance::Augmented { .. } => (o, s, a + 1),
    })
}
