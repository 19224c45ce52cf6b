use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{provenance_counts, ExperimentConfig, Layout, Stage};
use crate::data::LabelledDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSetSummary {
    pub total: usize,
    pub benign: usize,
    pub malignant: usize,
    pub original: usize,
    pub synthetic: usize,
    pub augmented: usize,
}

impl TrainingSetSummary {
    pub fn of(ds: &LabelledDataset) -> Self {
        let counts = ds.class_counts();
        let (original, synthetic, augmented) = provenance_counts(ds);
        Self {
            total: ds.len(),
            benign: counts.benign,
            malignant: counts.malignant,
            original,
            synthetic,
            augmented,
        }
    }
}

/// What happened in an experiment directory. Artifact paths are relative to
/// the directory and only listed when the file exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub version: String,
    pub mode: String,
    pub master_seed: u64,
    pub config_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    /// Keyed by stage name.
    pub stages: BTreeMap<String, StageEntry>,
    pub failed_stage: Option<String>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub training_set: Option<TrainingSetSummary>,
}

impl ExperimentRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            mode: config.mode.to_string(),
            master_seed: config.seed,
            config_fingerprint: config.fingerprint(),
            seeds: BTreeMap::new(),
            stages: BTreeMap::new(),
            failed_stage: None,
            artifacts: BTreeMap::new(),
            training_set: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub(super) fn load_or_new(path: &Path, config: &ExperimentConfig) -> Result<Self> {
        match Self::load(path) {
            Ok(r) if r.config_fingerprint == config.fingerprint() => Ok(r),
            Ok(_) | Err(Error::MissingArtifact(_)) => Ok(Self::new(config)),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub(super) fn set_stage(&mut self, stage: Stage, status: StageStatus, seconds: f64, error: Option<String>) {
        self.stages.insert(stage.to_string(), StageEntry { status, seconds, error });
        if status == StageStatus::Failed {
            self.failed_stage = Some(stage.to_string());
        } else if self.failed_stage.as_deref() == Some(stage.as_str()) {
            self.failed_stage = None;
        }
    }

    pub(super) fn refresh_artifacts(&mut self, layout: &Layout) {
        let candidates = [
            ("config_snapshot", layout.config_snapshot()),
            ("train_data", layout.train_data().join("manifest.csv")),
            ("test_data", layout.test_data().join("manifest.csv")),
            ("translator_checkpoint", layout.translator()),
            ("translator_partial_checkpoint", layout.translator_partial()),
            ("synthetic", layout.synthetic().join("manifest.csv")),
            ("cyclegan_history", layout.logs().join("cyclegan_history.csv")),
            ("classifier_checkpoint", layout.classifier()),
            ("classifier_log", layout.logs().join("classifier_training.csv")),
            ("training_set", layout.logs().join("training_set.csv")),
            ("eval_report", layout.eval_report()),
            ("roc", layout.report_dir().join("roc.csv")),
            ("comparison", layout.report_dir().join("comparison.csv")),
            ("saliency", layout.report_dir().join("saliency/metadata.json")),
            ("features_train", layout.report_dir().join("features_train.csv")),
            ("features_test", layout.report_dir().join("features_test.csv")),
        ];
        self.artifacts.clear();
        for (name, path) in candidates {
            if path.is_file() {
                let rel = path.strip_prefix(&layout.root).unwrap_or(&path).to_path_buf();
                self.artifacts.insert(name.into(), rel);
            }
        }
    }
}
