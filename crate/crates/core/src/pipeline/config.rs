use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::BenchmarkConfig;
use crate::classifier::{ClassifierSpec, ClassifierTrainConfig, FocalLossParams};
use crate::data::AugmentationSpec;
use crate::error::{Error, Result};
use crate::translation::{CycleGanConfig, DiscriminatorSpec, GeneratorSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Minority synthesis by translation, then a focal-loss classifier.
    #[default]
    Melanet,
    /// Cross-entropy classifier on the original training set.
    BaselinePlain,
    /// Cross-entropy classifier on an offline-augmented training set.
    BaselineAugment,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Melanet => "melanet",
            Mode::BaselinePlain => "baseline_plain",
            Mode::BaselineAugment => "baseline_augment",
        }
    }

    pub fn uses_translation(self) -> bool {
        self == Mode::Melanet
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "melanet" => Ok(Mode::Melanet),
            "baseline_plain" => Ok(Mode::BaselinePlain),
            "baseline_augment" => Ok(Mode::BaselineAugment),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected melanet, baseline_plain or baseline_augment)"
            ))),
        }
    }
}

/// Where the images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// `path,label` manifests; image paths are relative to `image_root`.
    Manifest {
        train: PathBuf,
        test: Option<PathBuf>,
        image_root: PathBuf,
    },
    Synthetic(BenchmarkConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslationSection {
    pub cyclegan: CycleGanConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    /// Write a resumable checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TranslationSection {
    fn default() -> Self {
        Self {
            cyclegan: CycleGanConfig::default(),
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            checkpoint_every: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSection {
    pub spec: ClassifierSpec,
    /// Used by `melanet`; the baselines always train with plain cross-entropy.
    pub focal: FocalLossParams,
    pub train: ClassifierTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSection {
    /// Grad-CAM maps are written for this many test images.
    pub saliency_samples: usize,
    pub class_index: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            saliency_samples: 4,
            class_index: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: Option<DatasetSource>,
    pub image_side: usize,
    pub mode: Mode,
    pub translation: TranslationSection,
    pub classifier: ClassifierSection,
    /// Required by `baseline_augment`.
    pub augmentation: Option<AugmentationSpec>,
    pub explain: ExplainSection,
    pub threshold: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            image_side: 64,
            mode: Mode::Melanet,
            translation: TranslationSection::default(),
            classifier: ClassifierSection::default(),
            augmentation: None,
            explain: ExplainSection::default(),
            threshold: 0.5,
            seed: 0,
            output_dir: PathBuf::from("experiment"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative manifest paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(DatasetSource::Manifest { train, test, image_root }) = &mut config.dataset {
            for p in [Some(train), test.as_mut(), Some(image_root)].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            None => return Err(Error::Config("no dataset source configured".into())),
            Some(DatasetSource::Synthetic(b)) => b.validate()?,
            Some(DatasetSource::Manifest { .. }) => {}
        }
        if self.image_side < 8 {
            return Err(Error::Config(format!("image_side must be ≥ 8, got {}", self.image_side)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        if self.mode.uses_translation() {
            let t = &self.translation;
            t.cyclegan.validate()?;
            t.generator.validate(self.image_side)?;
            t.discriminator.validate(self.image_side)?;
            if t.generator.channels != self.classifier.spec.channels
                || t.discriminator.channels != self.classifier.spec.channels
            {
                return Err(Error::Config("generator, discriminator and classifier channel counts differ".into()));
            }
        }
        match (&self.mode, &self.augmentation) {
            (Mode::BaselineAugment, None) => {
                return Err(Error::Config("baseline_augment mode needs an augmentation section".into()))
            }
            (Mode::BaselineAugment, Some(a)) => a.validate()?,
            _ => {}
        }
        self.classifier.focal.validate()?;
        self.classifier.train.validate()?;
        if self.explain.class_index > 1 {
            return Err(Error::Config("explain.class_index must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Loss actually used by the classifier in this mode.
    pub fn effective_focal(&self) -> FocalLossParams {
        match self.mode {
            Mode::Melanet => self.classifier.focal,
            Mode::BaselinePlain | Mode::BaselineAugment => FocalLossParams::cross_entropy(),
        }
    }

    /// Seed of one pipeline stream, derived from the master seed.
    pub fn stage_seed(&self, stream: &str) -> u64 {
        crate::seed::derive(self.seed, stream)
    }

    /// Hash of everything that affects results (the output directory does not).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> ExperimentConfig {
        ExperimentConfig {
            dataset: Some(DatasetSource::Synthetic(BenchmarkConfig::default())),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_validate() {
        synthetic().validate().unwrap();
        assert!(ExperimentConfig::default().validate().is_err());
    }

    #[test]
    fn augment_mode_needs_its_section() {
        let mut c = synthetic();
        c.mode = Mode::BaselineAugment;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.augmentation = Some(AugmentationSpec::default());
        c.validate().unwrap();
    }

    #[test]
    fn overrides_win() {
        let c = synthetic().apply(&Overrides {
            mode: Some(Mode::BaselinePlain),
            seed: Some(9),
            output_dir: Some("x".into()),
        });
        assert_eq!((c.mode, c.seed, c.output_dir.as_path()), (Mode::BaselinePlain, 9, Path::new("x")));
        assert_eq!(c.effective_focal(), FocalLossParams::cross_entropy());
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let a = synthetic();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn loads_json_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"dataset": {"manifest": {"train": "train.csv", "image_root": "imgs"}}, "mode": "baseline_plain", "seed": 3}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.mode, Mode::BaselinePlain);
        match c.dataset.unwrap() {
            DatasetSource::Manifest { train, test, image_root } => {
                assert_eq!(train, dir.path().join("train.csv"));
                assert_eq!(image_root, dir.path().join("imgs"));
                assert!(test.is_none());
            }
            _ => panic!("wrong source"),
        }
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
        assert!(matches!("nope".parse::<Mode>(), Err(Error::Config(_))));
    }
}
