//! Labelled image datasets and the preprocessing applied to them before
//! translation or classification.

mod augment;
mod manifest;
mod preprocess;
mod sampling;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

pub use augment::{augment_offline, AugmentationSpec, Magnitudes, Span, Transform};
pub(crate) use augment::{hsv_to_rgb, rgb_to_hsv};
pub use manifest::{load_manifest, read_snapshot, write_snapshot, SnapshotMetadata, MANIFEST_FILE, METADATA_FILE};
pub use preprocess::{pad_and_resize, standardize, RESAMPLING_KERNEL};
pub use sampling::{merge_and_shuffle, undersample_balance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign = 0,
    Malignant = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Benign),
            1 => Some(Label::Malignant),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(format!("unknown label {other:?} (expected benign or malignant)")),
        }
    }
}

/// Where a sample came from. Derived samples keep the id of their source.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Synthetic { source_id: String },
    Augmented { source_id: String },
}

impl Provenance {
    pub fn kind(&self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Synthetic { .. } => "synthetic",
            Provenance::Augmented { .. } => "augmented",
        }
    }

    pub fn source_id(&self) -> Option<&str> {
        match self {
            Provenance::Original => None,
            Provenance::Synthetic { source_id } | Provenance::Augmented { source_id } => Some(source_id),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSample {
    pub id: String,
    pub label: Label,
    pub provenance: Provenance,
    pub image: ImageTensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub benign: usize,
    pub malignant: usize,
}

impl ClassCounts {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Benign => self.benign,
            Label::Malignant => self.malignant,
        }
    }

    pub fn total(&self) -> usize {
        self.benign + self.malignant
    }
}

/// Ordered samples with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelledDataset {
    samples: Vec<LabelledSample>,
    /// Seed of the permutation that produced the current order, if any.
    pub permutation_seed: Option<u64>,
}

impl LabelledDataset {
    pub fn new(samples: Vec<LabelledSample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {:?}", s.id)));
            }
        }
        Ok(Self {
            samples,
            permutation_seed: None,
        })
    }

    pub fn samples(&self) -> &[LabelledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabelledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for s in &self.samples {
            match s.label {
                Label::Benign => c.benign += 1,
                Label::Malignant => c.malignant += 1,
            }
        }
        c
    }

    /// Samples of one class, in dataset order.
    pub fn with_label(&self, label: Label) -> LabelledDataset {
        LabelledDataset {
            samples: self.samples.iter().filter(|s| s.label == label).cloned().collect(),
            permutation_seed: None,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn images(&self) -> Vec<ImageTensor> {
        self.samples.iter().map(|s| s.image.clone()).collect()
    }

    /// Applies `f` to every image, keeping ids, labels and provenance.
    pub fn map_images(&self, f: impl Fn(&ImageTensor) -> Result<ImageTensor>) -> Result<LabelledDataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(LabelledSample {
                    image: f(&s.image)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(LabelledDataset {
            samples,
            permutation_seed: self.permutation_seed,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::imaging::RangeTag;

    pub fn sample(id: &str, label: Label, value: f32) -> LabelledSample {
        LabelledSample {
            id: id.to_string(),
            label,
            provenance: Provenance::Original,
            image: ImageTensor::filled(4, 4, 3, value, RangeTag::Raw0To255).unwrap(),
        }
    }

    pub fn dataset(benign: usize, malignant: usize) -> LabelledDataset {
        let mut v = Vec::new();
        for i in 0..benign {
            v.push(sample(&format!("b{i}"), Label::Benign, (i % 256) as f32));
        }
        for i in 0..malignant {
            v.push(sample(&format!("m{i}"), Label::Malignant, (i % 256) as f32));
        }
        LabelledDataset::new(v).unwrap()
    }
}
