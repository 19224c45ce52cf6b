//! Manifest tables and dataset snapshot directories.
//!
//! A manifest is UTF-8 comma-separated text with a header. The required
//! columns are `path,label`; snapshots add `id,provenance,source_id`.
//! A snapshot directory holds `images/`, `manifest.csv` and `metadata.json`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, LabelledDataset, LabelledSample, Provenance};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const METADATA_FILE: &str = "metadata.json";
const IMAGES_DIR: &str = "images";

/// Provenance of a snapshot: seeds, transforms and kernels used to produce it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotMetadata {
    pub seeds: BTreeMap<String, u64>,
    pub transforms: Vec<String>,
    pub resampling_kernel: Option<String>,
    pub image_side: Option<usize>,
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    label: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    provenance: Option<String>,
    #[serde(default)]
    source_id: Option<String>,
}

fn row_error(manifest: &Path, row: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{} row {row}: {msg}", manifest.display()))
}

/// Reads a manifest and decodes every referenced image (relative to
/// `image_root`). Rows are numbered from 1, excluding the header.
pub fn load_manifest(manifest_path: &Path, image_root: &Path) -> Result<LabelledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        let row_no = i + 1;
        let row = record.map_err(|e| row_error(manifest_path, row_no, e))?;
        let label: Label = row.label.parse().map_err(|e| row_error(manifest_path, row_no, e))?;
        let file = image_root.join(&row.path);
        if !file.is_file() {
            return Err(row_error(manifest_path, row_no, format!("missing image file {}", file.display())));
        }
        let image =
            ImageTensor::load(&file).map_err(|e| row_error(manifest_path, row_no, format!("cannot decode image: {e}")))?;
        let id = row.id.filter(|s| !s.is_empty()).unwrap_or_else(|| row.path.clone());
        let source = row.source_id.filter(|s| !s.is_empty());
        let provenance = match (row.provenance.as_deref().unwrap_or("original"), source) {
            ("original" | "", _) => Provenance::Original,
            ("synthetic", Some(source_id)) => Provenance::Synthetic { source_id },
            ("augmented", Some(source_id)) => Provenance::Augmented { source_id },
            (kind @ ("synthetic" | "augmented"), None) => {
                return Err(row_error(manifest_path, row_no, format!("{kind} sample without source_id")))
            }
            (other, _) => return Err(row_error(manifest_path, row_no, format!("unknown provenance {other:?}"))),
        };
        if !ids.insert(id.clone()) {
            return Err(row_error(manifest_path, row_no, format!("duplicate id {id:?}")));
        }
        samples.push(LabelledSample {
            id,
            label,
            provenance,
            image,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: empty dataset", manifest_path.display())));
    }
    LabelledDataset::new(samples)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes images as PNG plus manifest and metadata. Returns the manifest path.
pub fn write_snapshot(dir: &Path, dataset: &LabelledDataset, metadata: &SnapshotMetadata) -> Result<PathBuf> {
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", manifest.display()));
    writer
        .write_record(["path", "label", "id", "provenance", "source_id"])
        .map_err(csv_err)?;
    let mut used = HashSet::new();
    for s in dataset.samples() {
        let mut stem = file_stem_for(&s.id);
        let mut k = 1;
        while !used.insert(stem.clone()) {
            stem = format!("{}_{k}", file_stem_for(&s.id));
            k += 1;
        }
        let rel = format!("{IMAGES_DIR}/{stem}.png");
        s.image.save_png(&dir.join(&rel))?;
        writer
            .write_record([
                rel.as_str(),
                s.label.as_str(),
                s.id.as_str(),
                s.provenance.kind(),
                s.provenance.source_id().unwrap_or(""),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    let meta_path = dir.join(METADATA_FILE);
    let json = serde_json::to_string_pretty(metadata).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(manifest)
}

/// Loads a snapshot written by [`write_snapshot`].
pub fn read_snapshot(dir: &Path) -> Result<(LabelledDataset, SnapshotMetadata)> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingArtifact(manifest));
    }
    let meta_path = dir.join(METADATA_FILE);
    let metadata = match fs::read_to_string(&meta_path) {
        Ok(s) => serde_json::from_str(&s).map_err(|e| Error::json(&meta_path, e))?,
        Err(_) => SnapshotMetadata::default(),
    };
    // An empty snapshot (e.g. no synthetic samples) is legal.
    let has_rows = fs::read_to_string(&manifest)
        .map_err(|e| Error::io(&manifest, e))?
        .lines()
        .skip(1)
        .any(|l| !l.trim().is_empty());
    let dataset = if has_rows { load_manifest(&manifest, dir)? } else { LabelledDataset::default() };
    Ok((dataset, metadata))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;

    fn write_images(dir: &Path, names: &[&str]) {
        for n in names {
            ImageTensor::filled(3, 5, 3, 77.0, crate::imaging::RangeTag::Raw0To255)
                .unwrap()
                .save_png(&dir.join(n))
                .unwrap();
        }
    }

    #[test]
    fn loads_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png", "c.png"]);
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label\na.png,benign\nb.png,malignant\nc.png,benign\n").unwrap();
        let d = load_manifest(&m, dir.path()).unwrap();
        assert_eq!(d.ids(), vec!["a.png", "b.png", "c.png"]);
        assert_eq!(d.class_counts().benign, 2);
        assert!(d.samples().iter().all(|s| s.provenance == Provenance::Original));
    }

    #[test]
    fn errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png"]);
        let m = dir.path().join("m.csv");

        fs::write(&m, "path,label\na.png,benign\na.png,melanoma\n").unwrap();
        let e = load_manifest(&m, dir.path()).unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("melanoma"), "{e}");

        fs::write(&m, "path,label\nmissing.png,benign\n").unwrap();
        let e = load_manifest(&m, dir.path()).unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("missing"), "{e}");

        fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        fs::write(&m, "path,label\nbad.png,benign\n").unwrap();
        let e = load_manifest(&m, dir.path()).unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("decode"), "{e}");

        fs::write(&m, "path,label\n").unwrap();
        let e = load_manifest(&m, dir.path()).unwrap_err().to_string();
        assert!(e.contains("empty dataset"), "{e}");
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = dataset(2, 1).into_samples();
        samples[2].provenance = Provenance::Synthetic { source_id: "b0".into() };
        samples[2].id = "syn/b0".into();
        let d = LabelledDataset::new(samples).unwrap();
        let mut meta = SnapshotMetadata::default();
        meta.seeds.insert("prepare".into(), 5);
        write_snapshot(dir.path(), &d, &meta).unwrap();
        let (back, meta_back) = read_snapshot(dir.path()).unwrap();
        assert_eq!(back, d);
        assert_eq!(meta_back, meta);
    }
}
