//! Confusion counts, sensitivity, ROC/AUC and comparison tables.
//!
//! Malignant is the positive class throughout. Accuracy is deliberately absent:
//! on imbalanced data it rewards predicting the majority class.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_proba, ClassifierState};
use crate::data::{Label, LabelledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionCounts> {
    if labels.len() != predictions.len() {
        return Err(Error::Evaluation(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (Label::Malignant, Label::Malignant) => c.tp += 1,
            (Label::Malignant, Label::Benign) => c.fn_ += 1,
            (Label::Benign, Label::Malignant) => c.fp += 1,
            (Label::Benign, Label::Benign) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fn)`; undefined without positives.
pub fn sensitivity(counts: &ConfusionCounts) -> Result<f64> {
    let pos = counts.tp + counts.fn_;
    if pos == 0 {
        return Err(Error::Evaluation("sensitivity is undefined with no positive samples".into()));
    }
    Ok(counts.tp as f64 / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called malignant.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Empirical ROC. The first point uses a threshold one above the top score
/// and sits at (0,0); every distinct score then adds one point, so a block of
/// tied scores becomes a single diagonal segment. The lowest score already
/// calls everything positive, which puts the last point at exactly (1,1).
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Malignant).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("ROC needs at least one positive and one negative sample".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: scores[order[0]] + 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match labels[order[i]] {
                Label::Malignant => tp += 1,
                Label::Benign => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the (fpr, tpr) polyline.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub p_malignant: f64,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub sensitivity: f64,
    pub auc: f64,
    pub threshold: f64,
    pub roc: RocCurve,
    pub per_sample_scores: Vec<SampleScore>,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Builds every metric from per-sample malignant probabilities.
    pub fn from_scores(scores: Vec<SampleScore>, threshold: f64, config_fingerprint: impl Into<String>) -> Result<Self> {
        let labels: Vec<Label> = scores.iter().map(|s| s.label).collect();
        let p: Vec<f64> = scores.iter().map(|s| s.p_malignant).collect();
        let preds: Vec<Label> = p
            .iter()
            .map(|&v| if v >= threshold { Label::Malignant } else { Label::Benign })
            .collect();
        let counts = confusion(&labels, &preds)?;
        let roc = roc_curve(&p, &labels)?;
        Ok(Self {
            counts,
            sensitivity: sensitivity(&counts)?,
            auc: auc(&roc),
            threshold,
            roc,
            per_sample_scores: scores,
            config_fingerprint: config_fingerprint.into(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Writes `fpr,tpr,threshold`.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.roc.points {
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Scores a test set with a trained classifier.
pub fn evaluate(
    state: &ClassifierState,
    test: &LabelledDataset,
    threshold: f64,
    config_fingerprint: &str,
) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must be in [0, 1], got {threshold}")));
    }
    let probas = predict_proba(state, &test.images())?;
    let scores = test
        .samples()
        .iter()
        .zip(&probas)
        .map(|(s, &(_, p))| SampleScore {
            id: s.id.clone(),
            p_malignant: p,
            label: s.label,
        })
        .collect();
    EvalReport::from_scores(scores, threshold, config_fingerprint)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub auc_pct: f64,
    pub sensitivity_pct: f64,
    /// Not every published result reports false negatives.
    pub fn_count: Option<u64>,
    /// Published numbers rather than a run from this tool.
    pub reference: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// `(method, curve)` for overlay plots.
    pub roc: Vec<(String, RocCurve)>,
}

/// Published ISIC-2016 test results, kept for side-by-side display. These
/// come from full-scale training and are not expected to be reproduced.
pub fn reference_rows() -> Vec<ComparisonRow> {
    let row = |method: &str, auc: f64, sens: f64, fn_count: Option<u64>| ComparisonRow {
        method: method.into(),
        auc_pct: auc,
        sensitivity_pct: sens,
        fn_count,
        reference: true,
    };
    vec![
        row("Gutman et al.", 80.40, 50.70, None),
        row("Yu et al. (without segmentation)", 78.20, 42.70, None),
        row("Yu et al. (with segmentation)", 78.30, 54.70, None),
        row("VGG-GAP", 79.08, 84.46, Some(55)),
        row("VGG-GAP + Augment-5x", 78.81, 85.34, Some(51)),
        row("VGG-GAP + Augment-10x", 79.56, 86.09, Some(47)),
        row("MelaNet", 81.18, 91.76, Some(22)),
    ]
}

/// One row per named report, in the given order.
pub fn compare_report(reports: &[(String, EvalReport)]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Evaluation("nothing to compare".into()));
    }
    let rows = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            method: name.clone(),
            auc_pct: r.auc * 100.0,
            sensitivity_pct: r.sensitivity * 100.0,
            fn_count: Some(r.counts.fn_),
            reference: false,
        })
        .collect();
    let roc = reports.iter().map(|(name, r)| (name.clone(), r.roc.clone())).collect();
    Ok(ComparisonTable { rows, roc })
}

impl ComparisonTable {
    pub fn with_reference_rows(mut self) -> Self {
        self.rows.extend(reference_rows());
        self
    }

    /// `method,auc_pct,sensitivity_pct,fn,reference` with two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,auc_pct,sensitivity_pct,fn,reference\n");
        for r in &self.rows {
            let method = if r.method.contains([',', '"']) {
                format!("\"{}\"", r.method.replace('"', "\"\""))
            } else {
                r.method.clone()
            };
            let _ = writeln!(
                out,
                "{method},{:.2},{:.2},{},{}",
                r.auc_pct,
                r.sensitivity_pct,
                r.fn_count.map(|v| v.to_string()).unwrap_or_default(),
                r.reference
            );
        }
        out
    }

    /// `method,fpr,tpr,threshold` for every curve.
    pub fn roc_overlay_csv(&self) -> String {
        let mut out = String::from("method,fpr,tpr,threshold\n");
        for (name, curve) in &self.roc {
            for p in &curve.points {
                let _ = writeln!(out, "{name},{},{},{}", p.fpr, p.tpr, p.threshold);
            }
        }
        out
    }

    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len() + 2 * r.reference as usize).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>8}  {:>16}  {:>4}\n", "Method", "AUC (%)", "Sensitivity (%)", "FN");
        let _ = writeln!(out, "{}", "-".repeat(width + 34));
        for r in &self.rows {
            let name = if r.reference { format!("{} *", r.method) } else { r.method.clone() };
            let fn_text = r.fn_count.map(|v| v.to_string()).unwrap_or_else(|| "--".into());
            let _ = writeln!(out, "{name:<width$}  {:>8.2}  {:>16.2}  {fn_text:>4}", r.auc_pct, r.sensitivity_pct);
        }
        if self.rows.iter().any(|r| r.reference) {
            out.push_str("* published ISIC-2016 result, shown for reference\n");
        }
        out
    }
}
