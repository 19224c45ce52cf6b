//! Grad-CAM saliency and GAP feature export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierState;
use crate::data::{Label, LabelledDataset, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::nn::Graph;
use crate::tensor::Tensor;

/// Heat map opacity in overlays.
pub const OVERLAY_ALPHA: f32 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`.
    pub values: Vec<f64>,
    pub class_index: usize,
    pub source_id: String,
    /// Name of the layer the map was taken from.
    pub target_layer: String,
}

/// Grad-CAM from activations `[c, h, w]` and the class-score gradients with
/// respect to them. Channel weights are spatial means of the gradient; the
/// rectified weighted sum is bilinearly upsampled to `out_h × out_w` and
/// divided by its maximum. A map with no positive evidence stays all zero.
pub fn cam_from_activations(acts: &Tensor, grads: &Tensor, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if acts.shape() != grads.shape() || acts.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "activations {:?} and gradients {:?} must both be [c, h, w]",
            acts.shape(),
            grads.shape()
        )));
    }
    let (c, h, w) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    let hw = h * w;
    let mut cam = vec![0.0f64; hw];
    for ch in 0..c {
        let g = &grads.data()[ch * hw..(ch + 1) * hw];
        let weight = g.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let a = &acts.data()[ch * hw..(ch + 1) * hw];
        for (o, &v) in cam.iter_mut().zip(a) {
            *o += weight * v as f64;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let mut up = upsample_bilinear(&cam, h, w, out_h, out_w);
    let max = up.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut up {
            *v /= max;
        }
    }
    Ok(up)
}

/// Half-pixel-centre bilinear resampling of a single-channel map.
fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let axis = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = axis(x, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[y * out_w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Grad-CAM of the pre-softmax logit for `class_index` (0 benign, 1 malignant)
/// over the last convolutional layer, taken before its pooling.
pub fn grad_cam(state: &ClassifierState, image: &ImageTensor, class_index: usize, source_id: &str) -> Result<SaliencyMap> {
    if class_index > 1 {
        return Err(Error::InvalidArgument(format!("class index must be 0 or 1, got {class_index}")));
    }
    state.check_images(std::slice::from_ref(image))?;
    let mut g = Graph::new();
    let x = g.input(image.to_nchw());
    let f = state.forward(&mut g, x, false);
    let acts = g.value(f.last_conv).clone();

    // Re-enter at the last conv so its activation is a tracked leaf.
    let mut g2 = Graph::new();
    let a = g2.input_tracked(acts.clone());
    let logits = state.forward_from_last_conv(&mut g2, a);
    let mut seed = Tensor::zeros(&[1, 2]);
    seed.data_mut()[class_index] = 1.0;
    let grads = g2.backward(&[(logits, &seed)]);
    let (_, c, h, w) = acts.dims4();
    let da = grads.get(&g2, a).unwrap_or_else(|| Tensor::zeros(&[1, c, h, w]));

    let values = cam_from_activations(&acts.reshape(&[c, h, w]), &da.reshape(&[c, h, w]), image.height(), image.width())?;
    Ok(SaliencyMap {
        height: image.height(),
        width: image.width(),
        values,
        class_index,
        source_id: source_id.to_string(),
        target_layer: state.last_conv_name(),
    })
}

/// Jet-style colour ramp for `t ∈ [0, 1]`.
fn colormap(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let ramp = |centre: f64| (1.5 - (4.0 * t - centre).abs()).clamp(0.0, 1.0) as f32;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

impl SaliencyMap {
    pub fn heatmap(&self) -> ImageTensor {
        let values = self.values.iter().flat_map(|&v| colormap(v)).collect();
        ImageTensor::new(self.height, self.width, 3, values, RangeTag::Standardized0To1).expect("sizes match")
    }

    /// Heat map blended over `image` at [`OVERLAY_ALPHA`].
    pub fn overlay(&self, image: &ImageTensor) -> Result<ImageTensor> {
        if image.height() != self.height || image.width() != self.width {
            return Err(Error::Shape("overlay image size differs from saliency map".into()));
        }
        let base = image.convert_range(RangeTag::Raw0To255)?;
        let heat = self.heatmap();
        let mut values = Vec::with_capacity(self.height * self.width * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                for ch in 0..3 {
                    let b = base.get(y, x, ch.min(base.channels() - 1)) / 255.0;
                    values.push((1.0 - OVERLAY_ALPHA) * b + OVERLAY_ALPHA * heat.get(y, x, ch));
                }
            }
        }
        ImageTensor::new(self.height, self.width, 3, values, RangeTag::Standardized0To1)
    }

    /// One line per image row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `{stem}_heatmap.png`, `{stem}_overlay.png` and `{stem}_values.csv`.
    pub fn write(&self, image: &ImageTensor, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.heatmap().save_png(&dir.join(format!("{stem}_heatmap.png")))?;
        self.overlay(image)?.save_png(&dir.join(format!("{stem}_overlay.png")))?;
        let csv = dir.join(format!("{stem}_values.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub provenance: Vec<Provenance>,
    pub rows: Vec<Vec<f32>>,
}

/// GAP-layer activations, one row per sample. Samples run one at a time so a
/// row never depends on which other samples share its batch.
pub fn export_features(state: &ClassifierState, dataset: &LabelledDataset) -> Result<FeatureMatrix> {
    let images = dataset.images();
    state.check_images(&images)?;
    let mut rows = Vec::with_capacity(images.len());
    for (img, s) in images.iter().zip(dataset.samples()) {
        let mut g = Graph::new();
        let x = g.input(img.to_nchw());
        let f = state.forward(&mut g, x, false);
        let row = g.value(f.features).data().to_vec();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("non-finite feature for sample {}", s.id)));
        }
        rows.push(row);
    }
    Ok(FeatureMatrix {
        ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
        labels: dataset.samples().iter().map(|s| s.label).collect(),
        provenance: dataset.samples().iter().map(|s| s.provenance.clone()).collect(),
        rows,
    })
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header `id,label,provenance,f_0,…,f_{n-1}`.
    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut out = String::from("id,label,provenance");
        for i in 0..dim {
            let _ = write!(out, ",f_{i}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{},{}", self.ids[i], self.labels[i], self.provenance[i].kind());
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
