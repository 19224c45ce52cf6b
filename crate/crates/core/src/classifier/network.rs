use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::focal::softmax2;
use crate::container::ArrayContainer;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::nn::{Adadelta, AdadeltaConfig, Conv2d, Graph, Init, Linear, ParamStore, Var};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Five blocks of 2, 2, 3, 3, 3 convolutions with 64…512 filters.
    Vgg16Gap,
    /// Three single-convolution blocks with 16, 32, 64 filters.
    SmallCnnGap,
}

impl Backbone {
    /// `(convolutions, filters)` per block.
    pub fn blocks(self) -> &'static [(usize, usize)] {
        match self {
            Backbone::Vgg16Gap => &[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            Backbone::SmallCnnGap => &[(1, 16), (1, 32), (1, 64)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub backbone: Backbone,
    /// Weight container whose `block*` arrays initialize the backbone.
    pub pretrained_weights: Option<PathBuf>,
    pub channels: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            backbone: Backbone::SmallCnnGap,
            pretrained_weights: None,
            channels: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub mean_focal_loss: f64,
    pub learning_rate: f64,
}

/// Backbone + GAP + two-unit head, with optimizer state and training record.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierState {
    pub spec: ClassifierSpec,
    pub input_side: usize,
    pub params: ParamStore,
    /// Convolutions grouped by block.
    blocks: Vec<Vec<Conv2d>>,
    head: Linear,
    pub optimizer: Adadelta,
    pub learning_rate: f64,
    pub best_loss: Option<f64>,
    pub history: Vec<ClassifierEpoch>,
}

/// Nodes of one forward pass.
pub struct ClassifierForward {
    /// ReLU output of the last convolution, before pooling.
    pub last_conv: Var,
    /// Globally pooled feature vector `[n, c]`.
    pub features: Var,
    /// Pre-softmax scores `[n, 2]`.
    pub logits: Var,
}

pub fn build_classifier(spec: &ClassifierSpec, input_side: usize, seed: u64) -> Result<ClassifierState> {
    let blocks_cfg = spec.backbone.blocks();
    let stride = 1usize << blocks_cfg.len();
    if input_side == 0 || !input_side.is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "input side {input_side} is not divisible by {stride} required by {} blocks",
            blocks_cfg.len()
        )));
    }
    if spec.channels != 1 && spec.channels != 3 {
        return Err(Error::Config(format!("classifier channels must be 1 or 3, got {}", spec.channels)));
    }
    let mut rng = seed::rng(seed, "classifier/init");
    let mut params = ParamStore::new();
    let mut blocks = Vec::with_capacity(blocks_cfg.len());
    let mut in_c = spec.channels;
    for (b, &(convs, filters)) in blocks_cfg.iter().enumerate() {
        let mut block = Vec::with_capacity(convs);
        for c in 0..convs {
            let name = format!("block{}_conv{}", b + 1, c + 1);
            block.push(Conv2d::new(&mut params, &name, in_c, filters, 3, 1, 1, true, Init::He, &mut rng));
            in_c = filters;
        }
        blocks.push(block);
    }
    let head = Linear::new(&mut params, "head", in_c, 2, &mut rng);
    if let Some(path) = &spec.pretrained_weights {
        load_backbone(&mut params, path)?;
    }
    Ok(ClassifierState {
        optimizer: Adadelta::new(AdadeltaConfig::default(), &params),
        spec: spec.clone(),
        input_side,
        params,
        blocks,
        head,
        learning_rate: 0.0,
        best_loss: None,
        history: Vec::new(),
    })
}

fn load_backbone(params: &mut ParamStore, path: &Path) -> Result<()> {
    let container = ArrayContainer::load(path)?;
    for i in 0..params.len() {
        let name = params.name(i).to_string();
        if !name.starts_with("block") {
            continue;
        }
        let src = container.get(&name)?;
        if src.shape() != params.get(i).shape() {
            return Err(Error::checkpoint(
                name,
                format!("shape {:?} does not match layer shape {:?}", src.shape(), params.get(i).shape()),
            ));
        }
        params.get_mut(i).data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

impl ClassifierState {
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> ClassifierForward {
        let mut h = x;
        let mut last_conv = x;
        for block in &self.blocks {
            for conv in block {
                h = conv.forward(g, &self.params, h, trainable);
                h = g.relu(h);
                last_conv = h;
            }
            h = g.maxpool2(h);
        }
        let features = g.global_avg_pool(h);
        let logits = self.head.forward(g, &self.params, features, trainable);
        ClassifierForward {
            last_conv,
            features,
            logits,
        }
    }

    /// Recomputes the head from a (possibly tracked) last-conv activation.
    pub fn forward_from_last_conv(&self, g: &mut Graph, last_conv: Var) -> Var {
        let pooled = g.maxpool2(last_conv);
        let features = g.global_avg_pool(pooled);
        self.head.forward(g, &self.params, features, false)
    }

    /// Layer whose activation feeds Grad-CAM.
    pub fn last_conv_name(&self) -> String {
        let blocks = self.spec.backbone.blocks();
        format!("block{}_conv{}", blocks.len(), blocks[blocks.len() - 1].0)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub(crate) fn check_images(&self, images: &[ImageTensor]) -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            if img.height() != self.input_side || img.width() != self.input_side || img.channels() != self.spec.channels {
                return Err(Error::Shape(format!(
                    "image {i} is {}×{}×{}, classifier expects {s}×{s}×{}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    self.spec.channels,
                    s = self.input_side
                )));
            }
            if img.range() != RangeTag::Standardized0To1 {
                return Err(Error::InvalidArgument(format!(
                    "image {i} must be standardized, got {}",
                    img.range().as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "classifier",
            "spec": self.spec,
            "input_side": self.input_side,
            "learning_rate": self.learning_rate,
            "best_loss": self.best_loss,
            "history": self.history,
        });
        let mut c = ArrayContainer::new(meta);
        c.insert_store("", &self.params);
        for i in 0..self.params.len() {
            c.insert(format!("opt/sq_grad/{}", self.params.name(i)), self.optimizer.sq_grad[i].clone());
            c.insert(format!("opt/sq_delta/{}", self.params.name(i)), self.optimizer.sq_delta[i].clone());
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            spec: ClassifierSpec,
            input_side: usize,
            learning_rate: f64,
            best_loss: Option<f64>,
            history: Vec<ClassifierEpoch>,
        }
        let c = ArrayContainer::load(path)?;
        let meta: Meta =
            serde_json::from_value(c.metadata.clone()).map_err(|e| Error::checkpoint("metadata", e.to_string()))?;
        if meta.kind != "classifier" {
            return Err(Error::checkpoint("kind", format!("expected \"classifier\", found {:?}", meta.kind)));
        }
        // Fresh layout; every value is overwritten below, so pretrained weights need not be present.
        let spec = ClassifierSpec {
            pretrained_weights: None,
            ..meta.spec.clone()
        };
        let mut state = build_classifier(&spec, meta.input_side, 0)?;
        state.spec = meta.spec;
        c.load_store("", &mut state.params)?;
        for i in 0..state.params.len() {
            let name = state.params.name(i).to_string();
            for (kind, slot) in [
                ("sq_grad", &mut state.optimizer.sq_grad[i]),
                ("sq_delta", &mut state.optimizer.sq_delta[i]),
            ] {
                let key = format!("opt/{kind}/{name}");
                let src = c.get(&key)?;
                if src.shape() != slot.shape() {
                    return Err(Error::checkpoint(key, "shape mismatch"));
                }
                slot.data_mut().copy_from_slice(src.data());
            }
        }
        state.learning_rate = meta.learning_rate;
        state.best_loss = meta.best_loss;
        state.history = meta.history;
        Ok(state)
    }
}

/// Rows of `[n, 2]` logits for a batch.
pub(crate) fn logits_for(state: &ClassifierState, images: &[ImageTensor]) -> Tensor {
    let mut g = Graph::new();
    let x = g.input(Tensor::stack(&images.iter().map(|i| i.to_nchw()).collect::<Vec<_>>()));
    let f = state.forward(&mut g, x, false);
    g.value(f.logits).clone()
}

const INFERENCE_BATCH: usize = 32;

/// `(p_benign, p_malignant)` for each image.
pub fn predict_proba(state: &ClassifierState, images: &[ImageTensor]) -> Result<Vec<(f64, f64)>> {
    state.check_images(images)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_BATCH) {
        let logits = logits_for(state, chunk);
        out.extend(logits.data().chunks(2).map(|z| softmax2(z[0] as f64, z[1] as f64)));
    }
    Ok(out)
}

/// Malignant iff `p_malignant ≥ threshold`.
pub fn classify(probas: &[(f64, f64)], threshold: f64) -> Vec<Label> {
    probas
        .iter()
        .map(|&(_, pm)| if pm >= threshold { Label::Malignant } else { Label::Benign })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, side: usize) -> Vec<ImageTensor> {
        (0..n)
            .map(|i| {
                let v = (0..side * side * 3).map(|j| ((j * 31 + i * 7) % 97) as f32 / 96.0).collect();
                ImageTensor::new(side, side, 3, v, RangeTag::Standardized0To1).unwrap()
            })
            .collect()
    }

    #[test]
    fn stride_constraint_and_determinism() {
        let spec = ClassifierSpec {
            backbone: Backbone::Vgg16Gap,
            ..Default::default()
        };
        assert!(build_classifier(&spec, 100, 0).is_err());
        let small = ClassifierSpec::default();
        assert_eq!(build_classifier(&small, 64, 3).unwrap(), build_classifier(&small, 64, 3).unwrap());
        assert_ne!(build_classifier(&small, 64, 3).unwrap().params, build_classifier(&small, 64, 4).unwrap().params);
    }

    #[test]
    fn parameter_count_is_resolution_free() {
        let spec = ClassifierSpec::default();
        assert_eq!(
            build_classifier(&spec, 32, 0).unwrap().parameter_count(),
            build_classifier(&spec, 128, 0).unwrap().parameter_count()
        );
    }

    #[test]
    fn probabilities_are_normalized_and_batch_free() {
        let state = build_classifier(&ClassifierSpec::default(), 16, 1).unwrap();
        let mut imgs = images(5, 16);
        imgs.push(imgs[2].clone());
        let all = predict_proba(&state, &imgs).unwrap();
        assert_eq!(all.len(), 6);
        for &(a, b) in &all {
            assert!((a + b - 1.0).abs() < 1e-6);
        }
        assert_eq!(all[2], all[5]);
        for (i, img) in imgs.iter().enumerate() {
            let one = predict_proba(&state, std::slice::from_ref(img)).unwrap()[0];
            assert!((one.1 - all[i].1).abs() < 1e-6);
        }
        assert!(predict_proba(&state, &images(1, 32)).is_err());
    }

    #[test]
    fn classify_threshold() {
        let p = [(0.3, 0.7), (0.5, 0.5), (0.6, 0.4), (0.005, 0.995)];
        assert_eq!(classify(&p, 0.5), vec![Label::Malignant, Label::Malignant, Label::Benign, Label::Malignant]);
        assert_eq!(classify(&p, 0.99), vec![Label::Benign, Label::Benign, Label::Benign, Label::Malignant]);
    }

    #[test]
    fn pretrained_backbone_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let donor = build_classifier(&ClassifierSpec::default(), 16, 9).unwrap();
        donor.save(&path).unwrap();
        let spec = ClassifierSpec {
            pretrained_weights: Some(path.clone()),
            ..Default::default()
        };
        let state = build_classifier(&spec, 16, 1).unwrap();
        let w = state.params.position("block1_conv1.weight").unwrap();
        assert_eq!(state.params.get(w), donor.params.get(w));
        let h = state.params.position("head.weight").unwrap();
        assert_ne!(state.params.get(h), donor.params.get(h));

        let mut c = ArrayContainer::new(serde_json::json!({}));
        c.insert("block1_conv1.weight", Tensor::zeros(&[1, 1, 1, 1]));
        c.save(&path).unwrap();
        let err = build_classifier(&spec, 16, 1).unwrap_err().to_string();
        assert!(err.contains("block1_conv1.weight"), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let state = build_classifier(&ClassifierSpec::default(), 16, 2).unwrap();
        state.save(&path).unwrap();
        assert_eq!(ClassifierState::load(&path).unwrap(), state);
    }
}
