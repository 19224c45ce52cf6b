use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::focal::{focal_loss_logits, FocalLossParams};
use super::network::{ClassifierEpoch, ClassifierState};
use crate::data::LabelledDataset;
use crate::error::{Error, Result};
use crate::nn::{Adadelta, AdadeltaConfig, Graph};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Smallest absolute drop in epoch loss that counts as an improvement.
    pub min_delta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 16,
            plateau_factor: 0.1,
            plateau_patience: 5,
            early_stop_patience: 10,
            max_epochs: 50,
            min_delta: 1e-4,
            rho: 0.95,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("plateau_factor must be in (0, 1), got {}", self.plateau_factor)));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patience values must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 {
            return Err(Error::Config("Adadelta needs rho in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Minimizes batch-mean focal loss with Adadelta. The learning rate drops by
/// `plateau_factor` after `plateau_patience` epochs without improvement and
/// training stops after `early_stop_patience` such epochs. The weights of the
/// lowest-loss epoch are restored at the end.
pub fn train_classifier(
    mut state: ClassifierState,
    train: &LabelledDataset,
    params: &FocalLossParams,
    config: &ClassifierTrainConfig,
) -> Result<ClassifierState> {
    params.validate()?;
    config.validate()?;
    if config.max_epochs == 0 {
        return Ok(state);
    }
    if train.is_empty() {
        return Err(Error::Data("classifier training set is empty".into()));
    }
    let images = train.images();
    state.check_images(&images)?;
    let inputs: Vec<Tensor> = images.iter().map(|i| i.to_nchw()).collect();
    let labels: Vec<i32> = train.samples().iter().map(|s| s.label.index() as i32).collect();

    state.optimizer = Adadelta::new(
        AdadeltaConfig {
            rho: config.rho as f32,
            eps: config.epsilon as f32,
        },
        &state.params,
    );
    state.learning_rate = config.learning_rate;
    state.history.clear();
    state.best_loss = None;
    let mut best_params = state.params.clone();
    let (mut since_best, mut since_plateau) = (0usize, 0usize);

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, &format!("classifier/epoch/{epoch}")));
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let x = Tensor::stack(&batch.iter().map(|&i| inputs[i].clone()).collect::<Vec<_>>());
            let y: Vec<i32> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let xv = g.input(x);
            let f = state.forward(&mut g, xv, true);
            let z: Vec<f64> = g.value(f.logits).data().iter().map(|&v| v as f64).collect();
            let (loss, dz) = focal_loss_logits(&z, &y, params)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "focal",
                    epoch,
                    step: step + 1,
                });
            }
            total += loss * batch.len() as f64;
            let seed_grad = Tensor::from_vec(&[batch.len(), 2], dz.iter().map(|&v| v as f32).collect());
            let grads = g.backward(&[(f.logits, &seed_grad)]);
            let grads = grads.for_store(&g, &state.params);
            state.optimizer.update(&mut state.params, &grads, state.learning_rate as f32);
        }
        let mean = total / inputs.len() as f64;
        state.history.push(ClassifierEpoch {
            epoch,
            mean_focal_loss: mean,
            learning_rate: state.learning_rate,
        });
        log::debug!("classifier epoch {epoch}: focal {mean:.5} lr {}", state.learning_rate);

        if state.best_loss.is_none_or(|b| mean < b - config.min_delta) {
            state.best_loss = Some(mean);
            best_params.copy_from(&state.params);
            since_best = 0;
            since_plateau = 0;
        } else {
            if state.best_loss.is_some_and(|b| mean < b) {
                // Small gain: still the best weights, but not progress.
                state.best_loss = Some(mean);
                best_params.copy_from(&state.params);
            }
            since_best += 1;
            since_plateau += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
            if since_plateau >= config.plateau_patience {
                state.learning_rate *= config.plateau_factor;
                since_plateau = 0;
            }
        }
    }
    state.params.copy_from(&best_params);
    Ok(state)
}

/// Writes `epoch,mean_focal_loss,learning_rate`.
pub fn write_training_log(history: &[ClassifierEpoch], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,mean_focal_loss,learning_rate\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.mean_focal_loss, h.learning_rate));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{build_classifier, ClassifierSpec};
    use crate::data::{Label, LabelledSample, Provenance};
    use crate::imaging::{ImageTensor, RangeTag};

    fn toy(n: usize) -> LabelledDataset {
        // Bright images are malignant.
        LabelledDataset::new(
            (0..n)
                .map(|i| {
                    let label = if i % 3 == 0 { Label::Malignant } else { Label::Benign };
                    let base = if label == Label::Malignant { 0.7 } else { 0.2 };
                    let v = (0..8 * 8 * 3).map(|j| base + ((i * 13 + j * 7) % 10) as f32 / 40.0).collect();
                    LabelledSample {
                        id: format!("s{i}"),
                        label,
                        provenance: Provenance::Original,
                        image: ImageTensor::new(8, 8, 3, v, RangeTag::Standardized0To1).unwrap(),
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let state = build_classifier(&ClassifierSpec::default(), 8, 0).unwrap();
        let config = ClassifierTrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let out = train_classifier(state.clone(), &toy(6), &FocalLossParams::default(), &config).unwrap();
        assert_eq!(out, state);
        assert!(out.history.is_empty());
    }

    #[test]
    fn loss_decreases_and_best_weights_are_kept() {
        let state = build_classifier(&ClassifierSpec::default(), 8, 0).unwrap();
        let config = ClassifierTrainConfig {
            max_epochs: 15,
            learning_rate: 1.0,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let data = toy(30);
        let out = train_classifier(state, &data, &FocalLossParams::default(), &config).unwrap();
        let first = out.history.first().unwrap().mean_focal_loss;
        let best = out.history.iter().map(|h| h.mean_focal_loss).fold(f64::INFINITY, f64::min);
        assert!(out.history.last().unwrap().mean_focal_loss < first);
        assert_eq!(out.best_loss, Some(best));
    }

    #[test]
    fn plateau_reduces_learning_rate() {
        // With a vanishing learning rate nothing improves, so the schedule fires.
        let state = build_classifier(&ClassifierSpec::default(), 8, 0).unwrap();
        let config = ClassifierTrainConfig {
            max_epochs: 30,
            learning_rate: 1e-12,
            plateau_patience: 2,
            early_stop_patience: 5,
            ..Default::default()
        };
        let out = train_classifier(state, &toy(6), &FocalLossParams::default(), &config).unwrap();
        assert_eq!(out.history.len(), 6);
        assert!(out.history.last().unwrap().learning_rate < 1e-12 * 0.5);
    }

    #[test]
    fn rejects_unstandardized_images() {
        let state = build_classifier(&ClassifierSpec::default(), 8, 0).unwrap();
        let raw = toy(3)
            .map_images(|i| i.convert_range(RangeTag::Raw0To255))
            .unwrap();
        assert!(train_classifier(state, &raw, &FocalLossParams::default(), &ClassifierTrainConfig::default()).is_err());
    }
}
