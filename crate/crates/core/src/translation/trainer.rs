//! Alternating adversarial training of the two generator/discriminator pairs.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{
    adversarial_loss, cycle_consistency_grad, cycle_consistency_loss, discriminator_loss, generator_loss,
    total_objective, GanLossForm,
};
use super::networks::{DiscriminatorSpec, GeneratorSpec, PatchDiscriminator, UNetGenerator};
use crate::data::LabelledDataset;
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::nn::{Adam, AdamConfig, Graph};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleGanConfig {
    pub lambda_cyc: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gan_loss_form: GanLossForm,
    pub seed: u64,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            epochs: 200,
            gan_loss_form: GanLossForm::Log,
            seed: 0,
        }
    }
}

impl CycleGanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc >= 0.0 && self.lambda_cyc.is_finite()) {
            return Err(Error::Config(format!("lambda_cyc must be ≥ 0, got {}", self.lambda_cyc)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate as f32,
            beta1: self.beta1 as f32,
            beta2: self.beta2 as f32,
            ..AdamConfig::default()
        }
    }
}

/// Mean loss terms over one epoch. `adv_bm` and `adv_mb` are the adversarial
/// objective values measured during the discriminator update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub adv_bm: f64,
    pub adv_mb: f64,
    pub cycle: f64,
    pub total: f64,
}

/// Everything needed to continue training or to translate.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleGanState {
    pub config: CycleGanConfig,
    pub image_side: usize,
    /// Benign → malignant.
    pub g_b: UNetGenerator,
    /// Malignant → benign.
    pub g_m: UNetGenerator,
    /// Judges malignant images.
    pub d_m: PatchDiscriminator,
    /// Judges benign images.
    pub d_b: PatchDiscriminator,
    pub opt_g_b: Adam,
    pub opt_g_m: Adam,
    pub opt_d_m: Adam,
    pub opt_d_b: Adam,
    pub epoch: usize,
    pub history: Vec<EpochLosses>,
}

impl CycleGanState {
    pub fn new(gen: &GeneratorSpec, disc: &DiscriminatorSpec, config: &CycleGanConfig, image_side: usize) -> Result<Self> {
        config.validate()?;
        gen.validate(image_side)?;
        disc.validate(image_side)?;
        if gen.channels != disc.channels {
            return Err(Error::Config(format!(
                "generator has {} channels but discriminator expects {}",
                gen.channels, disc.channels
            )));
        }
        let mut rng = seed::rng(config.seed, "cyclegan/init");
        let g_b = UNetGenerator::new(gen, &mut rng);
        let g_m = UNetGenerator::new(gen, &mut rng);
        let d_m = PatchDiscriminator::new(disc, &mut rng);
        let d_b = PatchDiscriminator::new(disc, &mut rng);
        let adam = config.adam();
        Ok(Self {
            opt_g_b: Adam::new(adam, &g_b.params),
            opt_g_m: Adam::new(adam, &g_m.params),
            opt_d_m: Adam::new(adam, &d_m.params),
            opt_d_b: Adam::new(adam, &d_b.params),
            config: config.clone(),
            image_side,
            g_b,
            g_m,
            d_m,
            d_b,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn generator_spec(&self) -> &GeneratorSpec {
        &self.g_b.spec
    }

    pub fn discriminator_spec(&self) -> &DiscriminatorSpec {
        &self.d_m.spec
    }
}

/// Which halves of a step apply their update. Both are on in normal training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOptions {
    pub update_discriminators: bool,
    pub update_generators: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            update_discriminators: true,
            update_generators: true,
        }
    }
}

/// Loss terms of a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub adv_bm: f64,
    pub adv_mb: f64,
    pub cycle: f64,
    pub gen_bm: f64,
    pub gen_mb: f64,
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn to_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, v.iter().map(|&x| x as f32).collect())
}

fn scaled(shape: &[usize], v: &[f64], k: f64) -> Tensor {
    Tensor::from_vec(shape, v.iter().map(|&x| (x * k) as f32).collect())
}

/// One discriminator update followed by one generator update on a batch.
///
/// `benign` and `malignant` are NCHW batches in `[−1, 1]`.
pub fn train_step(state: &mut CycleGanState, benign: &Tensor, malignant: &Tensor, options: StepOptions) -> Result<StepLosses> {
    let form = state.config.gan_loss_form;
    let lambda = state.config.lambda_cyc;

    let mut g = Graph::new();
    let xb = g.input(benign.clone());
    let xm = g.input(malignant.clone());
    let fake_m = state.g_b.forward(&mut g, xb, true);
    let rec_b = state.g_m.forward(&mut g, fake_m, true);
    let fake_b = state.g_m.forward(&mut g, xm, true);
    let rec_m = state.g_b.forward(&mut g, fake_b, true);

    // Discriminators see detached fakes.
    let (adv_bm, adv_mb) = {
        let mut gd = Graph::new();
        let real_m = gd.input(malignant.clone());
        let real_b = gd.input(benign.clone());
        let fm = gd.input(g.value(fake_m).clone());
        let fb = gd.input(g.value(fake_b).clone());
        let s_rm = state.d_m.forward(&mut gd, real_m, true);
        let s_fm = state.d_m.forward(&mut gd, fm, true);
        let s_rb = state.d_b.forward(&mut gd, real_b, true);
        let s_fb = state.d_b.forward(&mut gd, fb, true);
        let (rm, fm_s, rb, fb_s) = (
            to_f64(gd.value(s_rm)),
            to_f64(gd.value(s_fm)),
            to_f64(gd.value(s_rb)),
            to_f64(gd.value(s_fb)),
        );
        let adv_bm = adversarial_loss(&rm, &fm_s)?;
        let adv_mb = adversarial_loss(&rb, &fb_s)?;
        if options.update_discriminators {
            let (_, g_rm, g_fm) = discriminator_loss(&rm, &fm_s, form)?;
            let (_, g_rb, g_fb) = discriminator_loss(&rb, &fb_s, form)?;
            let shape = gd.value(s_rm).shape().to_vec();
            let seeds = [
                to_tensor(&shape, &g_rm),
                to_tensor(&shape, &g_fm),
                to_tensor(&shape, &g_rb),
                to_tensor(&shape, &g_fb),
            ];
            let grads = gd.backward(&[(s_rm, &seeds[0]), (s_fm, &seeds[1]), (s_rb, &seeds[2]), (s_fb, &seeds[3])]);
            let gm = grads.for_store(&gd, &state.d_m.params);
            let gb = grads.for_store(&gd, &state.d_b.params);
            state.opt_d_m.update(&mut state.d_m.params, &gm);
            state.opt_d_b.update(&mut state.d_b.params, &gb);
        }
        (adv_bm, adv_mb)
    };

    // Generators against the (updated, frozen) discriminators.
    let s_fm = state.d_m.forward(&mut g, fake_m, false);
    let s_fb = state.d_b.forward(&mut g, fake_b, false);
    let (gen_bm, d_fm) = generator_loss(&to_f64(g.value(s_fm)), form)?;
    let (gen_mb, d_fb) = generator_loss(&to_f64(g.value(s_fb)), form)?;
    let (ob, rb, om, rm) = (to_f64(benign), to_f64(g.value(rec_b)), to_f64(malignant), to_f64(g.value(rec_m)));
    let cycle = cycle_consistency_loss(&ob, &rb, &om, &rm)?;
    if options.update_generators {
        let (d_rb, d_rm) = cycle_consistency_grad(&ob, &rb, &om, &rm)?;
        let score_shape = g.value(s_fm).shape().to_vec();
        let img_shape = benign.shape().to_vec();
        let seeds = [
            to_tensor(&score_shape, &d_fm),
            to_tensor(&score_shape, &d_fb),
            scaled(&img_shape, &d_rb, lambda),
            scaled(&img_shape, &d_rm, lambda),
        ];
        let grads = g.backward(&[(s_fm, &seeds[0]), (s_fb, &seeds[1]), (rec_b, &seeds[2]), (rec_m, &seeds[3])]);
        let gb = grads.for_store(&g, &state.g_b.params);
        let gm = grads.for_store(&g, &state.g_m.params);
        state.opt_g_b.update(&mut state.g_b.params, &gb);
        state.opt_g_m.update(&mut state.g_m.params, &gm);
    }
    Ok(StepLosses {
        adv_bm,
        adv_mb,
        cycle,
        gen_bm,
        gen_mb,
    })
}

fn check_domain(images: &[ImageTensor], side: usize, channels: usize, what: &str) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Data(format!("{what} training set is empty")));
    }
    for (i, img) in images.iter().enumerate() {
        if img.height() != side || img.width() != side || img.channels() != channels {
            return Err(Error::Shape(format!(
                "{what} image {i} is {}×{}×{}, expected {side}×{side}×{channels}",
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        if img.range() != RangeTag::TanhM1To1 {
            return Err(Error::InvalidArgument(format!(
                "{what} image {i} must be in the tanh range, got {}",
                img.range().as_str()
            )));
        }
    }
    Ok(())
}

fn stack(images: &[ImageTensor], order: &[usize]) -> Tensor {
    let items: Vec<Tensor> = order.iter().map(|&i| images[i].to_nchw()).collect();
    Tensor::stack(&items)
}

/// Continues training until `state.epoch == until_epoch`, calling `on_epoch`
/// after each finished epoch (e.g. to write checkpoints).
///
/// Pairing and order within an epoch depend only on `(seed, epoch)`, so a run
/// resumed from a checkpoint follows the uninterrupted one exactly.
pub fn train_until(
    state: &mut CycleGanState,
    benign: &[ImageTensor],
    malignant: &[ImageTensor],
    until_epoch: usize,
    options: StepOptions,
    mut on_epoch: impl FnMut(&CycleGanState) -> Result<()>,
) -> Result<()> {
    let channels = state.generator_spec().channels;
    check_domain(benign, state.image_side, channels, "benign")?;
    check_domain(malignant, state.image_side, channels, "malignant")?;
    if benign.len() != malignant.len() {
        return Err(Error::Data(format!(
            "translation domains must be balanced, got {} benign vs {} malignant",
            benign.len(),
            malignant.len()
        )));
    }
    let batch = state.config.batch_size.min(benign.len());
    while state.epoch < until_epoch {
        let epoch = state.epoch + 1;
        let mut rng = seed::rng(state.config.seed, &format!("cyclegan/epoch/{epoch}"));
        let mut ob: Vec<usize> = (0..benign.len()).collect();
        let mut om: Vec<usize> = (0..malignant.len()).collect();
        ob.shuffle(&mut rng);
        om.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut steps = 0usize;
        for (step, (cb, cm)) in ob.chunks(batch).zip(om.chunks(batch)).enumerate() {
            let l = train_step(state, &stack(benign, cb), &stack(malignant, cm), options)?;
            for (what, v) in [("adv_BM", l.adv_bm), ("adv_MB", l.adv_mb), ("cycle", l.cycle), ("generator", l.gen_bm + l.gen_mb)] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what,
                        epoch,
                        step: step + 1,
                    });
                }
            }
            sums[0] += l.adv_bm;
            sums[1] += l.adv_mb;
            sums[2] += l.cycle;
            steps += 1;
        }
        let n = steps as f64;
        let (adv_bm, adv_mb, cycle) = (sums[0] / n, sums[1] / n, sums[2] / n);
        state.history.push(EpochLosses {
            epoch,
            adv_bm,
            adv_mb,
            cycle,
            total: total_objective(adv_bm, adv_mb, cycle, state.config.lambda_cyc),
        });
        state.epoch = epoch;
        log::debug!("cyclegan epoch {epoch}: adv_BM {adv_bm:.4} adv_MB {adv_mb:.4} cycle {cycle:.4}");
        on_epoch(state)?;
    }
    Ok(())
}

fn tanh_images(ds: &LabelledDataset) -> Result<Vec<ImageTensor>> {
    ds.samples().iter().map(|s| s.image.convert_range(RangeTag::TanhM1To1)).collect()
}

/// Trains from scratch for `config.epochs` epochs on two balanced domains.
///
/// Images may be standardized (`[0,1]`) or already in `[−1,1]`; the former are
/// mapped with `t = 2z − 1`.
pub fn train_cyclegan(
    benign: &LabelledDataset,
    malignant: &LabelledDataset,
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    config: &CycleGanConfig,
) -> Result<CycleGanState> {
    let b = tanh_images(benign)?;
    let m = tanh_images(malignant)?;
    let side = b.first().map(|i| i.height()).unwrap_or(0);
    let mut state = CycleGanState::new(gen_spec, disc_spec, config, side)?;
    train_until(&mut state, &b, &m, config.epochs, StepOptions::default(), |_| Ok(()))?;
    Ok(state)
}

/// Writes the loss history as `epoch,adv_BM,adv_MB,cycle,total`.
pub fn write_history_csv(history: &[EpochLosses], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,adv_BM,adv_MB,cycle,total\n");
    for h in history {
        out.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.adv_bm, h.adv_mb, h.cycle, h.total));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn tiny() -> (GeneratorSpec, DiscriminatorSpec, CycleGanConfig) {
        (
            GeneratorSpec {
                depth: 2,
                base_filters: 4,
                ..Default::default()
            },
            DiscriminatorSpec {
                n_layers: 2,
                base_filters: 4,
                ..Default::default()
            },
            CycleGanConfig {
                epochs: 2,
                seed: 11,
                ..Default::default()
            },
        )
    }

    fn images(n: usize, side: usize, offset: f32) -> Vec<ImageTensor> {
        (0..n)
            .map(|i| {
                let values = (0..side * side * 3)
                    .map(|j| (((j * 7 + i * 13) % 17) as f32 / 8.5 - 1.0 + offset).clamp(-1.0, 1.0))
                    .collect();
                ImageTensor::new(side, side, 3, values, RangeTag::TanhM1To1).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_initialization() {
        let (g, d, mut c) = tiny();
        c.epochs = 0;
        let mut state = CycleGanState::new(&g, &d, &c, 16).unwrap();
        let init = state.clone();
        train_until(&mut state, &images(2, 16, 0.0), &images(2, 16, 0.3), 0, StepOptions::default(), |_| Ok(())).unwrap();
        assert_eq!(state, init);
        assert!(state.history.is_empty());
    }

    #[test]
    fn history_tracks_epochs_and_is_deterministic() {
        let (g, d, c) = tiny();
        let run = || {
            let mut s = CycleGanState::new(&g, &d, &c, 16).unwrap();
            train_until(&mut s, &images(3, 16, 0.0), &images(3, 16, 0.3), 2, StepOptions::default(), |_| Ok(())).unwrap();
            s
        };
        let a = run();
        assert_eq!(a.epoch, 2);
        assert_eq!(a.history.len(), 2);
        assert!(a.history.iter().all(|h| h.cycle.is_finite() && h.adv_bm < 0.0));
        assert_eq!(a, run());
    }

    #[test]
    fn updates_are_isolated() {
        let (g, d, c) = tiny();
        let b = Tensor::stack(&[images(1, 16, 0.0)[0].to_nchw()]);
        let m = Tensor::stack(&[images(1, 16, 0.4)[0].to_nchw()]);
        let snapshot = |s: &CycleGanState| -> Vec<ParamStore> {
            vec![s.g_b.params.clone(), s.g_m.params.clone(), s.d_m.params.clone(), s.d_b.params.clone()]
        };

        let mut s = CycleGanState::new(&g, &d, &c, 16).unwrap();
        let before = snapshot(&s);
        let only_d = StepOptions {
            update_discriminators: true,
            update_generators: false,
        };
        train_step(&mut s, &b, &m, only_d).unwrap();
        let after = snapshot(&s);
        assert_eq!(before[0], after[0]);
        assert_eq!(before[1], after[1]);
        assert_ne!(before[2], after[2]);
        assert_ne!(before[3], after[3]);

        let mut s = CycleGanState::new(&g, &d, &c, 16).unwrap();
        let only_g = StepOptions {
            update_discriminators: false,
            update_generators: true,
        };
        train_step(&mut s, &b, &m, only_g).unwrap();
        let after = snapshot(&s);
        assert_ne!(before[0], after[0]);
        assert_ne!(before[1], after[1]);
        assert_eq!(before[2], after[2]);
        assert_eq!(before[3], after[3]);
    }

    #[test]
    fn rejects_unbalanced_or_wrong_range() {
        let (g, d, c) = tiny();
        let mut s = CycleGanState::new(&g, &d, &c, 16).unwrap();
        let err = train_until(&mut s, &images(2, 16, 0.0), &images(3, 16, 0.0), 1, StepOptions::default(), |_| Ok(()));
        assert!(err.is_err());
        let raw = vec![ImageTensor::filled(16, 16, 3, 10.0, RangeTag::Raw0To255).unwrap()];
        assert!(train_until(&mut s, &raw, &raw, 1, StepOptions::default(), |_| Ok(())).is_err());
        assert!(CycleGanState::new(&g, &d, &c, 18).is_err());
    }
}
