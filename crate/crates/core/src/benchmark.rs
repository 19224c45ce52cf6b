//! Deterministic two-class toy lesion images.
//!
//! Both classes draw a pigmented blob on a pale background. The malignant
//! recipe is the benign recipe moved along two axes by `domain_gap`: lesion
//! hue rotates away from brown and the outline gains high-frequency lobes.
//! At `domain_gap = 0` the two classes are identically distributed.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{hsv_to_rgb, rgb_to_hsv, write_snapshot, Label, LabelledDataset, LabelledSample, Provenance, SnapshotMetadata};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::seed;

/// Lesion hue (degrees) at `domain_gap = 0`.
const BASE_HUE: f32 = 30.0;
/// Hue rotation at `domain_gap = 1`.
const HUE_SHIFT: f32 = -60.0;
/// Per-sample hue jitter half-width; overlaps the classes at moderate gaps.
const HUE_JITTER: f32 = 22.0;
const BASE_IRREGULARITY: f32 = 0.04;
const GAP_IRREGULARITY: f32 = 0.22;
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub image_side: usize,
    pub n_majority: usize,
    pub n_minority: usize,
    pub domain_gap: f64,
    pub seed: u64,
    pub channels: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            n_majority: 400,
            n_minority: 100,
            domain_gap: 0.5,
            seed: 0,
            channels: 3,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_minority == 0 || self.n_majority < self.n_minority {
            return Err(Error::Config(format!(
                "need n_majority ≥ n_minority ≥ 1, got {} and {}",
                self.n_majority, self.n_minority
            )));
        }
        if !(0.0..=1.0).contains(&self.domain_gap) {
            return Err(Error::Config(format!("domain_gap must be in [0, 1], got {}", self.domain_gap)));
        }
        if self.image_side < 8 {
            return Err(Error::Config(format!("image_side must be ≥ 8, got {}", self.image_side)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }
}

fn render<R: Rng>(side: usize, channels: usize, label: Label, gap: f32, rng: &mut R) -> ImageTensor {
    let shift = if label == Label::Malignant { gap } else { 0.0 };
    let s = side as f32;
    let hue = BASE_HUE + HUE_SHIFT * shift + rng.random_range(-HUE_JITTER..HUE_JITTER);
    let sat = rng.random_range(0.45..0.75f32);
    let val = rng.random_range(0.35..0.6f32);
    let bg_val = rng.random_range(0.8..0.92f32);
    let bg_sat = rng.random_range(0.08..0.16f32);

    let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let a = rng.random_range(0.18..0.3f32) * s;
    let b = a * rng.random_range(0.65..1.0f32);
    let tilt = rng.random_range(0.0..PI);

    let irregularity = BASE_IRREGULARITY + GAP_IRREGULARITY * shift;
    let lobes: Vec<(f32, f32, f32)> = (3..8)
        .map(|k| (k as f32, rng.random_range(0.3..1.0f32) / (k as f32 - 2.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let norm: f32 = lobes.iter().map(|l| l.1).sum();
    // Slow interior shading so the lesion is not flat.
    let (tx, ty, tp) = (rng.random_range(0.5..2.0f32), rng.random_range(0.5..2.0f32), rng.random_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0f32, 0.02).unwrap();

    let mut values = Vec::with_capacity(side * side * channels);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let phi = dy.atan2(dx);
            let (c, sn) = ((phi - tilt).cos(), (phi - tilt).sin());
            let ellipse = a * b / ((b * c).powi(2) + (a * sn).powi(2)).sqrt();
            let wobble: f32 = lobes.iter().map(|&(k, amp, ph)| amp * (k * phi + ph).cos()).sum::<f32>() / norm;
            let radius = ellipse * (1.0 + irregularity * wobble);
            let dist = (dx * dx + dy * dy).sqrt();
            // Soft edge over ~1.5 px.
            let inside = ((radius - dist) / 1.5 + 0.5).clamp(0.0, 1.0);
            let shade = 1.0 + 0.12 * ((tx * x as f32 / s + ty * y as f32 / s) * PI + tp).sin();
            let (lr, lg, lb) = hsv_to_rgb(hue, sat, (val * shade).clamp(0.0, 1.0));
            let (br, bgc, bb) = hsv_to_rgb(BASE_HUE, bg_sat, bg_val);
            let mix = |l: f32, bgv: f32| l * inside + bgv * (1.0 - inside);
            let rgb = [mix(lr, br), mix(lg, bgc), mix(lb, bb)];
            let n = noise.sample(rng);
            let quant = |v: f32| ((v + n).clamp(0.0, 1.0) * 255.0).round();
            if channels == 1 {
                values.push(quant(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]));
            } else {
                values.extend(rgb.iter().map(|&v| quant(v)));
            }
        }
    }
    ImageTensor::new(side, side, channels, values, RangeTag::Raw0To255).expect("rendered image is valid")
}

fn class_samples(config: &BenchmarkConfig, label: Label, n: usize) -> Vec<LabelledSample> {
    let prefix = if label == Label::Benign { "b" } else { "m" };
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(config.seed, &format!("benchmark/{prefix}/{i}"));
            LabelledSample {
                id: format!("{prefix}{i:05}"),
                label,
                provenance: Provenance::Original,
                image: render(config.image_side, config.channels, label, config.domain_gap as f32, &mut rng),
            }
        })
        .collect()
}

/// Generates raw-range images and splits each class 70/30 into train and test.
pub fn generate(config: &BenchmarkConfig) -> Result<(LabelledDataset, LabelledDataset)> {
    config.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, n) in [(Label::Benign, config.n_majority), (Label::Malignant, config.n_minority)] {
        let samples = class_samples(config, label, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(config.seed, &format!("benchmark/split/{}", label.as_str())));
        let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
        let mut in_train = vec![false; n];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        for (i, s) in samples.into_iter().enumerate() {
            if in_train[i] {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    Ok((LabelledDataset::new(train)?, LabelledDataset::new(test)?))
}

/// Writes `train/` and `test/` snapshot directories under `dir`.
pub fn write_benchmark(dir: &Path, config: &BenchmarkConfig) -> Result<(LabelledDataset, LabelledDataset)> {
    let (train, test) = generate(config)?;
    let mut meta = SnapshotMetadata::default();
    meta.seeds.insert("benchmark".into(), config.seed);
    meta.image_side = Some(config.image_side);
    meta.notes.insert("domain_gap".into(), config.domain_gap.to_string());
    write_snapshot(&dir.join("train"), &train, &meta)?;
    write_snapshot(&dir.join("test"), &test, &meta)?;
    Ok((train, test))
}

/// Pixels below this saturation count as background for [`mean_hue`].
pub const PIGMENT_SATURATION: f32 = 0.3;

/// Saturation-weighted circular mean hue of the pigmented pixels of an RGB
/// image, in degrees `[0, 360)`. Falls back to all pixels when none is
/// saturated enough.
pub fn mean_hue(image: &ImageTensor) -> Result<f64> {
    if image.channels() != 3 {
        return Err(Error::InvalidArgument("hue needs a 3-channel image".into()));
    }
    let unit: fn(f32) -> f32 = match image.range() {
        RangeTag::Raw0To255 => |v| v / 255.0,
        RangeTag::Standardized0To1 => |v| v,
        RangeTag::TanhM1To1 => |v| (v + 1.0) / 2.0,
    };
    let hsv: Vec<(f32, f32)> = image
        .values()
        .chunks_exact(3)
        .map(|px| {
            let (h, s, _) = rgb_to_hsv(unit(px[0]), unit(px[1]), unit(px[2]));
            (h, s)
        })
        .collect();
    let threshold = if hsv.iter().any(|p| p.1 >= PIGMENT_SATURATION) { PIGMENT_SATURATION } else { 0.0 };
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for &(h, s) in hsv.iter().filter(|p| p.1 >= threshold) {
        let rad = (h as f64).to_radians();
        sx += s as f64 * rad.cos();
        sy += s as f64 * rad.sin();
    }
    Ok(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Circular mean of per-image [`mean_hue`] values, in degrees.
pub fn mean_hue_of(images: &[ImageTensor]) -> Result<f64> {
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for img in images {
        let rad = mean_hue(img)?.to_radians();
        sx += rad.cos();
        sy += rad.sin();
    }
    Ok(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Signed shortest angular difference `to − from`, in degrees `(−180, 180]`.
pub fn hue_difference(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(gap: f64, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            image_side: 24,
            n_majority: 40,
            n_minority: 10,
            domain_gap: gap,
            seed,
            channels: 3,
        }
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let (train, test) = generate(&small(0.5, 1)).unwrap();
        assert_eq!(train.class_counts().benign, 28);
        assert_eq!(train.class_counts().malignant, 7);
        assert_eq!(test.class_counts().benign, 12);
        assert_eq!(test.class_counts().malignant, 3);
        let (train2, test2) = generate(&small(0.5, 1)).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert_ne!(generate(&small(0.5, 2)).unwrap().0, train);
    }

    #[test]
    fn four_to_one_ratio() {
        let config = BenchmarkConfig {
            image_side: 8,
            n_majority: 400,
            n_minority: 100,
            ..Default::default()
        };
        let (train, _) = generate(&config).unwrap();
        let c = train.class_counts();
        assert_eq!((c.benign, c.malignant), (280, 70));
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            BenchmarkConfig { n_minority: 0, ..small(0.5, 0) },
            BenchmarkConfig { n_majority: 5, ..small(0.5, 0) },
            small(1.5, 0),
            small(-0.1, 0),
        ] {
            assert!(generate(&c).is_err());
        }
    }

    #[test]
    fn hue_gap_grows_with_domain_gap() {
        let mut last = -1.0;
        for gap in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let config = BenchmarkConfig {
                image_side: 16,
                n_majority: 100,
                n_minority: 100,
                domain_gap: gap,
                seed: 3,
                channels: 3,
            };
            let b = class_samples(&config, Label::Benign, 100);
            let m = class_samples(&config, Label::Malignant, 100);
            let hb = mean_hue_of(&b.iter().map(|s| s.image.clone()).collect::<Vec<_>>()).unwrap();
            let hm = mean_hue_of(&m.iter().map(|s| s.image.clone()).collect::<Vec<_>>()).unwrap();
            let diff = hue_difference(hb, hm).abs();
            assert!(diff >= last - 1e-9, "gap {gap}: {diff} < {last}");
            last = diff;
        }
        assert!(last > 40.0, "{last}");
    }

    #[test]
    fn hue_of_pure_colours() {
        let red = ImageTensor::new(1, 2, 3, vec![255.0, 0.0, 0.0, 255.0, 0.0, 0.0], RangeTag::Raw0To255).unwrap();
        assert!(mean_hue(&red).unwrap().abs() < 1e-9);
        let green = ImageTensor::new(1, 1, 3, vec![0.0, 1.0, 0.0], RangeTag::Standardized0To1).unwrap();
        assert!((mean_hue(&green).unwrap() - 120.0).abs() < 1e-6);
        assert!((hue_difference(350.0, 10.0) - 20.0).abs() < 1e-12);
        assert!((hue_difference(10.0, 350.0) + 20.0).abs() < 1e-12);
    }
}
