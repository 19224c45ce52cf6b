//! Offline augmentation: derived samples are generated once, ahead of
//! training, and stored alongside the originals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabelledDataset, LabelledSample, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    HorizontalFlip,
    VerticalFlip,
    GaussianNoise,
    Brightness,
    Zoom,
    HorizontalShift,
    VerticalShift,
    PerPixelNoise,
    ColorSpaceConversion,
    Rotation,
}

impl Transform {
    pub const ALL: [Transform; 10] = [
        Transform::HorizontalFlip,
        Transform::VerticalFlip,
        Transform::GaussianNoise,
        Transform::Brightness,
        Transform::Zoom,
        Transform::HorizontalShift,
        Transform::VerticalShift,
        Transform::PerPixelNoise,
        Transform::ColorSpaceConversion,
        Transform::Rotation,
    ];
}

/// Closed interval a magnitude is drawn uniformly from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f32,
    pub hi: f32,
}

impl Span {
    pub const fn new(lo: f32, hi: f32) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f32 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Magnitudes {
    pub rotation_degrees: Span,
    /// Relative intensity change.
    pub brightness: Span,
    pub zoom: Span,
    /// Fraction of the image side.
    pub horizontal_shift: Span,
    pub vertical_shift: Span,
    /// Standard deviation as a fraction of the intensity range.
    pub gaussian_sigma: Span,
    /// Half-width of the per-pixel uniform noise, fraction of the intensity range.
    pub per_pixel_noise: Span,
    pub hue_shift_degrees: Span,
}

impl Default for Magnitudes {
    fn default() -> Self {
        Self {
            rotation_degrees: Span::new(-25.0, 25.0),
            brightness: Span::new(-0.2, 0.2),
            zoom: Span::new(0.9, 1.1),
            horizontal_shift: Span::new(-0.1, 0.1),
            vertical_shift: Span::new(-0.1, 0.1),
            gaussian_sigma: Span::new(0.02, 0.02),
            per_pixel_noise: Span::new(0.0, 0.05),
            hue_shift_degrees: Span::new(-10.0, 10.0),
        }
    }
}

impl Magnitudes {
    fn spans(&self) -> [(&'static str, Span); 8] {
        [
            ("rotation_degrees", self.rotation_degrees),
            ("brightness", self.brightness),
            ("zoom", self.zoom),
            ("horizontal_shift", self.horizontal_shift),
            ("vertical_shift", self.vertical_shift),
            ("gaussian_sigma", self.gaussian_sigma),
            ("per_pixel_noise", self.per_pixel_noise),
            ("hue_shift_degrees", self.hue_shift_degrees),
        ]
    }
}

/// Which transforms to apply and how many samples to produce.
///
/// Output size is `target_total` when set, otherwise `factor × input size`.
/// Originals always stay in the output unmodified.
///
/// "5x" on 900 images is usually read as 5400 in total, so set
/// `target_total: 5400` for that. A "10x" set of 99000 is most likely a typo
/// for 9000 (`factor: 10`); 99000 itself is reachable through `target_total`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub transforms: Vec<Transform>,
    pub magnitudes: Magnitudes,
    pub factor: usize,
    pub target_total: Option<usize>,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            transforms: Transform::ALL.to_vec(),
            magnitudes: Magnitudes::default(),
            factor: 1,
            target_total: None,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("augmentation factor must be ≥ 1".into()));
        }
        for (name, span) in self.magnitudes.spans() {
            if !span.valid() {
                return Err(Error::Config(format!(
                    "augmentation magnitude {name} must be a finite, non-empty range, got [{}, {}]",
                    span.lo, span.hi
                )));
            }
        }
        if self.magnitudes.zoom.lo <= 0.0 {
            return Err(Error::Config("zoom range must be positive".into()));
        }
        Ok(())
    }

    /// Number of samples produced for an input of `n` samples.
    pub fn output_size(&self, n: usize) -> usize {
        self.target_total.unwrap_or(self.factor * n)
    }

    fn has(&self, t: Transform) -> bool {
        self.transforms.contains(&t)
    }
}

/// Returns the originals followed by augmented copies. Copy `j` is derived
/// from original `j mod n`; its random stream depends only on the spec seed,
/// the source id and the copy number.
pub fn augment_offline(dataset: &LabelledDataset, spec: &AugmentationSpec) -> Result<LabelledDataset> {
    spec.validate()?;
    let n = dataset.len();
    let total = spec.output_size(n);
    if total < n {
        return Err(Error::Config(format!(
            "augmentation target {total} is smaller than the input size {n}"
        )));
    }
    if total == n || n == 0 {
        return Ok(dataset.clone());
    }
    let mut samples = dataset.samples().to_vec();
    for j in 0..total - n {
        let src = &dataset.samples()[j % n];
        let copy = j / n + 1;
        let mut rng = seed::rng(spec.seed, &format!("augment/{}/{copy}", src.id));
        samples.push(LabelledSample {
            id: format!("{}_aug{copy}", src.id),
            label: src.label,
            provenance: Provenance::Augmented {
                source_id: src.id.clone(),
            },
            image: augment_image(&src.image, spec, &mut rng)?,
        });
    }
    LabelledDataset::new(samples)
}

fn range_span(image: &ImageTensor) -> f32 {
    match image.range() {
        RangeTag::Raw0To255 => 255.0,
        RangeTag::Standardized0To1 => 1.0,
        RangeTag::TanhM1To1 => 2.0,
    }
}

fn augment_image(image: &ImageTensor, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    let m = &spec.magnitudes;
    let mut out = image.clone();
    if spec.has(Transform::HorizontalFlip) && rng.random_bool(0.5) {
        out = flip(&out, true);
    }
    if spec.has(Transform::VerticalFlip) && rng.random_bool(0.5) {
        out = flip(&out, false);
    }

    let angle = if spec.has(Transform::Rotation) { m.rotation_degrees.sample(rng) } else { 0.0 };
    let zoom = if spec.has(Transform::Zoom) { m.zoom.sample(rng) } else { 1.0 };
    let tx = if spec.has(Transform::HorizontalShift) { m.horizontal_shift.sample(rng) } else { 0.0 };
    let ty = if spec.has(Transform::VerticalShift) { m.vertical_shift.sample(rng) } else { 0.0 };
    if angle != 0.0 || zoom != 1.0 || tx != 0.0 || ty != 0.0 {
        out = warp(&out, angle, zoom, tx, ty);
    }

    if spec.has(Transform::ColorSpaceConversion) && out.channels() == 3 {
        let shift = m.hue_shift_degrees.sample(rng);
        out = rotate_hue(&out, shift);
    }
    if spec.has(Transform::Brightness) {
        let k = 1.0 + m.brightness.sample(rng);
        out = out.with_values(out.values().iter().map(|v| v * k).collect(), out.range());
    }
    let span = range_span(&out);
    if spec.has(Transform::GaussianNoise) {
        let sigma = m.gaussian_sigma.sample(rng) * span;
        if sigma > 0.0 {
            let dist = Normal::new(0.0f32, sigma).expect("finite sigma");
            let values = out.values().iter().map(|v| v + dist.sample(rng)).collect();
            out = out.with_values(values, out.range());
        }
    }
    if spec.has(Transform::PerPixelNoise) {
        let amp = m.per_pixel_noise.sample(rng) * span;
        if amp > 0.0 {
            let c = out.channels();
            let mut values = out.values().to_vec();
            for px in values.chunks_mut(c) {
                let d = rng.random_range(-amp..=amp);
                px.iter_mut().for_each(|v| *v += d);
            }
            out = out.with_values(values, out.range());
        }
    }
    Ok(out)
}

fn flip(image: &ImageTensor, horizontal: bool) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut values = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
            for ch in 0..c {
                values[(y * w + x) * c + ch] = image.get(sy, sx, ch);
            }
        }
    }
    image.with_values(values, image.range())
}

/// Rotation about the centre, isotropic zoom and translation, sampled
/// bilinearly by inverse mapping. Pixels mapped from outside are zero.
fn warp(image: &ImageTensor, angle_deg: f32, zoom: f32, shift_x: f32, shift_y: f32) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (tx, ty) = (shift_x * w as f32, shift_y * h as f32);
    let mut values = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f32 - cx - tx) / zoom;
            let dy = (y as f32 - cy - ty) / zoom;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f32 || sy > (h - 1) as f32 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
            for ch in 0..c {
                let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
                let bot = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
                values[(y * w + x) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    image.with_values(values, image.range())
}

pub(crate) fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Round trip through HSV with the hue rotated by `degrees`.
fn rotate_hue(image: &ImageTensor, degrees: f32) -> ImageTensor {
    let values = image
        .values()
        .chunks(3)
        .flat_map(|px| {
            let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb(h + degrees, s, v);
            [r, g, b]
        })
        .collect();
    image.with_values(values, image.range())
}
