//! `ImageTensor`: the H×W×C pixel array every stage exchanges.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value range an image's intensities are declared to live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    #[serde(rename = "raw_0_255")]
    Raw0To255,
    #[serde(rename = "standardized_0_1")]
    Standardized0To1,
    #[serde(rename = "tanh_m1_1")]
    TanhM1To1,
}

impl RangeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RangeTag::Raw0To255 => "raw_0_255",
            RangeTag::Standardized0To1 => "standardized_0_1",
            RangeTag::TanhM1To1 => "tanh_m1_1",
        }
    }

    fn bounds(self) -> (f32, f32) {
        match self {
            RangeTag::Raw0To255 => (0.0, 255.0),
            RangeTag::Standardized0To1 => (0.0, 1.0),
            RangeTag::TanhM1To1 => (-1.0, 1.0),
        }
    }
}

/// Row-major `height × width × channels` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
    range: RangeTag,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>, range: RangeTag) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image must be at least 1×1, got {height}×{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}×{width}×{channels} image needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if range != RangeTag::Raw0To255 {
            let (lo, hi) = range.bounds();
            if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(Error::InvalidArgument(format!("value {v} outside {range:?}")));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            range,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32, range: RangeTag) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels], range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// Same geometry, new values and tag. Values are clamped into the tag's range.
    pub(crate) fn with_values(&self, mut values: Vec<f32>, range: RangeTag) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        let (lo, hi) = range.bounds();
        values.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values,
            range,
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// `[1, C, H, W]` network input.
    pub fn to_nchw(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = self.values[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::from_vec(&[1, c, h, w], data)
    }

    /// Sample `index` of an NCHW batch; values are clamped to `range`.
    pub fn from_nchw(t: &Tensor, index: usize, range: RangeTag) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        let src = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        let (lo, hi) = range.bounds();
        let mut values = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    values[(y * w + x) * c + ch] = src[(ch * h + y) * w + x].clamp(lo, hi);
                }
            }
        }
        Self::new(h, w, c, values, range)
    }

    /// Affine map between the `[0,1]` and `[−1,1]` conventions (`t = 2z − 1` and back).
    pub fn convert_range(&self, to: RangeTag) -> Result<Self> {
        use RangeTag::*;
        let f: fn(f32) -> f32 = match (self.range, to) {
            (a, b) if a == b => return Ok(self.clone()),
            (Standardized0To1, TanhM1To1) => |v| 2.0 * v - 1.0,
            (TanhM1To1, Standardized0To1) => |v| (v + 1.0) / 2.0,
            (Standardized0To1, Raw0To255) => |v| v * 255.0,
            (TanhM1To1, Raw0To255) => |v| (v + 1.0) * 127.5,
            (from, to) => {
                return Err(Error::InvalidArgument(format!(
                    "no fixed conversion from {from:?} to {to:?}; standardize first"
                )))
            }
        };
        Ok(self.with_values(self.values.iter().map(|&v| f(v)).collect(), to))
    }

    /// Bilinear resampling with half-pixel centres. Output stays within the input's value range.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let c = self.channels;
        let (lo, hi) = self.min_max();
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let axis = |o: usize, scale: f64, n: usize| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, (s - i0 as f64) as f32)
        };
        let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, self.width)).collect();
        let mut values = vec![0.0; out_h * out_w * c];
        for y in 0..out_h {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for ch in 0..c {
                    let top = self.get(y0, x0, ch) * (1.0 - fx) + self.get(y0, x1, ch) * fx;
                    let bot = self.get(y1, x0, ch) * (1.0 - fx) + self.get(y1, x1, ch) * fx;
                    values[(y * out_w + x) * c + ch] = (top * (1.0 - fy) + bot * fy).clamp(lo, hi);
                }
            }
        }
        Self {
            height: out_h,
            width: out_w,
            channels: c,
            values,
            range: self.range,
        }
    }

    /// Decodes PNG or JPEG into a `raw_0_255` image. Grayscale stays single-channel.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, bytes, w, h) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.as_raw().clone(), b.width(), b.height()),
            other => {
                let b = other.to_rgb8();
                (3, b.as_raw().clone(), b.width(), b.height())
            }
        };
        Self::new(
            h as usize,
            w as usize,
            channels,
            bytes.into_iter().map(f32::from).collect(),
            RangeTag::Raw0To255,
        )
    }

    /// 8-bit quantization of the image according to its range tag.
    pub fn to_bytes(&self) -> Vec<u8> {
        let scale = |v: f32| -> f32 {
            match self.range {
                RangeTag::Raw0To255 => v,
                RangeTag::Standardized0To1 => v * 255.0,
                RangeTag::TanhM1To1 => (v + 1.0) * 127.5,
            }
        };
        self.values.iter().map(|&v| scale(v).round().clamp(0.0, 255.0) as u8).collect()
    }

    /// Lossless 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_bytes();
        let res = if self.channels == 1 {
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size matches")
                .save_with_format(path, image::ImageFormat::Png)
        } else {
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
                .expect("buffer size matches")
                .save_with_format(path, image::ImageFormat::Png)
        };
        res.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry_and_range() {
        assert!(ImageTensor::new(0, 4, 3, vec![], RangeTag::Raw0To255).is_err());
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8], RangeTag::Raw0To255).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![1.5], RangeTag::Standardized0To1).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![-1.0], RangeTag::TanhM1To1).is_ok());
    }

    #[test]
    fn nchw_round_trip() {
        let values: Vec<f32> = (0..24).map(|v| v as f32 / 24.0).collect();
        let img = ImageTensor::new(2, 4, 3, values, RangeTag::Standardized0To1).unwrap();
        let back = ImageTensor::from_nchw(&img.to_nchw(), 0, RangeTag::Standardized0To1).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn resize_identity_and_range() {
        let values: Vec<f32> = (0..48).map(|v| (v * 5) as f32).collect();
        let img = ImageTensor::new(4, 4, 3, values, RangeTag::Raw0To255).unwrap();
        assert_eq!(img.resize_bilinear(4, 4), img);
        let big = img.resize_bilinear(9, 7);
        let (lo, hi) = img.min_max();
        assert!(big.values().iter().all(|v| (lo..=hi).contains(v)));
    }

    #[test]
    fn png_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let values: Vec<f32> = (0..27).map(|v| (v * 9) as f32).collect();
        let img = ImageTensor::new(3, 3, 3, values, RangeTag::Raw0To255).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(ImageTensor::load(&path).unwrap(), img);
    }
}
