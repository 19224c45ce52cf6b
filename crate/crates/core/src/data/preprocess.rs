use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, RangeTag};

/// Recorded in snapshot metadata for every resampled dataset.
pub const RESAMPLING_KERNEL: &str = "bilinear";

/// Pads to a centred square with zero intensity, then resamples bilinearly to
/// `target_side × target_side`. Content aspect ratio is preserved.
pub fn pad_and_resize(image: &ImageTensor, target_side: usize) -> Result<ImageTensor> {
    if target_side < 8 {
        return Err(Error::InvalidArgument(format!("target side must be ≥ 8, got {target_side}")));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let side = h.max(w);
    let square = if h == w {
        image.clone()
    } else {
        let (oy, ox) = ((side - h) / 2, (side - w) / 2);
        let mut values = vec![0.0; side * side * c];
        for y in 0..h {
            let src = &image.values()[y * w * c..(y + 1) * w * c];
            let start = ((y + oy) * side + ox) * c;
            values[start..start + w * c].copy_from_slice(src);
        }
        ImageTensor::new(side, side, c, values, image.range())?
    };
    Ok(square.resize_bilinear(target_side, target_side))
}

/// Per-image min–max rescaling to `[0, 1]`: `z = (x − min) / (max − min)`.
///
/// A constant image maps to all zeros. Already standardized images are returned unchanged.
pub fn standardize(image: &ImageTensor) -> Result<ImageTensor> {
    let (lo, hi) = image.min_max();
    let values = if hi > lo {
        let (lo, span) = (lo as f64, (hi - lo) as f64);
        image.values().iter().map(|&v| ((v as f64 - lo) / span) as f32).collect()
    } else {
        vec![0.0; image.values().len()]
    };
    ImageTensor::new(
        image.height(),
        image.width(),
        image.channels(),
        values,
        RangeTag::Standardized0To1,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(h: usize, w: usize, c: usize, values: Vec<f32>) -> ImageTensor {
        ImageTensor::new(h, w, c, values, RangeTag::Raw0To255).unwrap()
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(&raw(1, 3, 1, vec![0.0, 127.5, 255.0])).unwrap();
        assert_eq!(z.values(), &[0.0, 0.5, 1.0]);
        let z = standardize(&raw(1, 3, 1, vec![10.0, 20.0, 30.0])).unwrap();
        assert_eq!(z.values(), &[0.0, 0.5, 1.0]);
        assert_eq!(z.range(), RangeTag::Standardized0To1);
        let z = standardize(&raw(2, 2, 1, vec![42.0; 4])).unwrap();
        assert_eq!(z.values(), &[0.0; 4]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let img = raw(3, 3, 3, (0..27).map(|v| (v * v % 97) as f32).collect());
        let once = standardize(&img).unwrap();
        assert_eq!(standardize(&once).unwrap(), once);
    }

    #[test]
    fn pad_and_resize_examples() {
        let img = raw(300, 200, 3, vec![128.0; 300 * 200 * 3]);
        let out = pad_and_resize(&img, 256).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (256, 256, 3));
        // Padding sits on the short (width) axis: corners are black, centre is content.
        assert_eq!(out.get(128, 0, 0), 0.0);
        assert_eq!(out.get(128, 128, 0), 128.0);
        assert_eq!(out.get(0, 128, 0), 128.0);

        let img = raw(64, 64, 3, (0..64 * 64 * 3).map(|v| (v % 256) as f32).collect());
        assert_eq!(pad_and_resize(&img, 64).unwrap(), img);

        let zero = raw(100, 50, 1, vec![0.0; 5000]);
        let out = pad_and_resize(&zero, 64).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert_eq!((out.height(), out.width()), (64, 64));

        assert!(pad_and_resize(&zero, 7).is_err());
    }
}
