use super::CorpusError;
use crate::image::RgbImage;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Random rotation, crop and contrast, each applied with its own probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Rotation angle is drawn from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    /// Side of the square crop, rescaled back to the input size.
    pub crop_size: usize,
    /// Multiplicative contrast factor range.
    pub contrast_range: (f64, f64),
    pub p_rotation: f64,
    pub p_crop: f64,
    pub p_contrast: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_degrees: 15.0,
            crop_size: 28,
            contrast_range: (0.8, 1.2),
            p_rotation: 0.5,
            p_crop: 0.5,
            p_contrast: 0.5,
        }
    }
}

impl AugmentationSpec {
    /// Spec that never changes an image.
    pub fn disabled() -> Self {
        AugmentationSpec {
            p_rotation: 0.0,
            p_crop: 0.0,
            p_contrast: 0.0,
            ..Default::default()
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.p_rotation == 0.0 && self.p_crop == 0.0 && self.p_contrast == 0.0
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidAugmentation(m.to_string()));
        for p in [self.p_rotation, self.p_crop, self.p_contrast] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return bad("rotation_degrees must be finite and >= 0");
        }
        if self.crop_size == 0 {
            return bad("crop_size must be >= 1");
        }
        let (lo, hi) = self.contrast_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("contrast range must be a positive interval");
        }
        Ok(())
    }
}

/// Applies rotation, then crop, then contrast. The output has the input's
/// dimensions and is a pure function of `(image, spec, rng state)`.
pub fn augment(image: &RgbImage, spec: &AugmentationSpec, rng: &mut Rng) -> Result<RgbImage, CorpusError> {
    spec.validate()?;
    let side = image.width().min(image.height());
    if spec.crop_size > side {
        return Err(CorpusError::CropTooLarge {
            crop: spec.crop_size,
            side,
        });
    }
    let mut out = image.clone();
    if rng.chance(spec.p_rotation) {
        let angle = rng.uniform(-spec.rotation_degrees, spec.rotation_degrees);
        out = rotate_nearest(&out, angle);
    }
    if rng.chance(spec.p_crop) {
        let max_x = out.width() - spec.crop_size;
        let max_y = out.height() - spec.crop_size;
        let x0 = rng.below(max_x as u64 + 1) as usize;
        let y0 = rng.below(max_y as u64 + 1) as usize;
        out = crop(&out, x0, y0, spec.crop_size, spec.crop_size).resize_nearest(image.width(), image.height());
    }
    if rng.chance(spec.p_contrast) {
        let (lo, hi) = spec.contrast_range;
        let factor = rng.uniform(lo, hi);
        out = adjust_contrast(&out, factor);
    }
    Ok(out)
}

/// Nearest-neighbour rotation about the image centre; samples falling
/// outside the source are clamped to the nearest edge pixel.
pub fn rotate_nearest(image: &RgbImage, degrees: f64) -> RgbImage {
    let (w, h) = (image.width(), image.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse mapping: rotate the destination point back
            let sx = (cos * dx + sin * dy + cx).round().clamp(0.0, w as f64 - 1.0) as usize;
            let sy = (-sin * dx + cos * dy + cy).round().clamp(0.0, h as f64 - 1.0) as usize;
            out.put(x, y, image.get(sx, sy));
        }
    }
    out
}

pub fn crop(image: &RgbImage, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.put(x, y, image.get(x0 + x, y0 + y));
        }
    }
    out
}

/// `out = mean + factor * (v - mean)` over all channels, rounded and clamped.
pub fn adjust_contrast(image: &RgbImage, factor: f64) -> RgbImage {
    let raw = image.as_raw();
    let mean = raw.iter().map(|&v| v as f64).sum::<f64>() / raw.len() as f64;
    let data = raw
        .iter()
        .map(|&v| (mean + factor * (v as f64 - mean)).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(image.width(), image.height(), data).expect("same dimensions")
}
