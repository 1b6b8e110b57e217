//! Seeded flips, rotations and brightness/contrast jitter.

use rand::Rng;
use rayon::prelude::*;

use super::{image_rng, GrayImage};
use crate::error::{Error, Result};

/// Parameters of the stochastic augmentation chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub flip_horizontal_prob: f64,
    pub flip_vertical_prob: f64,
    /// Angles are drawn uniformly from `[-limit, +limit]` degrees.
    pub rotation_limit_degrees: f64,
    /// Value written where a rotated sample falls outside the source.
    pub border_fill: u8,
    /// Offset as a fraction of full scale.
    pub brightness_limit: f64,
    /// Multiplicative gain deviation from 1.
    pub contrast_limit: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip_horizontal_prob: 0.5,
            flip_vertical_prob: 0.5,
            rotation_limit_degrees: 270.0,
            border_fill: 0,
            brightness_limit: 0.4,
            contrast_limit: 0.4,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Spec whose draws all leave the image unchanged.
    pub fn identity() -> Self {
        Self {
            flip_horizontal_prob: 0.0,
            flip_vertical_prob: 0.0,
            rotation_limit_degrees: 0.0,
            border_fill: 0,
            brightness_limit: 0.0,
            contrast_limit: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_h", self.flip_horizontal_prob),
            ("flip_v", self.flip_vertical_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a probability, got {p}"
                )));
            }
        }
        if !(0.0..=360.0).contains(&self.rotation_limit_degrees) {
            return Err(Error::InvalidArgument(format!(
                "rotation_limit must lie in [0, 360], got {}",
                self.rotation_limit_degrees
            )));
        }
        for (name, v) in [
            ("brightness_limit", self.brightness_limit),
            ("contrast_limit", self.contrast_limit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mirrors columns (`horizontal`) and/or rows (`vertical`).
pub fn flip(img: &GrayImage, horizontal: bool, vertical: bool) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    GrayImage::from_fn(w, h, |x, y| {
        let sx = if horizontal { w - 1 - x } else { x };
        let sy = if vertical { h - 1 - y } else { y };
        img.get(sx, sy)
    })
}

pub fn random_flip<R: Rng + ?Sized>(img: &GrayImage, spec: &AugmentSpec, rng: &mut R) -> GrayImage {
    let horizontal = rng.random_bool(spec.flip_horizontal_prob);
    let vertical = rng.random_bool(spec.flip_vertical_prob);
    flip(img, horizontal, vertical)
}

/// Rotates counter-clockwise by `degrees` about the image center. Each output
/// pixel is inverse-mapped into the source and sampled bilinearly; taps that
/// fall outside the source read `fill`.
pub fn rotate(img: &GrayImage, degrees: f64, fill: u8) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tap = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill as f64
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    GrayImage::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = snap(cx + cos * dx - sin * dy);
        let sy = snap(cy + sin * dx + cos * dy);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let top = (1.0 - fx) * tap(x0, y0) + fx * tap(x0 + 1, y0);
        let bottom = (1.0 - fx) * tap(x0, y0 + 1) + fx * tap(x0 + 1, y0 + 1);
        ((1.0 - fy) * top + fy * bottom).round().clamp(0.0, 255.0) as u8
    })
}

/// Removes trigonometric round-off so lattice rotations sample exact pixels.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

pub fn random_rotate<R: Rng + ?Sized>(
    img: &GrayImage,
    spec: &AugmentSpec,
    rng: &mut R,
) -> GrayImage {
    let limit = spec.rotation_limit_degrees;
    let angle = rng.random_range(-limit..=limit);
    rotate(img, angle, spec.border_fill)
}

/// `clamp(round((1 + contrast) * p + brightness * 255), 0, 255)`.
pub fn adjust_brightness_contrast(img: &GrayImage, contrast: f64, brightness: f64) -> GrayImage {
    let gain = 1.0 + contrast;
    let offset = brightness * 255.0;
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (gain * p as f64 + offset).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("extents unchanged")
}

pub fn random_brightness_contrast<R: Rng + ?Sized>(
    img: &GrayImage,
    spec: &AugmentSpec,
    rng: &mut R,
) -> GrayImage {
    let contrast = rng.random_range(-spec.contrast_limit..=spec.contrast_limit);
    let brightness = rng.random_range(-spec.brightness_limit..=spec.brightness_limit);
    adjust_brightness_contrast(img, contrast, brightness)
}

/// Flip, then rotate, then brightness/contrast.
pub fn augment<R: Rng + ?Sized>(img: &GrayImage, spec: &AugmentSpec, rng: &mut R) -> GrayImage {
    let img = random_flip(img, spec, rng);
    let img = random_rotate(&img, spec, rng);
    random_brightness_contrast(&img, spec, rng)
}

/// Grows `images` to `target_count` by appending augmented copies of the
/// originals taken round-robin. Copy `k` of the output (counting from the
/// first appended image at `images.len()`) uses the seed `spec.seed ^ k`.
pub fn augment_upsample(
    images: &[GrayImage],
    target_count: usize,
    spec: &AugmentSpec,
) -> Result<Vec<GrayImage>> {
    if images.is_empty() {
        return Err(Error::Empty(
            "augment_upsample needs at least one image".into(),
        ));
    }
    if target_count < images.len() {
        return Err(Error::InvalidArgument(format!(
            "target count {target_count} is below the {} input images",
            images.len()
        )));
    }
    spec.validate()?;
    let n = images.len();
    let extra: Vec<GrayImage> = (n..target_count)
        .into_par_iter()
        .map(|index| {
            let mut rng = image_rng(spec.seed, index as u64);
            augment(&images[(index - n) % n], spec, &mut rng)
        })
        .collect();
    let mut out = images.to_vec();
    out.extend(extra);
    Ok(out)
}
