//! Contrast Limited Adaptive Histogram Equalization.
//!
//! The image is split into a grid of tiles. Each tile's histogram is clipped
//! at `clip_limit * tile_area / 256` counts (at least one), the clipped mass
//! is spread uniformly over all 256 bins, and the resulting CDF becomes the
//! tile's lookup table:
//!
//! ```text
//! lut[v] = round(255 * (cdf[v] - cdf[v_min]) / (area - cdf[v_min]))
//! ```
//!
//! where `v_min` is the darkest intensity present in the tile. A tile holding a
//! single intensity keeps the identity mapping. Output pixels blend the LUTs
//! of the four nearest tile centers bilinearly.
//!
//! With an infinite clip limit and a 1x1 grid this is global histogram
//! equalization, and constant images are fixed points for any settings.

use super::GrayImage;
use crate::error::{Error, Result};

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheSpec {
    /// Histogram clip factor relative to a flat histogram; `f64::INFINITY`
    /// disables clipping.
    pub clip_limit: f64,
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl Default for ClaheSpec {
    fn default() -> Self {
        Self {
            clip_limit: 4.0,
            tile_rows: 8,
            tile_cols: 8,
        }
    }
}

impl ClaheSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_limit > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clahe clip limit must be positive, got {}",
                self.clip_limit
            )));
        }
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(Error::InvalidArgument(
                "clahe tile grid must be at least 1x1".into(),
            ));
        }
        Ok(())
    }
}

pub fn clahe(img: &GrayImage, spec: &ClaheSpec) -> Result<GrayImage> {
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    if spec.tile_rows > h || spec.tile_cols > w {
        return Err(Error::InvalidArgument(format!(
            "clahe tile grid {}x{} exceeds image {w}x{h}",
            spec.tile_rows, spec.tile_cols
        )));
    }
    let row_bounds = bounds(h, spec.tile_rows);
    let col_bounds = bounds(w, spec.tile_cols);

    let mut luts = Vec::with_capacity(spec.tile_rows * spec.tile_cols);
    for ty in 0..spec.tile_rows {
        for tx in 0..spec.tile_cols {
            luts.push(tile_lut(
                img,
                (col_bounds[tx], col_bounds[tx + 1]),
                (row_bounds[ty], row_bounds[ty + 1]),
                spec.clip_limit,
            ));
        }
    }

    let row_centers = centers(&row_bounds);
    let col_centers = centers(&col_bounds);
    let col_weights: Vec<(usize, usize, f64)> =
        (0..w).map(|x| neighbors(&col_centers, x)).collect();

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ty0, ty1, wy) = neighbors(&row_centers, y);
        for (x, &(tx0, tx1, wx)) in col_weights.iter().enumerate() {
            let v = img.get(x, y) as usize;
            let at = |ty: usize, tx: usize| luts[ty * spec.tile_cols + tx][v] as f64;
            let top = (1.0 - wx) * at(ty0, tx0) + wx * at(ty0, tx1);
            let bottom = (1.0 - wx) * at(ty1, tx0) + wx * at(ty1, tx1);
            let blended = (1.0 - wy) * top + wy * bottom;
            out.push(blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

/// Tile edges `0 = b[0] < b[1] < ... < b[n] = len`.
fn bounds(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| i * len / n).collect()
}

fn centers(bounds: &[usize]) -> Vec<f64> {
    bounds
        .windows(2)
        .map(|b| (b[0] + b[1] - 1) as f64 / 2.0)
        .collect()
}

/// The two tiles whose centers bracket `pos` and the weight of the second.
fn neighbors(centers: &[f64], pos: usize) -> (usize, usize, f64) {
    let p = pos as f64;
    let last = centers.len() - 1;
    if p <= centers[0] {
        return (0, 0, 0.0);
    }
    if p >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= p).unwrap();
    let w = (p - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, w)
}

fn tile_lut(
    img: &GrayImage,
    (x0, x1): (usize, usize),
    (y0, y1): (usize, usize),
    clip: f64,
) -> [u8; BINS] {
    let mut hist = [0usize; BINS];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[img.get(x, y) as usize] += 1;
        }
    }
    let area = (x1 - x0) * (y1 - y0);
    let v_min = hist.iter().position(|&c| c > 0).unwrap();
    let mut identity = [0u8; BINS];
    identity
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = i as u8);
    if hist[v_min] == area {
        return identity;
    }

    if clip.is_finite() {
        let limit = ((clip * area as f64 / BINS as f64).floor() as usize).max(1);
        let mut excess = 0;
        for bin in hist.iter_mut() {
            if *bin > limit {
                excess += *bin - limit;
                *bin = limit;
            }
        }
        let batch = excess / BINS;
        let residual = excess % BINS;
        hist.iter_mut().for_each(|b| *b += batch);
        if residual > 0 {
            let step = (BINS / residual).max(1);
            for i in (0..BINS).step_by(step).take(residual) {
                hist[i] += 1;
            }
        }
    }

    let mut cdf = [0usize; BINS];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let base = cdf[v_min];
    let denom = area - base;
    let mut lut = [0u8; BINS];
    for (v, out) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(base);
        // round-half-up of 255 * num / denom
        *out = ((2 * 255 * num + denom) / (2 * denom)).min(255) as u8;
    }
    lut
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_fixed_point() {
        for v in [0u8, 17, 128, 255] {
            let img = GrayImage::filled(16, 12, v);
            assert_eq!(clahe(&img, &ClaheSpec::default()).unwrap(), img);
        }
    }

    #[test]
    fn rejects_oversized_grid() {
        let img = GrayImage::filled(4, 4, 3);
        let spec = ClaheSpec {
            tile_rows: 5,
            ..ClaheSpec::default()
        };
        assert!(clahe(&img, &spec).is_err());
        let bad = ClaheSpec {
            clip_limit: 0.0,
            ..ClaheSpec::default()
        };
        assert!(clahe(&GrayImage::filled(16, 16, 1), &bad).is_err());
    }

    #[test]
    fn two_level_image_stretches_to_full_range() {
        let img = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 100 } else { 110 });
        let spec = ClaheSpec {
            clip_limit: f64::INFINITY,
            tile_rows: 1,
            tile_cols: 1,
        };
        let out = clahe(&img, &spec).unwrap();
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(7, 0), 255);
    }

    #[test]
    fn clipping_limits_contrast_gain() {
        // A low-contrast gradient: unclipped equalization spreads it over the
        // full range, clipping keeps it narrower.
        let img = GrayImage::from_fn(32, 32, |x, y| (120 + (x + y) / 8) as u8);
        let full = ClaheSpec {
            clip_limit: f64::INFINITY,
            tile_rows: 2,
            tile_cols: 2,
        };
        let clipped = ClaheSpec {
            clip_limit: 1.5,
            tile_rows: 2,
            tile_cols: 2,
        };
        let spread = |g: &GrayImage| {
            let max = *g.pixels().iter().max().unwrap() as i32;
            let min = *g.pixels().iter().min().unwrap() as i32;
            max - min
        };
        let a = clahe(&img, &full).unwrap();
        let b = clahe(&img, &clipped).unwrap();
        assert!(spread(&b) < spread(&a), "{} vs {}", spread(&b), spread(&a));
    }

    #[test]
    fn neighbor_weights() {
        let c = centers(&bounds(16, 2));
        assert_eq!(c, vec![3.5, 11.5]);
        assert_eq!(neighbors(&c, 0), (0, 0, 0.0));
        assert_eq!(neighbors(&c, 15), (1, 1, 0.0));
        let (a, b, w) = neighbors(&c, 7);
        assert_eq!((a, b), (0, 1));
        assert!((w - 0.4375).abs() < 1e-15);
    }
}
