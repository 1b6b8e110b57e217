use super::{ChannelImage, GrayImage};
use crate::error::{Error, Result};

/// Network input size used by the ViT-B/32 configuration.
pub const DEFAULT_TARGET: (usize, usize) = (224, 224);

/// Bilinear resize with half-pixel-center alignment: destination pixel `d`
/// samples source coordinate `(d + 0.5) * src / dst - 0.5`, clamped to the
/// source extent.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    let xs = taps(img.width(), width);
    let ys = taps(img.height(), height);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = (1.0 - fx) * img.get(x0, y0) as f64 + fx * img.get(x1, y0) as f64;
            let bottom = (1.0 - fx) * img.get(x0, y1) as f64 + fx * img.get(x1, y1) as f64;
            out.push(((1.0 - fy) * top + fy * bottom).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, out)
}

fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Replicates the gray channel three times and scales to `[0, 1]`.
pub fn stack_channels(img: &GrayImage) -> ChannelImage {
    let data = img
        .pixels()
        .iter()
        .flat_map(|&p| {
            let v = p as f64 / 255.0;
            [v, v, v]
        })
        .collect();
    ChannelImage::new(img.width(), img.height(), data).expect("values in range")
}
