//! Radiograph preprocessing: decoding, CLAHE, seeded augmentation, resizing
//! and grayscale-to-3-channel stacking.
//!
//! Every operation is a pure function of its inputs and, for the stochastic
//! ones, of the RNG state passed in. Batch helpers derive a per-image seed as
//! `base_seed ^ image_index`.

mod augment;
mod clahe;
mod codec;
mod pipeline;
mod resize;

pub use augment::{
    adjust_brightness_contrast, augment, augment_upsample, flip, random_brightness_contrast,
    random_flip, random_rotate, rotate, AugmentSpec,
};
pub use clahe::{clahe, ClaheSpec};
pub use codec::{decode_image, encode_pgm, load_image, save_pgm, ImageFormat};
pub(crate) use pipeline::parse_tiles;
pub use pipeline::{PipelineOrder, PreprocessConfig};
pub use resize::{resize_bilinear, stack_channels, DEFAULT_TARGET};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded generator used by every stochastic image operation.
pub type ImageRng = ChaCha8Rng;

/// Generator for image `index` of a batch processed with `base_seed`.
pub fn image_rng(base_seed: u64, index: u64) -> ImageRng {
    ChaCha8Rng::seed_from_u64(base_seed ^ index)
}

/// 8-bit single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {width}x{height}"
            )));
        }
        if width * height != pixels.len() {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image extents must be positive");
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, u8> {
        self.pixels.chunks(self.width)
    }
}

/// Three-channel image with values in `[0, 1]`, channel-last layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ChannelImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * Self::CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height}x3 image cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "channel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `(r, g, b)` at pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// One channel as a plane of `width * height` values.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }
}
