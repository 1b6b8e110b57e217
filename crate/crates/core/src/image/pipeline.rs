use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{augment, clahe, image_rng, resize_bilinear, AugmentSpec, ClaheSpec, GrayImage};
use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Where CLAHE sits relative to the stochastic augmentations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PipelineOrder {
    #[default]
    ClaheFirst,
    AugmentFirst,
}

impl FromStr for PipelineOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clahe_first" => Ok(Self::ClaheFirst),
            "augment_first" => Ok(Self::AugmentFirst),
            other => Err(format!(
                "expected clahe_first or augment_first, got {other:?}"
            )),
        }
    }
}

impl fmt::Display for PipelineOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClaheFirst => "clahe_first",
            Self::AugmentFirst => "augment_first",
        })
    }
}

/// Preprocessing settings, read from a flat `key = value` file.
///
/// | key               | default        | meaning                                  |
/// |-------------------|----------------|------------------------------------------|
/// | `flip_h`          | 0.5            | horizontal flip probability              |
/// | `flip_v`          | 0.5            | vertical flip probability                |
/// | `rotation_limit`  | 270            | max absolute rotation, degrees           |
/// | `fill`            | 0              | rotation border value                    |
/// | `brightness_limit`| 0.4            | max brightness offset, fraction of 255   |
/// | `contrast_limit`  | 0.4            | max gain deviation                       |
/// | `clahe`           | true           | apply CLAHE                              |
/// | `clahe_clip`      | 4.0            | clip limit (`inf` disables clipping)     |
/// | `clahe_tiles`     | 8x8            | tile grid, `RxC` or a single `N`         |
/// | `order`           | clahe_first    | `clahe_first` or `augment_first`         |
/// | `seed`            | 0              | base seed for augmentation               |
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub augment: AugmentSpec,
    pub clahe: Option<ClaheSpec>,
    pub order: PipelineOrder,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            augment: AugmentSpec::default(),
            clahe: Some(ClaheSpec::default()),
            order: PipelineOrder::default(),
        }
    }
}

pub(crate) fn parse_tiles(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((r, c)) => Ok((parse(r)?, parse(c)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

impl PreprocessConfig {
    pub fn from_kv(map: KvMap) -> Result<Self> {
        let d = Self::default();
        let dc = ClaheSpec::default();
        let mut r = map.reader();
        let augment = AugmentSpec {
            flip_horizontal_prob: r.take_or("flip_h", d.augment.flip_horizontal_prob)?,
            flip_vertical_prob: r.take_or("flip_v", d.augment.flip_vertical_prob)?,
            rotation_limit_degrees: r
                .take_or("rotation_limit", d.augment.rotation_limit_degrees)?,
            border_fill: r.take_or("fill", d.augment.border_fill)?,
            brightness_limit: r.take_or("brightness_limit", d.augment.brightness_limit)?,
            contrast_limit: r.take_or("contrast_limit", d.augment.contrast_limit)?,
            seed: r.take_or("seed", d.augment.seed)?,
        };
        let enabled: bool = r.take_or("clahe", true)?;
        let clip_limit: f64 = r.take_or("clahe_clip", dc.clip_limit)?;
        let tiles = match r.take::<String>("clahe_tiles")? {
            Some(s) => parse_tiles(&s).map_err(|e| Error::Config(format!("clahe_tiles: {e}")))?,
            None => (dc.tile_rows, dc.tile_cols),
        };
        let order = r.take_or("order", d.order)?;
        r.finish()?;
        let clahe = enabled.then_some(ClaheSpec {
            clip_limit,
            tile_rows: tiles.0,
            tile_cols: tiles.1,
        });
        let cfg = Self {
            augment,
            clahe,
            order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvMap::read(path)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::default();
        let a = &self.augment;
        m.insert("flip_h", a.flip_horizontal_prob);
        m.insert("flip_v", a.flip_vertical_prob);
        m.insert("rotation_limit", a.rotation_limit_degrees);
        m.insert("fill", a.border_fill);
        m.insert("brightness_limit", a.brightness_limit);
        m.insert("contrast_limit", a.contrast_limit);
        m.insert("seed", a.seed);
        m.insert("clahe", self.clahe.is_some());
        if let Some(c) = &self.clahe {
            m.insert("clahe_clip", c.clip_limit);
            m.insert("clahe_tiles", format!("{}x{}", c.tile_rows, c.tile_cols));
        }
        m.insert("order", self.order);
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if let Some(c) = &self.clahe {
            c.validate()?;
        }
        Ok(())
    }

    /// CLAHE (when enabled) followed by resizing. No randomness.
    pub fn enhance(&self, img: &GrayImage, size: (usize, usize)) -> Result<GrayImage> {
        let img = match &self.clahe {
            Some(spec) => clahe(img, spec)?,
            None => img.clone(),
        };
        resize_bilinear(&img, size.0, size.1)
    }

    /// Augmentation and CLAHE in the configured order, then resizing. Image
    /// `index` of a batch draws from the seed `augment.seed ^ index`.
    pub fn augment_and_enhance(
        &self,
        img: &GrayImage,
        index: u64,
        size: (usize, usize),
    ) -> Result<GrayImage> {
        let mut rng = image_rng(self.augment.seed, index);
        let apply_clahe = |g: GrayImage| -> Result<GrayImage> {
            match &self.clahe {
                Some(spec) => clahe(&g, spec),
                None => Ok(g),
            }
        };
        let img = match self.order {
            PipelineOrder::ClaheFirst => {
                augment(&apply_clahe(img.clone())?, &self.augment, &mut rng)
            }
            PipelineOrder::AugmentFirst => apply_clahe(augment(img, &self.augment, &mut rng))?,
        };
        resize_bilinear(&img, size.0, size.1)
    }
}
