use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{parse_tiles, ClaheSpec};
use crate::kv::KvMap;
use crate::optim::{
    OptimizerKind, DEFAULT_EARLY_STOP_PATIENCE, DEFAULT_MIN_LR, DEFAULT_PLATEAU_FACTOR,
    DEFAULT_PLATEAU_PATIENCE,
};
use crate::vit::ViTConfig;

/// Everything that determines a training run.
///
/// As a `key = value` file it accepts the [`ViTConfig`] keys plus the fields
/// below under the same names, with `clahe`, `clahe_clip` and `clahe_tiles`
/// describing [`TrainConfig::clahe`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub vit: ViTConfig,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Contrast enhancement applied to every image after decoding. `None`
    /// when the images were already enhanced by the preprocessing step.
    pub clahe: Option<ClaheSpec>,
    /// Where the best-validation-accuracy parameters are written.
    pub checkpoint: Option<PathBuf>,
    /// When set, parameters after every epoch are written here as
    /// `epoch_NNNN.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines training log.
    pub log: Option<PathBuf>,
    /// Dataset manifest to train on. Recorded in checkpoints so evaluation
    /// can find the held-out splits.
    pub manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vit: ViTConfig::vit_b32(),
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 50,
            plateau_factor: DEFAULT_PLATEAU_FACTOR,
            plateau_patience: DEFAULT_PLATEAU_PATIENCE,
            min_lr: DEFAULT_MIN_LR,
            early_stop_patience: DEFAULT_EARLY_STOP_PATIENCE,
            seed: 0,
            clahe: None,
            checkpoint: None,
            checkpoint_dir: None,
            log: None,
            manifest: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr must be finite and nonnegative, got {}",
                self.lr
            ));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad(format!(
                "plateau_factor must lie in (0, 1], got {}",
                self.plateau_factor
            ));
        }
        if !(self.min_lr >= 0.0 && self.min_lr.is_finite()) {
            return bad(format!(
                "min_lr must be finite and nonnegative, got {}",
                self.min_lr
            ));
        }
        if let Some(c) = &self.clahe {
            c.validate()?;
        }
        Ok(())
    }

    pub fn from_kv(map: KvMap) -> Result<Self> {
        let d = Self::default();
        let dc = ClaheSpec::default();
        let mut r = map.reader();
        let vit = ViTConfig::take_from(&mut r, d.vit)?;
        let path = |v: Option<String>| v.map(PathBuf::from);
        let optimizer = r.take_or("optimizer", d.optimizer)?;
        let lr = r.take_or("lr", d.lr)?;
        let batch_size = r.take_or("batch_size", d.batch_size)?;
        let max_epochs = r.take_or("max_epochs", d.max_epochs)?;
        let plateau_factor = r.take_or("plateau_factor", d.plateau_factor)?;
        let plateau_patience = r.take_or("plateau_patience", d.plateau_patience)?;
        let min_lr = r.take_or("min_lr", d.min_lr)?;
        let early_stop_patience = r.take_or("early_stop_patience", d.early_stop_patience)?;
        let seed = r.take_or("seed", d.seed)?;
        let clahe_on: bool = r.take_or("clahe", false)?;
        let clip_limit = r.take_or("clahe_clip", dc.clip_limit)?;
        let (tile_rows, tile_cols) = match r.take::<String>("clahe_tiles")? {
            Some(s) => parse_tiles(&s).map_err(|e| Error::Config(format!("clahe_tiles: {e}")))?,
            None => (dc.tile_rows, dc.tile_cols),
        };
        let checkpoint = path(r.take("checkpoint")?);
        let checkpoint_dir = path(r.take("checkpoint_dir")?);
        let log = path(r.take("log")?);
        let manifest = path(r.take("manifest")?);
        r.finish()?;
        let cfg = Self {
            vit,
            optimizer,
            lr,
            batch_size,
            max_epochs,
            plateau_factor,
            plateau_patience,
            min_lr,
            early_stop_patience,
            seed,
            clahe: clahe_on.then_some(ClaheSpec {
                clip_limit,
                tile_rows,
                tile_cols,
            }),
            checkpoint,
            checkpoint_dir,
            log,
            manifest,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvMap::read(path)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = self.vit.to_kv();
        m.insert("optimizer", self.optimizer);
        m.insert("lr", self.lr);
        m.insert("batch_size", self.batch_size);
        m.insert("max_epochs", self.max_epochs);
        m.insert("plateau_factor", self.plateau_factor);
        m.insert("plateau_patience", self.plateau_patience);
        m.insert("min_lr", self.min_lr);
        m.insert("early_stop_patience", self.early_stop_patience);
        m.insert("seed", self.seed);
        preprocessing_kv(self.clahe.as_ref(), &mut m);
        for (key, p) in [
            ("checkpoint", &self.checkpoint),
            ("checkpoint_dir", &self.checkpoint_dir),
            ("log", &self.log),
            ("manifest", &self.manifest),
        ] {
            if let Some(p) = p {
                m.insert(key, p.display());
            }
        }
        m
    }
}

/// Writes the image enhancement settings under the training-config keys.
pub(crate) fn preprocessing_kv(clahe: Option<&ClaheSpec>, m: &mut KvMap) {
    m.insert("clahe", clahe.is_some());
    if let Some(c) = clahe {
        m.insert("clahe_clip", c.clip_limit);
        m.insert("clahe_tiles", format!("{}x{}", c.tile_rows, c.tile_cols));
    }
}

/// Reads the settings written by [`preprocessing_kv`].
pub(crate) fn preprocessing_from_kv(m: &KvMap) -> Result<Option<ClaheSpec>> {
    let mut sub = KvMap::default();
    for key in ["clahe", "clahe_clip", "clahe_tiles"] {
        if let Some(v) = m.get(key) {
            sub.insert(key, v);
        }
    }
    Ok(TrainConfig::from_kv(sub)?.clahe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.plateau_patience), (1e-4, 16, 3));
        assert_eq!(c.plateau_factor, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            optimizer: OptimizerKind::RectifiedAdam,
            lr: 3e-4,
            clahe: Some(ClaheSpec::default()),
            checkpoint: Some("out/best.ckpt".into()),
            manifest: Some("data/split.tsv".into()),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv(c.to_kv()).unwrap(), c);
        let mut m = KvMap::default();
        preprocessing_kv(c.clahe.as_ref(), &mut m);
        assert_eq!(preprocessing_from_kv(&m).unwrap(), c.clahe);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "batch_size = 0",
            "lr = -1",
            "lr = nan",
            "bogus = 1",
            "optimizer = sgd",
        ] {
            assert!(
                TrainConfig::from_kv(KvMap::parse(text).unwrap()).is_err(),
                "{text}"
            );
        }
        assert!(TrainConfig::from_kv(KvMap::parse("lr = 0").unwrap()).is_ok());
    }
}
