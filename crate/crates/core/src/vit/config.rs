use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{KvMap, KvReader};

/// Architecture hyperparameters of the classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Number of output logits. The binary head uses one.
    pub num_classes: usize,
    pub layernorm_eps: f64,
    /// Dropout rate applied during training after the embeddings, the
    /// attention projection and the MLP. Zero disables it.
    pub dropout: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::vit_b32()
    }
}

impl ViTConfig {
    /// ViT-B/32 at 224x224 with a single-logit head.
    pub fn vit_b32() -> Self {
        Self {
            image_size: 224,
            patch_size: 32,
            in_channels: 3,
            hidden_dim: 768,
            mlp_dim: 3072,
            num_heads: 12,
            num_layers: 12,
            num_classes: 1,
            layernorm_eps: 1e-6,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if [
            self.image_size,
            self.patch_size,
            self.in_channels,
            self.hidden_dim,
            self.mlp_dim,
            self.num_heads,
            self.num_layers,
        ]
        .contains(&0)
        {
            return bad(format!("all ViT extents must be positive: {self:?}"));
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_classes != 1 {
            return bad(format!(
                "only the single-logit binary head is supported, got num_classes = {}",
                self.num_classes
            ));
        }
        if !(self.layernorm_eps > 0.0) {
            return bad(format!(
                "layernorm_eps must be positive, got {}",
                self.layernorm_eps
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    /// Patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Length of one flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub(crate) fn take_from(r: &mut KvReader, base: ViTConfig) -> Result<Self> {
        let cfg = Self {
            image_size: r.take_or("image_size", base.image_size)?,
            patch_size: r.take_or("patch_size", base.patch_size)?,
            in_channels: r.take_or("in_channels", base.in_channels)?,
            hidden_dim: r.take_or("hidden_dim", base.hidden_dim)?,
            mlp_dim: r.take_or("mlp_dim", base.mlp_dim)?,
            num_heads: r.take_or("num_heads", base.num_heads)?,
            num_layers: r.take_or("num_layers", base.num_layers)?,
            num_classes: r.take_or("num_classes", base.num_classes)?,
            layernorm_eps: r.take_or("layernorm_eps", base.layernorm_eps)?,
            dropout: r.take_or("dropout", base.dropout)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(map: KvMap) -> Result<Self> {
        let mut r = map.reader();
        let cfg = Self::take_from(&mut r, Self::vit_b32())?;
        r.finish()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvMap::read(path)?)
    }

    pub fn write_kv(&self, m: &mut KvMap) {
        m.insert("image_size", self.image_size);
        m.insert("patch_size", self.patch_size);
        m.insert("in_channels", self.in_channels);
        m.insert("hidden_dim", self.hidden_dim);
        m.insert("mlp_dim", self.mlp_dim);
        m.insert("num_heads", self.num_heads);
        m.insert("num_layers", self.num_layers);
        m.insert("num_classes", self.num_classes);
        m.insert("layernorm_eps", self.layernorm_eps);
        m.insert("dropout", self.dropout);
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::default();
        self.write_kv(&mut m);
        m
    }
}
