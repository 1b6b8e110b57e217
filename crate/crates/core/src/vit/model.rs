//! Forward pass of the classifier.
//!
//! ```text
//! image -> patches -> linear projection -> [class; patches] + positions
//!       -> L x (x + MSA(LN(x)); y + MLP(LN(y))) -> LN -> class row -> head -> sigmoid
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LayerParams, ViTConfig, ViTParams};
use crate::error::{Error, Result};
use crate::image::ChannelImage;
use crate::tensor::Tensor;

const CHANNELS: usize = ChannelImage::CHANNELS;

/// Flattens one image into `num_patches` rows of `patch_dim` values.
///
/// Patches are taken row-major over the grid; inside a patch the layout is
/// `(row, column, channel)`.
pub fn patchify_one(img: &ChannelImage, config: &ViTConfig) -> Result<Vec<f64>> {
    if img.width() != config.image_size || img.height() != config.image_size {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{} but the model expects {}x{}",
            img.width(),
            img.height(),
            config.image_size,
            config.image_size
        )));
    }
    if config.in_channels != CHANNELS {
        return Err(Error::Config(format!(
            "images carry {CHANNELS} channels but in_channels = {}",
            config.in_channels
        )));
    }
    let (p, side) = (config.patch_size, config.patches_per_side());
    let data = img.data();
    let row_len = config.image_size * CHANNELS;
    let mut out = Vec::with_capacity(config.num_patches() * config.patch_dim());
    for py in 0..side {
        for px in 0..side {
            for dy in 0..p {
                let start = (py * p + dy) * row_len + px * p * CHANNELS;
                out.extend_from_slice(&data[start..start + p * CHANNELS]);
            }
        }
    }
    Ok(out)
}

/// Stacks patchified images into a constant `(batch, num_patches, patch_dim)`
/// tensor.
pub fn patchify(images: &[ChannelImage], config: &ViTConfig) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Empty("cannot patchify an empty batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * config.num_patches() * config.patch_dim());
    for img in images {
        data.extend(patchify_one(img, config)?);
    }
    Tensor::new(
        data,
        &[images.len(), config.num_patches(), config.patch_dim()],
    )
}

/// Linear projection of patch rows to the hidden width.
pub fn project_patches(patches: &Tensor, params: &ViTParams) -> Result<Tensor> {
    patches
        .matmul(&params.patch_weight)?
        .add_trailing(&params.patch_bias)
}

/// `(batch, num_patches, hidden_dim)` patch embeddings of an image batch.
pub fn patch_embed(
    images: &[ChannelImage],
    params: &ViTParams,
    config: &ViTConfig,
) -> Result<Tensor> {
    project_patches(&patchify(images, config)?, params)
}

/// Prepends the class token and adds the position table, giving
/// `(batch, seq_len, hidden_dim)`.
pub fn add_class_and_position(x: &Tensor, params: &ViTParams) -> Result<Tensor> {
    x.prepend_token(&params.class_token)?
        .add_trailing(&params.position_embeddings)
}

fn dropout(x: Tensor, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    x.mul(&Tensor::new(mask, x.shape())?)
}

fn seq_dims(x: &Tensor, hidden: usize, op: &'static str) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, s, d] if d == hidden => Ok((b, s)),
        _ => Err(Error::shape(op, x.shape(), &[0, 0, hidden])),
    }
}

/// Multi-head scaled dot-product self-attention with the output projection.
///
/// Returns the projected output `(batch, seq, hidden)` and the attention
/// weights `(batch * heads, seq, seq)`, whose rows each sum to one.
pub fn multi_head_attention(
    h: &Tensor,
    layer: &LayerParams,
    num_heads: usize,
) -> Result<(Tensor, Tensor)> {
    let hidden = layer.attn_out_bias.numel();
    let (b, s) = seq_dims(h, hidden, "attention")?;
    if num_heads == 0 || hidden % num_heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "hidden width {hidden} cannot be split across {num_heads} heads"
        )));
    }
    let hd = hidden / num_heads;
    let qkv = h.matmul(&layer.qkv_weight)?.add_trailing(&layer.qkv_bias)?;
    let split = |start: usize| -> Result<Tensor> {
        qkv.narrow_last(start, hidden)?
            .reshape(&[b, s, num_heads, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * num_heads, s, hd])
    };
    let (q, k, v) = (split(0)?, split(hidden)?, split(2 * hidden)?);
    let weights = q
        .matmul(&k.permute(&[0, 2, 1])?)?
        .scale(1.0 / (hd as f64).sqrt())
        .softmax_lastdim();
    let merged = weights
        .matmul(&v)?
        .reshape(&[b, num_heads, s, hd])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, s, hidden])?;
    let out = merged
        .matmul(&layer.attn_out_weight)?
        .add_trailing(&layer.attn_out_bias)?;
    Ok((out, weights))
}

/// Position-wise `fc2(gelu(fc1(h)))`.
pub fn mlp(h: &Tensor, layer: &LayerParams) -> Result<Tensor> {
    h.matmul(&layer.mlp_fc1_weight)?
        .add_trailing(&layer.mlp_fc1_bias)?
        .gelu()
        .matmul(&layer.mlp_fc2_weight)?
        .add_trailing(&layer.mlp_fc2_bias)
}

/// Pre-norm encoder block that also returns its attention weights.
pub fn encoder_block_traced(
    x: &Tensor,
    layer: &LayerParams,
    config: &ViTConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, Tensor)> {
    seq_dims(x, config.hidden_dim, "encoder_block")?;
    let eps = config.layernorm_eps;
    let h = x.layernorm(&layer.ln1_gamma, &layer.ln1_beta, eps)?;
    let (attn, weights) = multi_head_attention(&h, layer, config.num_heads)?;
    let y = x.add(&dropout(attn, config.dropout, rng.as_deref_mut())?)?;
    let h = y.layernorm(&layer.ln2_gamma, &layer.ln2_beta, eps)?;
    let out = y.add(&dropout(mlp(&h, layer)?, config.dropout, rng)?)?;
    Ok((out, weights))
}

/// `y = x + MSA(LN(x))`, then `y + MLP(LN(y))`.
pub fn encoder_block(x: &Tensor, layer: &LayerParams, config: &ViTConfig) -> Result<Tensor> {
    Ok(encoder_block_traced(x, layer, config, None)?.0)
}

/// Probabilities for a batch of images.
pub fn forward_classify(
    images: &[ChannelImage],
    params: &ViTParams,
    config: &ViTConfig,
) -> Result<Vec<f64>> {
    let model = ViTRef { config, params };
    Ok(model
        .logits(&patchify(images, config)?, None, None)?
        .sigmoid()
        .to_vec())
}

struct ViTRef<'a> {
    config: &'a ViTConfig,
    params: &'a ViTParams,
}

impl ViTRef<'_> {
    fn logits(
        &self,
        patches: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Tensor> {
        let (c, p) = (self.config, self.params);
        match *patches.shape() {
            [_, n, d] if n == c.num_patches() && d == c.patch_dim() => {}
            _ => {
                return Err(Error::shape(
                    "forward",
                    patches.shape(),
                    &[0, c.num_patches(), c.patch_dim()],
                ))
            }
        }
        let x = add_class_and_position(&project_patches(patches, p)?, p)?;
        let mut x = dropout(x, c.dropout, rng.as_deref_mut())?;
        for layer in &p.layers {
            let (next, weights) = encoder_block_traced(&x, layer, c, rng.as_deref_mut())?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(weights);
            }
            x = next;
        }
        x.layernorm(&p.final_ln_gamma, &p.final_ln_beta, c.layernorm_eps)?
            .select_token(0)?
            .matmul(&p.head_weight)?
            .add_trailing(&p.head_bias)
    }
}

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct ViT {
    pub config: ViTConfig,
    pub params: ViTParams,
}

impl ViT {
    pub fn new(config: ViTConfig, seed: u64) -> Result<Self> {
        let params = ViTParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: ViTConfig, params: ViTParams) -> Result<Self> {
        config.validate()?;
        if params.layers.len() != config.num_layers || params.numel() != super::param_count(&config)
        {
            return Err(Error::InvalidArgument(
                "parameters do not match the configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    fn view(&self) -> ViTRef<'_> {
        ViTRef {
            config: &self.config,
            params: &self.params,
        }
    }

    /// Logits `(batch, 1)` for patchified input `(batch, num_patches,
    /// patch_dim)`. Passing a generator enables dropout.
    pub fn forward_logits(
        &self,
        patches: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        self.view().logits(patches, dropout_rng, None)
    }

    /// Sigmoid probabilities `(batch, 1)` without dropout.
    pub fn predict(&self, patches: &Tensor) -> Result<Tensor> {
        Ok(self.forward_logits(patches, None)?.sigmoid())
    }

    pub fn forward_classify(&self, images: &[ChannelImage]) -> Result<Vec<f64>> {
        forward_classify(images, &self.params, &self.config)
    }

    /// Attention weights of every layer, each shaped `(batch * heads, seq,
    /// seq)` with head `h` of sample `b` at index `b * heads + h`.
    pub fn attention_maps(&self, patches: &Tensor) -> Result<Vec<Tensor>> {
        let mut trace = Vec::with_capacity(self.config.num_layers);
        self.view().logits(patches, None, Some(&mut trace))?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ViTConfig {
        ViTConfig {
            image_size: 8,
            patch_size: 4,
            in_channels: 3,
            hidden_dim: 8,
            mlp_dim: 12,
            num_heads: 2,
            num_layers: 2,
            num_classes: 1,
            layernorm_eps: 1e-6,
            dropout: 0.0,
        }
    }

    fn image(size: usize, f: impl Fn(usize, usize, usize) -> f64) -> ChannelImage {
        let mut data = Vec::new();
        for y in 0..size {
            for x in 0..size {
                for c in 0..CHANNELS {
                    data.push(f(x, y, c));
                }
            }
        }
        ChannelImage::new(size, size, data).unwrap()
    }

    #[test]
    fn patch_layout() {
        let c = tiny();
        let img = image(8, |x, y, ch| (y * 8 + x) as f64 / 64.0 + ch as f64 * 0.001);
        let rows = patchify_one(&img, &c).unwrap();
        assert_eq!(rows.len(), 4 * 48);
        // second patch starts at column 4 of row 0
        assert_eq!(rows[48], img.pixel(4, 0)[0]);
        // third patch starts at row 4
        assert_eq!(rows[96 + 3 * 3 + 1], img.pixel(3, 4)[1]);
        assert!(patchify_one(&image(16, |_, _, _| 0.0), &c).is_err());
    }

    #[test]
    fn forward_shapes_and_range() {
        let model = ViT::new(tiny(), 5).unwrap();
        let imgs: Vec<_> = (0..3)
            .map(|i| image(8, move |x, y, _| ((x * y + i) % 7) as f64 / 7.0))
            .collect();
        let probs = model.forward_classify(&imgs).unwrap();
        assert_eq!(probs.len(), 3);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        let maps = model
            .attention_maps(&patchify(&imgs, &model.config).unwrap())
            .unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].shape(), &[6, 5, 5]);
    }

    #[test]
    fn dropout_only_with_generator() {
        use rand::SeedableRng;
        let mut c = tiny();
        c.dropout = 0.5;
        let model = ViT::new(c, 2).unwrap();
        let patches = patchify(&[image(8, |x, _, _| x as f64 / 8.0)], &c).unwrap();
        let a = model.forward_logits(&patches, None).unwrap().to_vec();
        let b = model.forward_logits(&patches, None).unwrap().to_vec();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = model
            .forward_logits(&patches, Some(&mut rng))
            .unwrap()
            .to_vec();
        assert_ne!(a, d);
    }
}
