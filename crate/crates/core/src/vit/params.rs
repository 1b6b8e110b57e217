//! Learnable arrays of the classifier and their closed-form shape table.
//!
//! With `P` = patch_dim, `D` = hidden_dim, `M` = mlp_dim, `S` = seq_len and
//! `L` = num_layers:
//!
//! | name                           | shape      |
//! |--------------------------------|------------|
//! | `patch_embed.weight`           | `[P, D]`   |
//! | `patch_embed.bias`             | `[D]`      |
//! | `class_token`                  | `[D]`      |
//! | `position_embeddings`          | `[S, D]`   |
//! | `layers.{i}.ln1.gamma` / `beta`| `[D]`      |
//! | `layers.{i}.attn.qkv.weight`   | `[D, 3D]`  |
//! | `layers.{i}.attn.qkv.bias`     | `[3D]`     |
//! | `layers.{i}.attn.out.weight`   | `[D, D]`   |
//! | `layers.{i}.attn.out.bias`     | `[D]`      |
//! | `layers.{i}.ln2.gamma` / `beta`| `[D]`      |
//! | `layers.{i}.mlp.fc1.weight`    | `[D, M]`   |
//! | `layers.{i}.mlp.fc1.bias`      | `[M]`      |
//! | `layers.{i}.mlp.fc2.weight`    | `[M, D]`   |
//! | `layers.{i}.mlp.fc2.bias`      | `[D]`      |
//! | `final_ln.gamma` / `beta`      | `[D]`      |
//! | `head.weight`                  | `[D, 1]`   |
//! | `head.bias`                    | `[1]`      |
//!
//! Weights are stored input-major so that a row vector times the weight is the
//! projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ViTConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub qkv_weight: Tensor,
    pub qkv_bias: Tensor,
    pub attn_out_weight: Tensor,
    pub attn_out_bias: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_fc1_weight: Tensor,
    pub mlp_fc1_bias: Tensor,
    pub mlp_fc2_weight: Tensor,
    pub mlp_fc2_bias: Tensor,
}

impl LayerParams {
    fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("ln1.gamma", &self.ln1_gamma),
            ("ln1.beta", &self.ln1_beta),
            ("attn.qkv.weight", &self.qkv_weight),
            ("attn.qkv.bias", &self.qkv_bias),
            ("attn.out.weight", &self.attn_out_weight),
            ("attn.out.bias", &self.attn_out_bias),
            ("ln2.gamma", &self.ln2_gamma),
            ("ln2.beta", &self.ln2_beta),
            ("mlp.fc1.weight", &self.mlp_fc1_weight),
            ("mlp.fc1.bias", &self.mlp_fc1_bias),
            ("mlp.fc2.weight", &self.mlp_fc2_weight),
            ("mlp.fc2.bias", &self.mlp_fc2_bias),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ViTParams {
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub class_token: Tensor,
    pub position_embeddings: Tensor,
    pub layers: Vec<LayerParams>,
    pub final_ln_gamma: Tensor,
    pub final_ln_beta: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

fn layer_entries(c: &ViTConfig) -> [(&'static str, Vec<usize>, Init); 12] {
    let (d, m) = (c.hidden_dim, c.mlp_dim);
    [
        ("ln1.gamma", vec![d], Init::Ones),
        ("ln1.beta", vec![d], Init::Zeros),
        ("attn.qkv.weight", vec![d, 3 * d], Init::TruncNormal),
        ("attn.qkv.bias", vec![3 * d], Init::Zeros),
        ("attn.out.weight", vec![d, d], Init::TruncNormal),
        ("attn.out.bias", vec![d], Init::Zeros),
        ("ln2.gamma", vec![d], Init::Ones),
        ("ln2.beta", vec![d], Init::Zeros),
        ("mlp.fc1.weight", vec![d, m], Init::TruncNormal),
        ("mlp.fc1.bias", vec![m], Init::Zeros),
        ("mlp.fc2.weight", vec![m, d], Init::TruncNormal),
        ("mlp.fc2.bias", vec![d], Init::Zeros),
    ]
}

fn entries(c: &ViTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.hidden_dim;
    let mut out = vec![
        (
            "patch_embed.weight".to_string(),
            vec![c.patch_dim(), d],
            Init::TruncNormal,
        ),
        ("patch_embed.bias".to_string(), vec![d], Init::Zeros),
        ("class_token".to_string(), vec![d], Init::Zeros),
        (
            "position_embeddings".to_string(),
            vec![c.seq_len(), d],
            Init::Zeros,
        ),
    ];
    for i in 0..c.num_layers {
        for (name, shape, init) in layer_entries(c) {
            out.push((format!("layers.{i}.{name}"), shape, init));
        }
    }
    out.extend([
        ("final_ln.gamma".to_string(), vec![d], Init::Ones),
        ("final_ln.beta".to_string(), vec![d], Init::Zeros),
        (
            "head.weight".to_string(),
            vec![d, c.num_classes],
            Init::TruncNormal,
        ),
        ("head.bias".to_string(), vec![c.num_classes], Init::Zeros),
    ]);
    out
}

/// Every parameter name with its shape, in canonical order.
pub fn shape_table(config: &ViTConfig) -> Vec<(String, Vec<usize>)> {
    entries(config)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}

/// Number of scalars in one encoder block: `4D² + 2DM + 9D + M`.
pub fn per_layer_param_count(config: &ViTConfig) -> usize {
    let (d, m) = (config.hidden_dim, config.mlp_dim);
    4 * d * d + 2 * d * m + 9 * d + m
}

/// Total number of learnable scalars, in closed form.
pub fn param_count(config: &ViTConfig) -> usize {
    let d = config.hidden_dim;
    let c = config.num_classes;
    config.patch_dim() * d + d // patch projection
        + d // class token
        + config.seq_len() * d // position embeddings
        + config.num_layers * per_layer_param_count(config)
        + 2 * d // final layernorm
        + d * c + c // head
}

/// Parameter values detached from any graph, in shape-table order.
pub type NamedArrays = Vec<(String, Vec<usize>, Vec<f64>)>;

fn truncated_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STD {
                break v;
            }
        })
        .collect()
}

impl ViTParams {
    /// Truncated-normal (std 0.02, cut at two standard deviations) weights;
    /// zero biases, class token and position embeddings; unit LayerNorm gains.
    pub fn init(config: &ViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrays = entries(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n = shape.iter().product();
                let data = match init {
                    Init::TruncNormal => truncated_normal(&mut rng, n),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                (name, shape, data)
            })
            .collect();
        Self::from_named(config, arrays)
    }

    /// Rebuilds parameters from named arrays. Names and shapes must match the
    /// shape table of `config` exactly.
    pub fn from_named(config: &ViTConfig, arrays: NamedArrays) -> Result<Self> {
        let table = shape_table(config);
        if table.len() != arrays.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter arrays, got {}",
                table.len(),
                arrays.len()
            )));
        }
        let mut tensors = Vec::with_capacity(arrays.len());
        for ((want_name, want_shape), (name, shape, data)) in table.iter().zip(arrays) {
            if *want_name != name || *want_shape != shape {
                return Err(Error::InvalidArgument(format!(
                    "parameter {name} {shape:?} does not match expected {want_name} {want_shape:?}"
                )));
            }
            tensors.push(Tensor::param(data, &shape)?);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let patch_weight = next();
        let patch_bias = next();
        let class_token = next();
        let position_embeddings = next();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1_gamma: next(),
                ln1_beta: next(),
                qkv_weight: next(),
                qkv_bias: next(),
                attn_out_weight: next(),
                attn_out_bias: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                mlp_fc1_weight: next(),
                mlp_fc1_bias: next(),
                mlp_fc2_weight: next(),
                mlp_fc2_bias: next(),
            })
            .collect();
        Ok(Self {
            patch_weight,
            patch_bias,
            class_token,
            position_embeddings,
            layers,
            final_ln_gamma: next(),
            final_ln_beta: next(),
            head_weight: next(),
            head_bias: next(),
        })
    }

    /// All parameters with their names, in shape-table order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &self.patch_weight),
            ("patch_embed.bias".to_string(), &self.patch_bias),
            ("class_token".to_string(), &self.class_token),
            ("position_embeddings".to_string(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_ln.gamma".to_string(), &self.final_ln_gamma),
            ("final_ln.beta".to_string(), &self.final_ln_beta),
            ("head.weight".to_string(), &self.head_weight),
            ("head.bias".to_string(), &self.head_bias),
        ]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Copies every array out of the graph.
    pub fn to_named(&self) -> NamedArrays {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
            .collect()
    }

    pub fn zero_grad(&self) {
        self.tensors().iter().for_each(|t| t.zero_grad());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ViTConfig {
        ViTConfig {
            image_size: 32,
            patch_size: 16,
            in_channels: 3,
            hidden_dim: 8,
            mlp_dim: 16,
            num_heads: 2,
            num_layers: 1,
            num_classes: 1,
            layernorm_eps: 1e-6,
            dropout: 0.0,
        }
    }

    #[test]
    fn init_matches_table() {
        let c = tiny();
        let p = ViTParams::init(&c, 1).unwrap();
        let names: Vec<_> = p
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        assert_eq!(names, shape_table(&c));
        assert_eq!(p.numel(), param_count(&c));
    }

    #[test]
    fn init_values() {
        let p = ViTParams::init(&tiny(), 3).unwrap();
        assert!(p.class_token.to_vec().iter().all(|&v| v == 0.0));
        assert!(p.position_embeddings.to_vec().iter().all(|&v| v == 0.0));
        assert!(p.final_ln_gamma.to_vec().iter().all(|&v| v == 1.0));
        let w = p.patch_weight.to_vec();
        assert!(w.iter().all(|v| v.abs() <= 0.04));
        assert!(w.iter().any(|&v| v != 0.0));
        let again = ViTParams::init(&tiny(), 3).unwrap();
        assert_eq!(again.to_named(), p.to_named());
    }

    #[test]
    fn doubling_layers_is_linear() {
        let mut c = tiny();
        c.num_layers = 3;
        let base = param_count(&c);
        c.num_layers = 6;
        assert_eq!(param_count(&c), base + 3 * per_layer_param_count(&c));
    }

    #[test]
    fn from_named_rejects_wrong_shapes() {
        let c = tiny();
        let mut arrays = ViTParams::init(&c, 0).unwrap().to_named();
        arrays[0].1 = vec![1, 1];
        assert!(ViTParams::from_named(&c, arrays).is_err());
    }
}
