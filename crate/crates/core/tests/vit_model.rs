mod common;

use approx::assert_abs_diff_eq;
use common::{channel_image, gradcheck_config, rng, uniform_vec};
use proptest::prelude::*;
use xray_vit::tensor::Tensor;
use xray_vit::vit::{
    add_class_and_position, encoder_block, multi_head_attention, param_count, patch_embed,
    patchify, shape_table, ViT, ViTConfig, ViTParams,
};

fn tiny_param_config() -> ViTConfig {
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

/// Parameter count written out array by array, independent of the library's
/// shape table.
fn enumerate_params(c: &ViTConfig) -> usize {
    let (d, m) = (c.hidden_dim, c.mlp_dim);
    let patch = c.patch_size * c.patch_size * c.in_channels;
    let seq = (c.image_size / c.patch_size).pow(2) + 1;
    let mut arrays: Vec<usize> = vec![patch * d, d, d, seq * d];
    for _ in 0..c.num_layers {
        arrays.extend([d, d, d * 3 * d, 3 * d, d * d, d, d, d, d * m, m, m * d, d]);
    }
    arrays.extend([d, d, d, 1]);
    arrays.into_iter().sum()
}

#[test]
fn patch_counts() {
    let c = ViTConfig::vit_b32();
    assert_eq!(c.num_patches(), 49);
    assert_eq!(c.seq_len(), 50);
    let mut one = ViTConfig::vit_b32();
    one.image_size = 32;
    assert_eq!(one.num_patches(), 1);
}

#[test]
fn mean_filter_projection_gives_patch_means() {
    let mut c = gradcheck_config();
    c.hidden_dim = 4;
    c.num_heads = 1;
    let params = ViTParams::init(&c, 0).unwrap();
    params
        .patch_weight
        .data_mut()
        .fill(1.0 / c.patch_dim() as f64);
    params.patch_bias.data_mut().fill(0.0);
    let mut r = rng(4);
    let px = uniform_vec(&mut r, 8 * 8 * 3, 0.0, 1.0);
    let img = channel_image(8, |x, y, ch| px[(y * 8 + x) * 3 + ch]);
    let out = patch_embed(&[img], &params, &c).unwrap();
    assert_eq!(out.shape(), &[1, 4, 4]);
    let out = out.to_vec();
    for py in 0..2 {
        for px_ in 0..2 {
            let mut sum = 0.0;
            for y in py * 4..py * 4 + 4 {
                for x in px_ * 4..px_ * 4 + 4 {
                    for ch in 0..3 {
                        sum += px[(y * 8 + x) * 3 + ch];
                    }
                }
            }
            let mean = sum / 48.0;
            for k in 0..4 {
                assert_abs_diff_eq!(out[(py * 2 + px_) * 4 + k], mean, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn extent_mismatch_is_rejected() {
    let c = gradcheck_config();
    let params = ViTParams::init(&c, 0).unwrap();
    let img = channel_image(16, |_, _, _| 0.5);
    assert!(patch_embed(&[img], &params, &c).is_err());
}

#[test]
fn class_token_and_positions() {
    let c = ViTConfig {
        image_size: 224,
        patch_size: 32,
        hidden_dim: 4,
        mlp_dim: 4,
        num_heads: 1,
        num_layers: 1,
        ..ViTConfig::vit_b32()
    };
    let params = ViTParams::init(&c, 0).unwrap();
    params
        .class_token
        .data_mut()
        .copy_from_slice(&[9.0, 8.0, 7.0, 6.0]);
    let mut r = rng(1);
    let x = Tensor::new(uniform_vec(&mut r, 2 * 49 * 4, -1.0, 1.0), &[2, 49, 4]).unwrap();
    let out = add_class_and_position(&x, &params).unwrap();
    assert_eq!(out.shape(), &[2, 50, 4]);
    // zero position table: rows 1.. reproduce the input
    let (o, xv) = (out.to_vec(), x.to_vec());
    for b in 0..2 {
        assert_eq!(&o[b * 200..b * 200 + 4], &[9.0, 8.0, 7.0, 6.0]);
        assert_eq!(&o[b * 200 + 4..(b + 1) * 200], &xv[b * 196..(b + 1) * 196]);
    }
    // shared position table across the batch
    let pos = uniform_vec(&mut r, 200, -1.0, 1.0);
    params.position_embeddings.data_mut().copy_from_slice(&pos);
    let zeros = Tensor::zeros(&[2, 49, 4]);
    let out = add_class_and_position(&zeros, &params).unwrap().to_vec();
    assert_eq!(&out[..200], &out[200..]);
}

#[test]
fn zeroed_branches_make_block_identity() {
    let c = gradcheck_config();
    let params = ViTParams::init(&c, 3).unwrap();
    let layer = &params.layers[0];
    for t in [
        &layer.attn_out_weight,
        &layer.attn_out_bias,
        &layer.mlp_fc2_weight,
        &layer.mlp_fc2_bias,
    ] {
        t.data_mut().fill(0.0);
    }
    let mut r = rng(2);
    let x = Tensor::new(uniform_vec(&mut r, 2 * 5 * 8, -2.0, 2.0), &[2, 5, 8]).unwrap();
    let y = encoder_block(&x, layer, &c).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn block_rejects_wrong_width() {
    let c = gradcheck_config();
    let params = ViTParams::init(&c, 3).unwrap();
    let x = Tensor::zeros(&[1, 5, 6]);
    assert!(encoder_block(&x, &params.layers[0], &c).is_err());
}

fn matvec(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|j| {
            x.iter()
                .enumerate()
                .map(|(i, xi)| xi * w[i * cols + j])
                .sum()
        })
        .collect()
}

#[test]
fn single_token_attention_is_value_projection() {
    let c = gradcheck_config();
    let params = ViTParams::init(&c, 8).unwrap();
    let layer = &params.layers[0];
    let mut r = rng(6);
    for t in [&layer.qkv_bias, &layer.attn_out_bias] {
        let n = t.numel();
        t.data_mut()
            .copy_from_slice(&uniform_vec(&mut r, n, -0.5, 0.5));
    }
    let h = uniform_vec(&mut r, 8, -1.0, 1.0);
    let (out, weights) =
        multi_head_attention(&Tensor::new(h.clone(), &[1, 1, 8]).unwrap(), layer, 2).unwrap();
    assert_eq!(weights.to_vec(), vec![1.0, 1.0]);

    let qkv = matvec(&h, &layer.qkv_weight.to_vec(), 24);
    let bias = layer.qkv_bias.to_vec();
    let v: Vec<f64> = (16..24).map(|j| qkv[j] + bias[j]).collect();
    let mut expected = matvec(&v, &layer.attn_out_weight.to_vec(), 8);
    for (e, b) in expected.iter_mut().zip(layer.attn_out_bias.to_vec()) {
        *e += b;
    }
    for (a, b) in out.to_vec().iter().zip(&expected) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn two_token_attention_matches_hand_computation() {
    let c = ViTConfig {
        image_size: 4,
        patch_size: 4,
        hidden_dim: 2,
        mlp_dim: 2,
        num_heads: 1,
        num_layers: 1,
        ..ViTConfig::vit_b32()
    };
    let params = ViTParams::init(&c, 0).unwrap();
    let layer = &params.layers[0];
    // Wq = I, Wk = [[2, 0], [0, 1]], Wv = [[1, 2], [3, 4]], stored input-major as (2, 6)
    layer
        .qkv_weight
        .data_mut()
        .copy_from_slice(&[1.0, 0.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 3.0, 4.0]);
    layer.qkv_bias.data_mut().fill(0.0);
    layer
        .attn_out_weight
        .data_mut()
        .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    layer.attn_out_bias.data_mut().copy_from_slice(&[0.5, -0.5]);
    let x = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[1, 2, 2]).unwrap();
    let (out, weights) = multi_head_attention(&x, layer, 1).unwrap();

    // q1 = (1, 0), q2 = (0, 1); k1 = (2, 0), k2 = (0, 1); v1 = (1, 2), v2 = (3, 4)
    // scores / sqrt(2): row 1 = (2, 0) / sqrt 2, row 2 = (0, 1) / sqrt 2
    let s = 2f64.sqrt();
    let row = |a: f64, b: f64| {
        let (ea, eb) = (a.exp(), b.exp());
        (ea / (ea + eb), eb / (ea + eb))
    };
    let (w11, w12) = row(2.0 / s, 0.0);
    let (w21, w22) = row(0.0, 1.0 / s);
    let expected = [
        w11 * 1.0 + w12 * 3.0 + 0.5,
        w11 * 2.0 + w12 * 4.0 - 0.5,
        w21 * 1.0 + w22 * 3.0 + 0.5,
        w21 * 2.0 + w22 * 4.0 - 0.5,
    ];
    for (a, b) in weights.to_vec().iter().zip([w11, w12, w21, w22]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
    }
    for (a, b) in out.to_vec().iter().zip(expected) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
    }
}

#[test]
fn zero_head_gives_one_half() {
    let c = gradcheck_config();
    let model = ViT::new(c, 1).unwrap();
    model.params.head_weight.data_mut().fill(0.0);
    model.params.head_bias.data_mut().fill(0.0);
    let mut r = rng(0);
    let imgs: Vec<_> = (0..4)
        .map(|_| {
            let px = uniform_vec(&mut r, 192, 0.0, 1.0);
            channel_image(8, |x, y, ch| px[(y * 8 + x) * 3 + ch])
        })
        .collect();
    assert!(model
        .forward_classify(&imgs)
        .unwrap()
        .iter()
        .all(|&p| p == 0.5));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in 0..3 {
        for (name, err) in common::vit_gradcheck(seed) {
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}

#[test]
fn param_count_oracles() {
    let tiny = tiny_param_config();
    let table: usize = shape_table(&tiny)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    assert_eq!(param_count(&tiny), enumerate_params(&tiny));
    assert_eq!(param_count(&tiny), table);
    assert_eq!(ViTParams::init(&tiny, 0).unwrap().numel(), table);

    let b32 = ViTConfig::vit_b32();
    assert_eq!(param_count(&b32), enumerate_params(&b32));
    assert_eq!(param_count(&b32), 87_456_001);
}

fn model_and_patches(seed: u64, batch: usize) -> (ViT, Tensor) {
    let c = gradcheck_config();
    let model = ViT::new(c, seed).unwrap();
    let mut r = rng(seed + 100);
    for t in [&model.params.position_embeddings, &model.params.class_token] {
        let n = t.numel();
        t.data_mut()
            .copy_from_slice(&uniform_vec(&mut r, n, -0.5, 0.5));
    }
    let imgs: Vec<_> = (0..batch)
        .map(|_| {
            let px = uniform_vec(&mut r, 192, 0.0, 1.0);
            channel_image(8, |x, y, ch| px[(y * 8 + x) * 3 + ch])
        })
        .collect();
    let patches = patchify(&imgs, &c).unwrap();
    (model, patches)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sequence_length_formula(side in 1usize..8, patch in 1usize..6) {
        let c = ViTConfig { image_size: side * patch, patch_size: patch, ..ViTConfig::vit_b32() };
        prop_assert_eq!(c.seq_len(), (c.image_size / c.patch_size).pow(2) + 1);
    }

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000) {
        let (model, patches) = model_and_patches(seed, 2);
        for map in model.attention_maps(&patches).unwrap() {
            let s = map.shape()[2];
            for row in map.to_vec().chunks(s) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patch_permutation_with_matched_positions_is_invariant(seed in 0u64..1000, perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let (model, patches) = model_and_patches(seed, 2);
        let before = model.forward_logits(&patches, None).unwrap().to_vec();

        let (n, p) = (4, patches.shape()[2]);
        let src = patches.to_vec();
        let mut permuted = vec![0.0; src.len()];
        for b in 0..2 {
            for (i, &j) in perm.iter().enumerate() {
                permuted[(b * n + i) * p..(b * n + i + 1) * p].copy_from_slice(&src[(b * n + j) * p..(b * n + j + 1) * p]);
            }
        }
        let d = 8;
        let pos = model.params.position_embeddings.to_vec();
        let mut new_pos = pos.clone();
        for (i, &j) in perm.iter().enumerate() {
            new_pos[(i + 1) * d..(i + 2) * d].copy_from_slice(&pos[(j + 1) * d..(j + 2) * d]);
        }
        model.params.position_embeddings.data_mut().copy_from_slice(&new_pos);
        let after = model
            .forward_logits(&Tensor::new(permuted, patches.shape()).unwrap(), None)
            .unwrap()
            .to_vec();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn probabilities_in_open_interval_and_threshold_matches_sign(seed in 0u64..1000) {
        let (model, patches) = model_and_patches(seed, 3);
        let logits = model.forward_logits(&patches, None).unwrap().to_vec();
        let probs = model.predict(&patches).unwrap().to_vec();
        for (l, p) in logits.iter().zip(&probs) {
            prop_assert!(*p > 0.0 && *p < 1.0);
            prop_assert_eq!(*p >= 0.5, *l >= 0.0);
        }
    }
}
