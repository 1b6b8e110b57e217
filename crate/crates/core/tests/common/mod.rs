#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray_vit::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference norm when both
/// vectors are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Checks the analytic gradient of `sum(op(inputs) ⊙ weights)` for every
/// input against central differences. Returns the worst relative error.
pub fn gradcheck_op(
    inputs: &[(Vec<f64>, Vec<usize>)],
    op: impl Fn(&[Tensor]) -> Tensor,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s).unwrap())
        .collect();
    let out = op(&params);
    let weights = Tensor::new(uniform_vec(rng, out.numel(), -1.0, 1.0), out.shape()).unwrap();
    out.mul(&weights).unwrap().sum().backward().unwrap();

    let mut worst: f64 = 0.0;
    for (i, (data, shape)) in inputs.iter().enumerate() {
        let analytic = params[i].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let numeric = central_difference(
            |x| {
                let consts: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (d, s))| {
                        if j == i {
                            Tensor::new(x.to_vec(), shape).unwrap()
                        } else {
                            Tensor::new(d.clone(), s).unwrap()
                        }
                    })
                    .collect();
                op(&consts).mul(&weights).unwrap().sum().item()
            },
            data,
            1e-5,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Image `(x, y, channel)` generator for a square channel-last image.
pub fn channel_image(
    size: usize,
    f: impl Fn(usize, usize, usize) -> f64,
) -> xray_vit::image::ChannelImage {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                data.push(f(x, y, c));
            }
        }
    }
    xray_vit::image::ChannelImage::new(size, size, data).unwrap()
}

/// Tiny configuration used by the end-to-end gradient checks.
pub fn gradcheck_config() -> xray_vit::vit::ViTConfig {
    xray_vit::vit::ViTConfig {
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

/// Compares the backpropagated gradient of the mean BCE loss of a randomly
/// initialized tiny ViT against central differences, for every parameter
/// group. Parameters are perturbed away from their initial values so that
/// zero-initialized groups are probed at a generic point.
pub fn vit_gradcheck(seed: u64) -> Vec<(String, f64)> {
    use xray_vit::tensor::bce_loss;
    use xray_vit::vit::{patchify, ViT};

    let config = gradcheck_config();
    let mut r = rng(seed);
    let model = ViT::new(config, seed).unwrap();
    for t in model.params.tensors() {
        let mut d = t.data_mut();
        for v in d.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let images: Vec<_> = (0..3)
        .map(|_| {
            let px = uniform_vec(&mut r, 8 * 8 * 3, 0.0, 1.0);
            channel_image(8, |x, y, c| px[(y * 8 + x) * 3 + c])
        })
        .collect();
    let labels = [1.0, 0.0, 1.0];
    let patches = patchify(&images, &config).unwrap();
    let loss = |m: &ViT| {
        bce_loss(
            &m.forward_logits(&patches, None).unwrap().sigmoid(),
            &labels,
        )
        .unwrap()
    };

    model.params.zero_grad();
    loss(&model).backward().unwrap();
    model
        .params
        .named()
        .into_iter()
        .map(|(name, t)| {
            let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
            let x0 = t.to_vec();
            let numeric = central_difference(
                |x| {
                    t.data_mut().copy_from_slice(x);
                    loss(&model).item()
                },
                &x0,
                1e-5,
            );
            t.data_mut().copy_from_slice(&x0);
            (name, relative_error(&analytic, &numeric))
        })
        .collect()
}

/// `n` seeded grayscale images in two classes: COVID samples (target 1) carry
/// a bright block in the upper-left quadrant, the others in the lower-right.
pub fn two_class_images(
    n: usize,
    size: usize,
    seed: u64,
) -> (Vec<xray_vit::image::GrayImage>, Vec<f64>) {
    let mut r = rng(seed);
    let q = size / 2;
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let noise: Vec<u8> = (0..size * size).map(|_| r.random_range(0..60)).collect();
            let (ox, oy) = (r.random_range(0..q / 2), r.random_range(0..q / 2));
            let img = xray_vit::image::GrayImage::from_fn(size, size, |x, y| {
                let (bx, by) = if positive { (ox, oy) } else { (q + ox, q + oy) };
                let inside = x >= bx && x < bx + q / 2 && y >= by && y < by + q / 2;
                if inside {
                    230
                } else {
                    noise[y * size + x]
                }
            });
            (img, if positive { 1.0 } else { 0.0 })
        })
        .unzip()
}

/// Configuration of the overfit-capacity check.
pub fn overfit_config() -> xray_vit::vit::ViTConfig {
    xray_vit::vit::ViTConfig {
        image_size: 32,
        patch_size: 8,
        in_channels: 3,
        hidden_dim: 32,
        mlp_dim: 64,
        num_heads: 2,
        num_layers: 2,
        num_classes: 1,
        layernorm_eps: 1e-6,
        dropout: 0.0,
    }
}

/// Trains the overfit configuration with Adam at lr 1e-3 on 16 synthetic
/// images, evaluating accuracy on the training set itself after every
/// epoch. Schedulers are disabled so the learning rate stays fixed. Returns
/// the first epoch reaching full training accuracy, if any.
pub fn overfit_epochs(seed: u64, max_epochs: usize) -> Option<usize> {
    use xray_vit::optim::OptimizerKind;
    use xray_vit::train::{train, Dataset, TrainConfig};

    let (images, targets) = two_class_images(16, 32, seed);
    let vit = overfit_config();
    let data = Dataset::new(images, targets, &vit, None).unwrap();
    let cfg = TrainConfig {
        vit,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        batch_size: 16,
        max_epochs,
        plateau_patience: usize::MAX,
        early_stop_patience: usize::MAX,
        seed,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, &data).unwrap();
    out.log
        .epochs
        .iter()
        .find(|e| e.val_accuracy == 1.0)
        .map(|e| e.epoch)
}

/// Writes `n` images per class from [`two_class_images`] as PGM files under
/// `root/covid` and `root/non_covid` and returns those directories.
pub fn write_class_dirs(
    root: &std::path::Path,
    n: usize,
    size: usize,
    seed: u64,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let covid = root.join("covid");
    let non_covid = root.join("non_covid");
    for d in [&covid, &non_covid] {
        std::fs::create_dir_all(d).unwrap();
    }
    let (images, targets) = two_class_images(2 * n, size, seed);
    for (i, (img, t)) in images.iter().zip(targets).enumerate() {
        let dir = if t == 1.0 { &covid } else { &non_covid };
        xray_vit::image::save_pgm(&dir.join(format!("img_{i:04}.pgm")), img).unwrap();
    }
    (covid, non_covid)
}

/// A small training config file for the command line, written to `path`.
pub fn write_train_config(
    path: &std::path::Path,
    manifest: &std::path::Path,
    checkpoint: &std::path::Path,
) {
    let text = format!(
        "image_size = 16\npatch_size = 8\nhidden_dim = 16\nmlp_dim = 16\nnum_heads = 2\nnum_layers = 1\n\
         lr = 1e-3\nbatch_size = 4\nmax_epochs = 4\nmanifest = {}\ncheckpoint = {}\n",
        manifest.display(),
        checkpoint.display()
    );
    std::fs::write(path, text).unwrap();
}
