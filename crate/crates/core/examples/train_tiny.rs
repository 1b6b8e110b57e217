//! Trains a tiny ViT on synthetic two-class images and evaluates it.
//! COVID samples carry a bright block at the top left, the rest at the
//! bottom right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray_vit::image::GrayImage;
use xray_vit::train::{evaluate, train, Dataset, TrainConfig};
use xray_vit::vit::ViTConfig;
use xray_vit::Result;

fn synthetic(n: usize, seed: u64) -> (Vec<GrayImage>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let covid = i % 2 == 0;
            let noise: Vec<u8> = (0..256).map(|_| rng.random_range(0..60)).collect();
            let (ox, oy) = (rng.random_range(0..4), rng.random_range(0..4));
            let img = GrayImage::from_fn(16, 16, |x, y| {
                let (bx, by) = if covid { (ox, oy) } else { (8 + ox, 8 + oy) };
                if (bx..bx + 4).contains(&x) && (by..by + 4).contains(&y) {
                    230
                } else {
                    noise[y * 16 + x]
                }
            });
            (img, if covid { 1.0 } else { 0.0 })
        })
        .unzip()
}

fn main() -> Result<()> {
    let vit = ViTConfig {
        image_size: 16,
        patch_size: 8,
        hidden_dim: 16,
        mlp_dim: 32,
        num_heads: 2,
        num_layers: 1,
        ..ViTConfig::vit_b32()
    };
    let config = TrainConfig {
        vit,
        lr: 1e-3,
        batch_size: 4,
        max_epochs: 30,
        plateau_patience: 6,
        early_stop_patience: 10,
        seed: 1,
        ..TrainConfig::default()
    };
    let split = |n, seed| -> Result<Dataset> {
        let (images, targets) = synthetic(n, seed);
        Dataset::new(images, targets, &vit, None)
    };
    let (train_set, val_set, test_set) = (split(32, 1)?, split(12, 2)?, split(12, 3)?);

    let out = train(&config, &train_set, &val_set)?;
    for e in &out.log.epochs {
        println!(
            "epoch {:2} loss {:.4} train_acc {:.3} val_acc {:.3} lr {:.1e}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy, e.lr
        );
    }
    println!(
        "best epoch {} (val_acc {:.3})",
        out.log.best_epoch, out.log.best_val_accuracy
    );

    let best = xray_vit::vit::ViT::from_params(
        vit,
        xray_vit::vit::ViTParams::from_named(&vit, out.best_params)?,
    )?;
    print!("{}", evaluate(&best, &test_set, 8)?.to_text());
    Ok(())
}
