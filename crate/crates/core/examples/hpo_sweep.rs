//! A short random search over optimizer and learning rate. Trials train in
//! parallel and come back ranked by validation accuracy.

use xray_vit::hpo::{results_text, run_search, sample_trials};
use xray_vit::image::GrayImage;
use xray_vit::train::{Dataset, TrainConfig};
use xray_vit::vit::ViTConfig;
use xray_vit::Result;

fn data(n: usize, vit: &ViTConfig) -> Result<Dataset> {
    let images = (0..n)
        // COVID samples are brighter overall, which any trial can pick up
        .map(|i| {
            GrayImage::from_fn(16, 16, |x, y| {
                ((x * 7 + y * 11 + i * 5) % 64) as u8 + if i % 2 == 0 { 150 } else { 40 }
            })
        })
        .collect();
    let targets = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    Dataset::new(images, targets, vit, None)
}

fn main() -> Result<()> {
    let vit = ViTConfig {
        image_size: 16,
        patch_size: 8,
        hidden_dim: 16,
        mlp_dim: 16,
        num_heads: 2,
        num_layers: 1,
        ..ViTConfig::vit_b32()
    };
    let base = TrainConfig {
        vit,
        batch_size: 4,
        // short trials: let every one run its full budget at a fixed lr
        plateau_patience: usize::MAX,
        early_stop_patience: usize::MAX,
        ..TrainConfig::default()
    };
    let mut trials = sample_trials(6, 11)?;
    for t in &mut trials {
        t.epochs = 20;
    }
    let records = run_search(&trials, &base, &data(16, &vit)?, &data(8, &vit)?);
    print!("{}", results_text(&records));
    Ok(())
}
