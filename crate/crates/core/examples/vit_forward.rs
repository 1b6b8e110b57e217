//! Forward pass of a small ViT: patchify, classify, and read the class
//! token's attention over patches from the last layer.

use xray_vit::image::{stack_channels, GrayImage};
use xray_vit::vit::{param_count, patchify, ViT, ViTConfig};
use xray_vit::Result;

fn main() -> Result<()> {
    let config = ViTConfig {
        image_size: 32,
        patch_size: 8,
        hidden_dim: 32,
        mlp_dim: 64,
        num_heads: 4,
        num_layers: 2,
        ..ViTConfig::vit_b32()
    };
    println!(
        "{} patches of dim {}, sequence {}, {} parameters",
        config.num_patches(),
        config.patch_dim(),
        config.seq_len(),
        param_count(&config)
    );

    let images: Vec<_> = (0..3)
        .map(|i| {
            stack_channels(&GrayImage::from_fn(32, 32, |x, y| {
                ((x + y) * (i + 2) % 256) as u8
            }))
        })
        .collect();
    let model = ViT::new(config, 0)?;
    let probs = model.forward_classify(&images)?;
    println!("P(COVID) = {probs:.4?}");

    let patches = patchify(&images, &config)?;
    let maps = model.attention_maps(&patches)?;
    let last = maps.last().expect("at least one layer");
    let s = config.seq_len();
    // row 0 of head 0, image 0: where the class token looks
    let row: Vec<f64> = last.data()[1..s].to_vec();
    let side = config.patches_per_side();
    println!("class-token attention over the {side}x{side} patch grid (image 0, head 0):");
    for r in row.chunks(side) {
        println!(
            "  {}",
            r.iter()
                .map(|a| format!("{a:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(())
}
