//! Saves a model with metadata, loads it back, and checks that predictions
//! are bit-identical.

use xray_vit::image::{stack_channels, GrayImage};
use xray_vit::kv::KvMap;
use xray_vit::train::{load_checkpoint, save_checkpoint};
use xray_vit::vit::{ViT, ViTConfig};
use xray_vit::Result;

fn main() -> Result<()> {
    let config = ViTConfig {
        image_size: 16,
        patch_size: 4,
        hidden_dim: 12,
        mlp_dim: 24,
        num_heads: 3,
        num_layers: 2,
        ..ViTConfig::vit_b32()
    };
    let model = ViT::new(config, 5)?;
    let mut meta = KvMap::default();
    meta.insert("note", "example");

    let dir = tempfile::tempdir().map_err(|e| xray_vit::Error::InvalidArgument(e.to_string()))?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model.params, &config, &meta)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);

    let ck = load_checkpoint(&path)?;
    let restored = ViT::from_params(ck.config, ck.params)?;
    let images = [stack_channels(&GrayImage::from_fn(16, 16, |x, y| {
        (x * 16 + y) as u8
    }))];
    let before = model.forward_classify(&images)?;
    let after = restored.forward_classify(&images)?;
    assert_eq!(before[0].to_bits(), after[0].to_bits());
    println!(
        "{size} bytes, meta note = {:?}, prediction {:.6} restored exactly",
        ck.meta.get("note"),
        after[0]
    );
    Ok(())
}
