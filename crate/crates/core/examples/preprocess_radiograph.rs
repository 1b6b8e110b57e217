//! Runs one synthetic radiograph through CLAHE, a seeded augmentation draw,
//! resizing and channel stacking, writing each stage as PGM.
//!
//! ```text
//! cargo run --example preprocess_radiograph -- [OUT_DIR]
//! ```

use std::path::PathBuf;

use xray_vit::image::{clahe, save_pgm, stack_channels, ClaheSpec, GrayImage, PreprocessConfig};
use xray_vit::Result;

fn main() -> Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "preprocess_out".into()),
    );
    std::fs::create_dir_all(&out).map_err(|e| xray_vit::Error::InvalidArgument(e.to_string()))?;

    // a low-contrast "chest": two dim lung fields on a grey background
    let src = GrayImage::from_fn(96, 96, |x, y| {
        let lung =
            |cx: f64| ((x as f64 - cx).powi(2) / 400.0 + (y as f64 - 48.0).powi(2) / 1200.0) < 1.0;
        let base = if lung(30.0) || lung(66.0) { 90 } else { 120 };
        base + ((x * 7 + y * 13) % 11) as u8
    });
    save_pgm(&out.join("0_source.pgm"), &src)?;

    let enhanced = clahe(&src, &ClaheSpec::default())?;
    save_pgm(&out.join("1_clahe.pgm"), &enhanced)?;

    let cfg = PreprocessConfig::default();
    let augmented = cfg.augment_and_enhance(&src, 0, (224, 224))?;
    save_pgm(&out.join("2_augmented_224.pgm"), &augmented)?;

    let rgb = stack_channels(&cfg.enhance(&src, (224, 224))?);
    let spread = |g: &GrayImage| {
        let (lo, hi) = g
            .pixels()
            .iter()
            .fold((255, 0), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        hi - lo
    };
    println!(
        "intensity range: source {}, after CLAHE {}",
        spread(&src),
        spread(&enhanced)
    );
    println!(
        "model input: {}x{}x3, first pixel {:?}",
        rgb.width(),
        rgb.height(),
        rgb.pixel(0, 0)
    );
    println!("stages written to {}", out.display());
    Ok(())
}
