//! Grows a minority class with seeded augmented copies until it matches the
//! majority count. Re-running with the same seed gives the same images.

use xray_vit::image::{augment_upsample, AugmentSpec, GrayImage};
use xray_vit::Result;

fn main() -> Result<()> {
    let minority: Vec<GrayImage> = (0..5)
        .map(|i| GrayImage::from_fn(32, 32, move |x, y| ((x * 8 + y * 3 + i * 40) % 256) as u8))
        .collect();
    let majority_count = 12;

    let spec = AugmentSpec {
        seed: 2022,
        ..AugmentSpec::default()
    };
    let grown = augment_upsample(&minority, majority_count, &spec)?;
    assert_eq!(grown, augment_upsample(&minority, majority_count, &spec)?);

    println!("{} originals -> {} images", minority.len(), grown.len());
    for (k, img) in grown.iter().enumerate().skip(minority.len()) {
        let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.pixels().len() as f64;
        println!(
            "copy {k:2} of original {}: mean {mean:6.1}",
            (k - minority.len()) % minority.len()
        );
    }
    Ok(())
}
