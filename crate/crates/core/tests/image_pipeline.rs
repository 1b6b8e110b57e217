mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use xray_vit::image::{
    augment, augment_upsample, clahe, random_brightness_contrast, random_rotate, resize_bilinear,
    rotate, stack_channels, AugmentSpec, ClaheSpec, GrayImage, ImageRng,
};

/// Textbook global histogram equalization; single-valued images are returned
/// unchanged.
fn global_equalization_oracle(img: &GrayImage) -> GrayImage {
    let n = img.pixels().len();
    let cdf = |v: u8| img.pixels().iter().filter(|&&p| p <= v).count();
    let cdf_min = img.pixels().iter().map(|&p| cdf(p)).min().unwrap();
    if cdf_min == n {
        return img.clone();
    }
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| ((cdf(p) - cdf_min) as f64 / (n - cdf_min) as f64 * 255.0).round() as u8)
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).unwrap()
}

fn random_image(r: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    let lo: u8 = r.random_range(0..128);
    let hi: u8 = r.random_range(lo + 1..=255);
    GrayImage::new(w, h, (0..w * h).map(|_| r.random_range(lo..=hi)).collect()).unwrap()
}

#[test]
fn clahe_without_clipping_is_global_equalization() {
    let spec = ClaheSpec {
        clip_limit: f64::INFINITY,
        tile_rows: 1,
        tile_cols: 1,
    };
    let mut r = rng(20);
    for _ in 0..20 {
        let img = random_image(&mut r, 16, 16);
        assert_eq!(
            clahe(&img, &spec).unwrap(),
            global_equalization_oracle(&img)
        );
    }
}

#[test]
fn clahe_constant_images_are_fixed_points() {
    for spec in [
        ClaheSpec::default(),
        ClaheSpec {
            clip_limit: f64::INFINITY,
            tile_rows: 1,
            tile_cols: 1,
        },
    ] {
        for v in [0u8, 1, 90, 254, 255] {
            let img = GrayImage::filled(16, 16, v);
            assert_eq!(clahe(&img, &spec).unwrap(), img);
        }
    }
}

/// Inverse-maps each output pixel with a complex rotation and samples with a
/// tent kernel over the source lattice.
fn rotation_oracle(img: &GrayImage, degrees: f64, fill: u8) -> Vec<f64> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let theta = degrees * std::f64::consts::PI / 180.0;
    let (er, ei) = (theta.cos(), theta.sin());
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (pr, pi) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + (pr * er - pi * ei);
            let sy = cy + (pr * ei + pi * er);
            let mut acc = 0.0;
            for qy in (sy.floor() as i64)..=(sy.floor() as i64 + 1) {
                for qx in (sx.floor() as i64)..=(sx.floor() as i64 + 1) {
                    let k = (1.0 - (sx - qx as f64).abs()).max(0.0)
                        * (1.0 - (sy - qy as f64).abs()).max(0.0);
                    let inside =
                        qx >= 0 && qy >= 0 && qx < img.width() as i64 && qy < img.height() as i64;
                    let v = if inside {
                        img.get(qx as usize, qy as usize) as f64
                    } else {
                        fill as f64
                    };
                    acc += k * v;
                }
            }
            out.push(acc);
        }
    }
    out
}

#[test]
fn rotation_matches_inverse_map_oracle() {
    let delta = GrayImage::from_fn(9, 9, |x, y| if (x, y) == (6, 4) { 255 } else { 0 });
    let got = rotate(&delta, 30.0, 0);
    let want = rotation_oracle(&delta, 30.0, 0);
    for (g, w) in got.pixels().iter().zip(&want) {
        assert!((*g as f64 - w).abs() <= 1.0, "{g} vs {w}");
    }
    assert!(got.pixels().iter().any(|&p| p > 0));

    let mut r = rng(4);
    let img = random_image(&mut r, 11, 7);
    for angle in [-250.0, -30.0, 17.5, 123.0] {
        let got = rotate(&img, angle, 40);
        for (g, w) in got.pixels().iter().zip(rotation_oracle(&img, angle, 40)) {
            assert!((*g as f64 - w).abs() <= 1.0);
        }
    }
}

#[test]
fn brightness_example() {
    let img = GrayImage::filled(1, 1, 128);
    let out = xray_vit::image::adjust_brightness_contrast(&img, 0.0, 0.4);
    assert_eq!(out.pixels(), &[230]);
}

#[test]
fn upsample_reference_counts() {
    let originals: Vec<GrayImage> = (0..3500)
        .map(|i| GrayImage::from_fn(4, 4, move |x, y| ((i + x * 4 + y) % 256) as u8))
        .collect();
    let spec = AugmentSpec {
        seed: 2021,
        ..AugmentSpec::default()
    };
    let out = augment_upsample(&originals, 7000, &spec).unwrap();
    assert_eq!(out.len(), 7000);
    assert_eq!(&out[..3500], &originals[..]);
    let again = augment_upsample(&originals, 7000, &spec).unwrap();
    assert!(out == again);
}

#[test]
fn stacked_channels_reproduce_source() {
    let mut r = rng(8);
    let img = random_image(&mut r, 5, 4);
    let stacked = stack_channels(&img);
    for c in 0..3 {
        let plane = stacked.channel(c);
        for (v, p) in plane.iter().zip(img.pixels()) {
            assert_eq!(*v, *p as f64 / 255.0);
        }
    }
}

fn arb_image() -> impl Strategy<Value = GrayImage> {
    (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h)
            .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
    })
}

proptest! {
    #[test]
    fn augmentation_preserves_extents_and_is_seeded(img in arb_image(), seed in any::<u64>()) {
        let spec = AugmentSpec { seed, ..AugmentSpec::default() };
        let a = augment(&img, &spec, &mut ImageRng::seed_from_u64(seed));
        let b = augment(&img, &spec, &mut ImageRng::seed_from_u64(seed));
        prop_assert_eq!((a.width(), a.height()), (img.width(), img.height()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rotation_and_jitter_keep_extents(img in arb_image(), seed in any::<u64>()) {
        let spec = AugmentSpec::default();
        let mut r = ImageRng::seed_from_u64(seed);
        let rot = random_rotate(&img, &spec, &mut r);
        let bc = random_brightness_contrast(&img, &spec, &mut r);
        prop_assert_eq!((rot.width(), rot.height()), (img.width(), img.height()));
        prop_assert_eq!((bc.width(), bc.height()), (img.width(), img.height()));
    }

    #[test]
    fn clahe_keeps_extents(img in arb_image(), clip in 0.5f64..8.0, rows in 1usize..4, cols in 1usize..4) {
        prop_assume!(rows <= img.height() && cols <= img.width());
        let out = clahe(&img, &ClaheSpec { clip_limit: clip, tile_rows: rows, tile_cols: cols }).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
    }

    #[test]
    fn resize_hits_target(img in arb_image(), w in 1usize..40, h in 1usize..40) {
        let out = resize_bilinear(&img, w, h).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w, h));
        let (lo, hi) = (*img.pixels().iter().min().unwrap(), *img.pixels().iter().max().unwrap());
        prop_assert!(out.pixels().iter().all(|&p| p >= lo && p <= hi));
    }
}
