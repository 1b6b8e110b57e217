//! PGM (P5) and 8-bit PNG decoding, PGM encoding.

use std::io::Cursor;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary portable graymap.
    Pgm,
    /// PNG with 8-bit grayscale or 8-bit RGB samples.
    Png,
}

impl ImageFormat {
    /// Identifies the format from the leading magic bytes.
    pub fn detect(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"P5") {
            Ok(ImageFormat::Pgm)
        } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Ok(ImageFormat::Png)
        } else if bytes.len() < 8 {
            Err(Error::Truncated(format!("{} bytes", bytes.len())))
        } else {
            Err(Error::UnsupportedFormat("unrecognized magic bytes".into()))
        }
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<GrayImage> {
    match format {
        ImageFormat::Pgm => decode_pgm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Reads and decodes an image file, detecting the format from its contents.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageFormat::detect(&bytes)
        .and_then(|f| decode_image(&bytes, f))
        .map_err(|e| Error::Load {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Truncated("PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedFormat("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat("PGM header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::UnsupportedFormat("malformed PGM header".into())),
        None => return Err(Error::Truncated("PGM header".into())),
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(Error::BitDepth(16));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM {width}x{height} with maxval {maxval}"
        )));
    }
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| {
        Error::Truncated(format!(
            "PGM raster: need {n} bytes, have {}",
            bytes.len() - pos
        ))
    })?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        let m = maxval as u32;
        raster
            .iter()
            .map(|&v| ((v.min(maxval as u8) as u32 * 255 * 2 + m) / (2 * m)) as u8)
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let map_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::Truncated(io.to_string()),
        other => Error::UnsupportedFormat(other.to_string()),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(map_err)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::BitDepth(depth as u32));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("PNG too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(map_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let pixels: Vec<u8> = match color {
        png::ColorType::Grayscale => (0..h)
            .flat_map(|y| buf[y * stride..y * stride + w].iter().copied())
            .collect(),
        png::ColorType::Rgb => (0..h)
            .flat_map(|y| buf[y * stride..y * stride + 3 * w].chunks_exact(3))
            .map(|px| luma(px[0], px[1], px[2]))
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {other:?}, expected 8-bit grayscale or RGB"
            )))
        }
    };
    GrayImage::new(w, h, pixels)
}

/// `round(0.299 R + 0.587 G + 0.114 B)` in integer arithmetic.
fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}
