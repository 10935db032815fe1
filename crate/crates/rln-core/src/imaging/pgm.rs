//! Binary (P5) PGM reading and writing for masks and grayscale images.
//!
//! Masks store their labels as raw byte values 0..=3; grayscale images are
//! quantized to `round(clamp(v, 0, 1) * 255)`. Files are written with the
//! fixed header `P5\n{width} {height}\n255\n`, so writing the same content
//! always produces byte-identical files.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::imaging::image::GrayImage;
use crate::imaging::mask::{LabelMask, NUM_LABELS};
use crate::Result;

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parse a binary PGM file into (width, height, raw bytes). Accepts arbitrary
/// whitespace and `#` comments in the header; requires maxval 255.
fn parse_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(malformed(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(malformed(path, "truncated header")),
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(malformed(path, "expected integer in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ASCII");
        *field = text
            .parse()
            .map_err(|_| malformed(path, format!("header value out of range: {text}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(path, "missing separator before raster data")),
    }
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(malformed(
            path,
            format!("raster has {} bytes, expected {expected}", raster.len()),
        ));
    }
    Ok((width, height, raster[..expected].to_vec()))
}

fn write_pgm(path: &Path, width: usize, height: usize, raster: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(32 + raster.len());
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(raster);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a label mask stored as raw label bytes, rejecting values outside
/// `0..NUM_LABELS`.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let (width, height, raster) = parse_pgm(path)?;
    if let Some(&bad) = raster.iter().find(|&&v| v as usize >= NUM_LABELS) {
        return Err(Error::LabelOutOfRange {
            value: bad,
            file: Some(path.to_path_buf()),
        });
    }
    LabelMask::from_data(width, height, raster)
}

/// Write a label mask as raw label bytes (values 0..=3).
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    write_pgm(path.as_ref(), mask.width(), mask.height(), mask.data())
}

/// Read a grayscale image, mapping byte value `b` to intensity `b / 255`.
pub fn read_gray_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let (width, height, raster) = parse_pgm(path)?;
    let data = raster.iter().map(|&b| b as f32 / 255.0).collect();
    GrayImage::from_data(width, height, data)
}

/// Write a grayscale image, quantizing intensity `v` to
/// `round(clamp(v, 0, 1) * 255)`.
pub fn write_gray_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let raster: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(path.as_ref(), image.width(), image.height(), &raster)
}
