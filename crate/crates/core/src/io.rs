//! File formats: AVPM rasters, 8-bit label/mask PNGs, RGB photographs and the
//! optic-disc JSON sidecar.
//!
//! AVPM layout (little-endian): `"AVPM"`, `u32` version (1), `u32` width,
//! `u32` height, `u32` channels, then `width * height * channels` `f32`
//! samples in planar order.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryImage, FovMask, LabelMap, Raster2D};

pub const AVPM_MAGIC: &[u8; 4] = b"AVPM";
pub const AVPM_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_avpm(r: &Raster2D) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * r.samples().len());
    out.extend_from_slice(AVPM_MAGIC);
    for v in [
        AVPM_VERSION,
        r.width() as u32,
        r.height() as u32,
        r.channels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in r.samples() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn decode_avpm(bytes: &[u8]) -> Result<Raster2D> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != AVPM_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != AVPM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (w, h, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::InvalidRaster("header dimensions overflow".into()))?;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    let samples = bytes[HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Raster2D::new(w, h, c, samples)
}

pub fn read_avpm(path: impl AsRef<Path>) -> Result<Raster2D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_avpm(&bytes)
}

pub fn write_avpm(r: &Raster2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_avpm(r)).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    Ok(reader.with_guessed_format().map_err(|e| Error::io(path, e))?.decode()?)
}

/// Reads an 8-bit photograph into a 3-channel raster with values in `[0, 255]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Raster2D> {
    let img = open_image(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut samples = vec![0f32; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            samples[c * w * h + i] = px[c] as f32;
        }
    }
    Raster2D::new(w, h, 3, samples)
}

/// Writes the first three channels, clamped and rounded to 8 bits.
pub fn write_rgb_png(r: &Raster2D, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = (r.width(), r.height());
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            let v = r.channel(c.min(r.channels() - 1))[i];
            px[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_gray_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let img = open_image(path.as_ref())?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub fn write_gray_png(width: usize, height: usize, data: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::DimensionMismatch("gray buffer size".into()))?;
    img.save(path.as_ref())?;
    Ok(())
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (w, h, data) = read_gray_png(path)?;
    LabelMap::from_codes(w, h, &data)
}

pub fn write_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_gray_png(labels.width, labels.height, &labels.codes(), path)
}

/// Nonzero pixels are inside.
pub fn read_fov_png(path: impl AsRef<Path>) -> Result<FovMask> {
    let (w, h, data) = read_gray_png(path)?;
    FovMask::new(BinaryImage {
        width: w,
        height: h,
        data: data.into_iter().map(|v| v != 0).collect(),
    })
}

pub fn write_binary_png(mask: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray_png(mask.width, mask.height, &data, path)
}

/// Optic disc sidecar: `{"cx": .., "cy": .., "dd": ..}` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdSidecar {
    pub cx: f64,
    pub cy: f64,
    pub dd: f64,
}

pub fn read_od_json(path: impl AsRef<Path>) -> Result<OdSidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
