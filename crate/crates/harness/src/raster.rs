//! 8-bit portable pixmaps: RGB images as binary PPM, masks as binary PGM.

use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use segweight_core::losses::Mask;
use segweight_core::ndcore::Tensor;

use crate::error::{HarnessError, IoContext, Result};

fn write_pnm(path: &Path, bytes: &[u8], width: usize, height: usize, rgb: bool) -> Result<()> {
    let (subtype, color) = if rgb {
        (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
    } else {
        (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
    };
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    fs::write(path, buf).at(path)
}

fn read_pnm(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).at(path)?;
    let reader = reader.with_guessed_format().at(path)?;
    reader.decode().map_err(|e| HarnessError::format(path, e.to_string()))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3, H, W]` image with values in `[0, 1]`.
pub fn save_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(HarnessError::contract(format!("image must be [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        bytes.extend((0..3).map(|c| to_byte(d[c * h * w + p])));
    }
    write_pnm(path, &bytes, w, h, true)
}

/// Reads an RGB raster into a `[3, H, W]` tensor with values `byte / 255`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = read_pnm(path)?;
    if img.color().channel_count() != 3 {
        return Err(HarnessError::contract(format!("{}: image must be 3-channel", path.display())));
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (p, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

/// Writes a mask as 0 (background) / 255 (lesion).
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_pnm(path, &bytes, mask.width(), mask.height(), false)
}

/// Reads a single-channel raster; values of 128 and above are lesion.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = read_pnm(path)?;
    if img.color().channel_count() != 1 {
        return Err(HarnessError::contract(format!("{}: mask must be single-channel", path.display())));
    }
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(Mask::new(h, w, gray.pixels().map(|p| (p[0] >= 128) as u8).collect())?)
}

/// Writes a grayscale rendering of `values` (`H × W`, row-major) scaled by `scale`.
pub fn save_gray(path: &Path, values: &[f64], height: usize, width: usize, scale: f64) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| to_byte(if scale > 0.0 { v / scale } else { 0.0 })).collect();
    write_pnm(path, &bytes, width, height, false)
}

/// Writes interleaved RGB bytes.
pub fn save_rgb_bytes(path: &Path, bytes: &[u8], height: usize, width: usize) -> Result<()> {
    write_pnm(path, bytes, width, height, true)
}
