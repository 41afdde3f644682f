//! Small image helpers shared by the tool executor, the agent and the pipeline.

use std::io::Cursor;

use base64::Engine;
use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use crate::geometry::{PixelRect, Rotation};

/// Content hash over dimensions and raw RGB bytes, lowercase hex.
pub fn image_hash(img: &RgbImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(img.width().to_le_bytes());
    hasher.update(img.height().to_le_bytes());
    hasher.update(img.as_raw());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("encoding an in-memory RGB buffer as PNG cannot fail");
    buf.into_inner()
}

pub fn png_base64(img: &RgbImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(png_bytes(img))
}

/// Rotates counter-clockwise by `rotation`.
pub fn rotate_ccw(img: &RgbImage, rotation: Rotation) -> RgbImage {
    // imageops rotates clockwise
    match rotation {
        Rotation::Deg0 => img.clone(),
        Rotation::Deg90 => imageops::rotate270(img),
        Rotation::Deg180 => imageops::rotate180(img),
        Rotation::Deg270 => imageops::rotate90(img),
    }
}

/// Copies `rect` out of `page` into an independent buffer and rotates it.
pub fn crop_and_rotate(page: &RgbImage, rect: &PixelRect, rotation: Rotation) -> RgbImage {
    let crop = imageops::crop_imm(page, rect.left, rect.top, rect.width, rect.height).to_image();
    rotate_ccw(&crop, rotation)
}

/// Downscales so neither side exceeds `max_dim`, preserving aspect ratio.
/// Images already within bounds are returned unchanged.
pub fn fit_within(img: &RgbImage, max_dim: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let longest = w.max(h);
    if max_dim == 0 || longest <= max_dim {
        return img.clone();
    }
    let scale = max_dim as f64 / longest as f64;
    let nw = ((w as f64 * scale).round() as u32).clamp(1, max_dim);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, max_dim);
    imageops::resize(img, nw, nh, FilterType::Triangle)
}

/// Dimensions `fit_within` would produce, without resampling.
pub fn fitted_dims(width: u32, height: u32, max_dim: u32) -> (u32, u32) {
    let longest = width.max(height);
    if max_dim == 0 || longest <= max_dim {
        return (width, height);
    }
    let scale = max_dim as f64 / longest as f64;
    (
        ((width as f64 * scale).round() as u32).clamp(1, max_dim),
        ((height as f64 * scale).round() as u32).clamp(1, max_dim),
    )
}
