//! PNG and filesystem I/O for the batch CLI: grayscale mattes/masks/depth
//! (8- or 16-bit), RGB images, and run manifests.

use crate::compositor::RgbImage;
use crate::depth_distill::DepthMap;
use crate::error::{Error, Result};
use crate::pred_loss::{AlphaMatte, BinaryMask, GrayMap};
use std::path::Path;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Loads a grayscale PNG as values in `[0, 1]`: 8-bit divides by 255,
/// 16-bit by 65535; other color types are converted to 16-bit luma first.
pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h, values) = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (
                w,
                h,
                buf.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 255.0)
                    .collect(),
            )
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (
                w,
                h,
                buf.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 65535.0)
                    .collect(),
            )
        }
        other => {
            let buf = other.into_luma16();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (
                w,
                h,
                buf.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 65535.0)
                    .collect(),
            )
        }
    };
    Ok((w, h, values))
}

pub fn load_alpha(path: &Path) -> Result<AlphaMatte> {
    let (w, h, values) = load_gray(path)?;
    AlphaMatte::new(w, h, values)
}

/// Loads a mask PNG, thresholding at 0.5.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let alpha = load_alpha(path)?;
    Ok(BinaryMask::from_alpha(&alpha))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let (w, h, values) = load_gray(path)?;
    DepthMap::new(w, h, values)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let buf = img.into_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    RgbImage::new(w, h, buf.into_raw())
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf =
        image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .expect("dimensions match the buffer by construction");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Writes an alpha matte as 8-bit grayscale.
pub fn save_alpha(path: &Path, matte: &AlphaMatte) -> Result<()> {
    let data: Vec<u8> = matte
        .values()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(matte.width() as u32, matte.height() as u32, data)
        .expect("dimensions match the buffer by construction");
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write_string(path, &text)
}

/// Sorted list of `.png` files (by file name) directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Sorted list of immediate subdirectories (instance layout).
pub fn list_subdirs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = entry.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
