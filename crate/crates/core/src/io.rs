//! Image file formats: 16-bit grayscale PNG/TIFF and raw little-endian `f32`
//! with a JSON sidecar.
//!
//! The raw format is lossless and is what the dataset builder writes. The
//! 16-bit formats quantize `[0, 1]` linearly onto `[0, 65535]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    RawF32,
    Png16,
    Tiff16,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "f32" | "raw" => Ok(ImageFormat::RawF32),
            "png" => Ok(ImageFormat::Png16),
            "tif" | "tiff" => Ok(ImageFormat::Tiff16),
            other => Err(Error::UnsupportedFormat(format!(
                "unknown extension {other:?} for {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::RawF32 => "f32",
            ImageFormat::Png16 => "png",
            ImageFormat::Tiff16 => "tif",
        }
    }
}

/// Sidecar describing a raw `f32` raster.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawSidecar {
    pub height: usize,
    pub width: usize,
    pub pixel_size_um: Option<f64>,
}

pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

/// Reads an image, inferring the format from the file extension.
pub fn read_image_auto(path: &Path) -> Result<Image> {
    read_image(path, ImageFormat::from_path(path)?)
}

pub fn write_image_auto(image: &Image, path: &Path) -> Result<()> {
    write_image(image, path, ImageFormat::from_path(path)?)
}

pub fn read_image(path: &Path, format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::RawF32 => read_raw(path),
        ImageFormat::Png16 | ImageFormat::Tiff16 => read_quantized(path),
    }
}

pub fn write_image(image: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        ImageFormat::RawF32 => write_raw(image, path),
        ImageFormat::Png16 => write_quantized(image, path, image::ImageFormat::Png),
        ImageFormat::Tiff16 => write_quantized(image, path, image::ImageFormat::Tiff),
    }
}

fn read_raw(path: &Path) -> Result<Image> {
    let side = sidecar_path(path);
    let meta: RawSidecar =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.height * meta.width * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} bytes, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Image::new(meta.height, meta.width, pixels)?.with_pixel_size(meta.pixel_size_um))
}

fn write_raw(image: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in image.pixels() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = RawSidecar {
        height: image.height(),
        width: image.width(),
        pixel_size_um: image.pixel_size_um,
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

fn read_quantized(path: &Path) -> Result<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f32> = match decoded {
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()
        }
        DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        other => {
            return Err(Error::SingleChannelRequired(format!(
                "{} has color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, pixels)
}

fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn write_quantized(image: &Image, path: &Path, format: image::ImageFormat) -> Result<()> {
    let data: Vec<u16> = image.pixels().iter().map(|&v| quantize_u16(v)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, data)
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, format)?;
    Ok(())
}
