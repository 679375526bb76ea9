//! Single-channel image raster, intensity normalization and patch tiling.
//!
//! Pixels are stored row-major as `f32`. Every stage of the pipeline passes
//! [`Image`] values around; they are never mutated in place once built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square patches fed to the network.
pub const PATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    /// Physical length of one pixel in micrometers.
    pub pixel_size_um: Option<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
            pixel_size_um: None,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        Image {
            height,
            width,
            pixels: vec![value; height * width],
            pixel_size_um: None,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Image {
            height,
            width,
            pixels,
            pixel_size_um: None,
        }
    }

    pub fn with_pixel_size(mut self, pixel_size_um: Option<f64>) -> Self {
        self.pixel_size_um = pixel_size_um;
        self
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * self.width + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.pixels
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / self.pixels.len() as f64
    }

    pub fn transpose(&self) -> Image {
        let mut out = Image::from_fn(self.width, self.height, |r, c| self.get(c, r));
        out.pixel_size_um = self.pixel_size_um;
        out
    }

    /// Copy of the `height`x`width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {height}x{width} at ({row},{col}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width);
        for r in row..row + height {
            pixels.extend_from_slice(&self.row(r)[col..col + width]);
        }
        Ok(Image {
            height,
            width,
            pixels,
            pixel_size_um: self.pixel_size_um,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            pixel_size_um: self.pixel_size_um,
        }
    }
}

/// Clamps negative intensities to zero, then maps the range affinely onto `[0, 1]`.
///
/// A constant image (after clamping) maps to all zeros.
pub fn rescale_unit(image: &Image) -> Image {
    let clamped = image.map(|v| if v < 0.0 { 0.0 } else { v });
    let (lo, hi) = clamped.min_max();
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return clamped.map(|_| 0.0);
    }
    clamped.map(|v| (v - lo) / span)
}

/// Non-overlapping 32x32 tiling of an image in row-major order.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    /// `rows * cols` patches of `PATCH_SIZE * PATCH_SIZE` values, contiguous.
    data: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    /// Top-left pixel `(row, col)` of every patch.
    pub origin_offsets: Vec<(usize, usize)>,
    /// Rows and columns dropped from the bottom and right edges.
    pub cropped: (usize, usize),
    pub warning: Option<String>,
}

impl PatchGrid {
    pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE;

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * Self::PATCH_LEN..(index + 1) * Self::PATCH_LEN]
    }

    /// All patches back to back, the layout the network consumes.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copies the selected patches, in order, into one contiguous buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * Self::PATCH_LEN);
        for &i in indices {
            out.extend_from_slice(self.patch(i));
        }
        out
    }

    /// Builds a grid from raw patch data, e.g. patches sampled from several sources.
    pub fn from_patches(data: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols * Self::PATCH_LEN {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} patch grid",
                data.len()
            )));
        }
        let origin_offsets = (0..rows * cols)
            .map(|i| ((i / cols) * PATCH_SIZE, (i % cols) * PATCH_SIZE))
            .collect();
        Ok(PatchGrid {
            data,
            rows,
            cols,
            origin_offsets,
            cropped: (0, 0),
            warning: None,
        })
    }

    /// Stitches the patches back into the (cropped) image they came from.
    pub fn reassemble(&self) -> Image {
        let (h, w) = (self.rows * PATCH_SIZE, self.cols * PATCH_SIZE);
        let mut out = Image::zeros(h, w);
        for (i, &(r0, c0)) in self.origin_offsets.iter().enumerate() {
            let patch = self.patch(i);
            for y in 0..PATCH_SIZE {
                let dst = (r0 + y) * w + c0;
                out.pixels[dst..dst + PATCH_SIZE]
                    .copy_from_slice(&patch[y * PATCH_SIZE..(y + 1) * PATCH_SIZE]);
            }
        }
        out
    }
}

pub fn partition_patches(image: &Image) -> Result<PatchGrid> {
    let (h, w) = (image.height(), image.width());
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: PATCH_SIZE,
        });
    }
    let rows = h / PATCH_SIZE;
    let cols = w / PATCH_SIZE;
    let cropped = (h - rows * PATCH_SIZE, w - cols * PATCH_SIZE);
    let warning = if cropped != (0, 0) {
        let msg = format!(
            "{h}x{w} image not divisible by {PATCH_SIZE}: cropped {} bottom rows and {} right columns",
            cropped.0, cropped.1
        );
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };

    let mut data = Vec::with_capacity(rows * cols * PatchGrid::PATCH_LEN);
    let mut origin_offsets = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let (r0, c0) = (pr * PATCH_SIZE, pc * PATCH_SIZE);
            origin_offsets.push((r0, c0));
            for y in 0..PATCH_SIZE {
                data.extend_from_slice(&image.row(r0 + y)[c0..c0 + PATCH_SIZE]);
            }
        }
    }
    Ok(PatchGrid {
        data,
        rows,
        cols,
        origin_offsets,
        cropped,
        warning,
    })
}

/// Rows x cols grid of per-patch values, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PatchMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_clamps_negatives_first() {
        let img = Image::new(1, 3, vec![-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(rescale_unit(&img).pixels(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn rescale_keeps_unit_range_image() {
        let img = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rescale_unit(&img).pixels(), img.pixels());
    }

    #[test]
    fn constant_image_rescales_to_zero() {
        let img = Image::filled(4, 4, 0.7);
        assert!(rescale_unit(&img).pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partition_counts() {
        let g = partition_patches(&Image::zeros(512, 512)).unwrap();
        assert_eq!((g.rows, g.cols, g.len()), (16, 16, 256));
        assert!(g.warning.is_none());
        let g = partition_patches(&Image::zeros(64, 64)).unwrap();
        assert_eq!((g.rows, g.cols, g.len()), (2, 2, 4));
    }

    #[test]
    fn partition_crops_remainder_with_warning() {
        let g = partition_patches(&Image::zeros(70, 64)).unwrap();
        assert_eq!((g.rows, g.cols), (2, 2));
        assert_eq!(g.cropped, (6, 0));
        assert!(g.warning.is_some());
    }

    #[test]
    fn partition_rejects_small_images() {
        assert!(matches!(
            partition_patches(&Image::zeros(31, 64)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn patches_are_row_major_and_not_renormalized() {
        let img = Image::from_fn(64, 96, |r, c| (r * 96 + c) as f32 * 1e-4);
        let g = partition_patches(&img).unwrap();
        assert_eq!(g.origin_offsets[1], (0, 32));
        assert_eq!(g.origin_offsets[3], (32, 0));
        assert_eq!(g.patch(4)[0], img.get(32, 32));
        assert_eq!(g.patch(0)[33], img.get(1, 1));
    }

    #[test]
    fn crop_and_transpose() {
        let img = Image::from_fn(5, 7, |r, c| (r * 10 + c) as f32);
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.pixels(), &[12.0, 13.0, 14.0, 22.0, 23.0, 24.0]);
        let t = img.transpose();
        assert_eq!((t.height(), t.width()), (7, 5));
        assert_eq!(t.get(3, 1), img.get(1, 3));
        assert!(img.crop(4, 0, 2, 1).is_err());
    }
}
