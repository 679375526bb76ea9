//! Single-image Fourier ring correlation.
//!
//! The image is split into two half-resolution sub-images from the two
//! diagonals of every 2x2 block, their spectra are correlated ring by ring,
//! and the resolution is read off where the smoothed curve first drops below
//! a fixed threshold. Frequencies and resolutions are expressed on the
//! sub-image grid.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Correlation level that defines the resolution cutoff.
pub const FRC_THRESHOLD: f64 = 1.0 / 7.0;
/// Ring width in frequency samples.
pub const RING_WIDTH: usize = 1;
/// Length of the moving average applied before the threshold search.
pub const SMOOTHING_WINDOW: usize = 5;
/// Smallest side accepted by [`frc_resolution`].
pub const MIN_FRC_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrcCurve {
    /// Ring centers in cycles per (sub-image) pixel, from 0 to 0.5.
    pub frequencies: Vec<f64>,
    pub correlations: Vec<f64>,
    /// False for rings where either spectrum carries no energy.
    pub energetic: Vec<bool>,
    pub ring_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionEstimate {
    pub cutoff_frequency: f64,
    pub resolution_px: f64,
    pub resolution_um: Option<f64>,
    /// Set when the curve never crossed the threshold; the cutoff is then Nyquist.
    pub no_crossing: bool,
}

/// Settings stamped into label metadata so labels can be regenerated.
pub fn frc_settings() -> serde_json::Value {
    serde_json::json!({
        "method": "single_image_diagonal_split",
        "threshold": FRC_THRESHOLD,
        "ring_width": RING_WIDTH,
        "smoothing_window": SMOOTHING_WINDOW,
        "units": "sub-image pixels",
    })
}

/// Splits an image into two half-size images: `a` averages the main diagonal
/// of every 2x2 block, `b` the anti-diagonal. Odd trailing rows or columns
/// are dropped with a warning.
pub fn split_subimages(image: &Image) -> Result<(Image, Image)> {
    let (h, w) = (image.height() & !1, image.width() & !1);
    if h < 2 || w < 2 {
        return Err(Error::ImageTooSmall {
            height: image.height(),
            width: image.width(),
            min: 2,
        });
    }
    if h != image.height() || w != image.width() {
        log::warn!(
            "odd {}x{} image cropped to {h}x{w} for FRC",
            image.height(),
            image.width()
        );
    }
    let (hh, hw) = (h / 2, w / 2);
    let mut a = Vec::with_capacity(hh * hw);
    let mut b = Vec::with_capacity(hh * hw);
    for i in 0..hh {
        let (r0, r1) = (image.row(2 * i), image.row(2 * i + 1));
        for j in 0..hw {
            a.push(0.5 * (r0[2 * j] + r1[2 * j + 1]));
            b.push(0.5 * (r0[2 * j + 1] + r1[2 * j]));
        }
    }
    let sub_px = image.pixel_size_um.map(|p| 2.0 * p);
    Ok((
        Image::new(hh, hw, a)?.with_pixel_size(sub_px),
        Image::new(hh, hw, b)?.with_pixel_size(sub_px),
    ))
}

struct Fft2d {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    h: usize,
    w: usize,
}

impl Fft2d {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
            h,
            w,
        }
    }

    fn transform(&self, image: &Image) -> Vec<Complex64> {
        let (h, w) = (self.h, self.w);
        let mut data: Vec<Complex64> = image
            .pixels()
            .iter()
            .map(|&v| Complex64::new(v as f64, 0.0))
            .collect();
        self.rows.process(&mut data);
        let mut col = vec![Complex64::default(); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = data[r * w + c];
            }
            self.cols.process(&mut col);
            for r in 0..h {
                data[r * w + c] = col[r];
            }
        }
        data
    }
}

/// Signed frequency index of FFT bin `k` out of `n`.
#[inline]
fn signed_bin(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Correlates the spectra of `a` and `b` over rings of unit width.
pub fn frc_curve(a: &Image, b: &Image) -> Result<FrcCurve> {
    let (h, w) = (a.height(), a.width());
    if (h, w) != (b.height(), b.width()) {
        return Err(Error::DimensionMismatch(format!(
            "FRC inputs {h}x{w} and {}x{}",
            b.height(),
            b.width()
        )));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!("FRC needs even dimensions, got {h}x{w}")));
    }
    let fft = Fft2d::new(h, w);
    let fa = fft.transform(a);
    let fb = fft.transform(b);

    // Radial distance in units of the smaller axis' frequency step.
    let n = h.min(w) as f64;
    let rings = h.min(w) / 2 + 1;
    let mut cross = vec![0.0; rings];
    let mut pa = vec![0.0; rings];
    let mut pb = vec![0.0; rings];
    for r in 0..h {
        let fy = signed_bin(r, h) / h as f64;
        for c in 0..w {
            let fx = signed_bin(c, w) / w as f64;
            let ring = ((fy * fy + fx * fx).sqrt() * n).round() as usize;
            if ring >= rings {
                continue;
            }
            let (x, y) = (fa[r * w + c], fb[r * w + c]);
            cross[ring] += (x * y.conj()).re;
            pa[ring] += x.norm_sqr();
            pb[ring] += y.norm_sqr();
        }
    }

    let mut correlations = Vec::with_capacity(rings);
    let mut energetic = Vec::with_capacity(rings);
    for q in 0..rings {
        let denom = (pa[q] * pb[q]).sqrt();
        if denom > 0.0 {
            correlations.push(cross[q] / denom);
            energetic.push(true);
        } else {
            correlations.push(0.0);
            energetic.push(false);
        }
    }
    Ok(FrcCurve {
        frequencies: (0..rings).map(|q| q as f64 / n).collect(),
        correlations,
        energetic,
        ring_width: RING_WIDTH as f64 / n,
    })
}

/// Centered moving average over rings `1..`; the DC ring is kept as is.
pub fn smooth_curve(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut out = values.to_vec();
    let n = values.len();
    for q in 1..n {
        let lo = q.saturating_sub(half).max(1);
        let hi = (q + half).min(n - 1);
        out[q] = values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    }
    out
}

/// Locates the first threshold crossing of a (smoothed) curve by linear interpolation.
/// Returns `None` if the curve stays at or above the threshold.
pub fn threshold_crossing(frequencies: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    // Already below at the first non-DC ring: that ring is the coarsest cutoff we can report.
    if values[1] < threshold {
        return Some(frequencies[1]);
    }
    for q in 2..values.len() {
        if values[q] < threshold {
            let (v0, v1) = (values[q - 1], values[q]);
            let (f0, f1) = (frequencies[q - 1], frequencies[q]);
            let t = (v0 - threshold) / (v0 - v1);
            return Some(f0 + t * (f1 - f0));
        }
    }
    None
}

pub fn frc_resolution(image: &Image) -> Result<ResolutionEstimate> {
    if image.height() < MIN_FRC_SIZE || image.width() < MIN_FRC_SIZE {
        return Err(Error::ImageTooSmall {
            height: image.height(),
            width: image.width(),
            min: MIN_FRC_SIZE,
        });
    }
    if !(image.variance() > 0.0) {
        return Err(Error::FrcUndefined("image has zero variance".into()));
    }
    let (a, b) = split_subimages(image)?;
    let curve = frc_curve(&a, &b)?;
    let smoothed = smooth_curve(&curve.correlations, SMOOTHING_WINDOW);
    let (cutoff, no_crossing) = match threshold_crossing(&curve.frequencies, &smoothed, FRC_THRESHOLD) {
        Some(f) => (f, false),
        None => (0.5, true),
    };
    let resolution_px = 1.0 / cutoff;
    Ok(ResolutionEstimate {
        cutoff_frequency: cutoff,
        resolution_px,
        resolution_um: a.pixel_size_um.map(|p| p * resolution_px),
        no_crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = crate::rng::rng_from_seed(seed);
        Image::from_fn(h, w, |_, _| rng.gen::<f32>())
    }

    #[test]
    fn split_dimensions_and_scheme() {
        let img = Image::from_fn(512, 512, |r, c| (r * 512 + c) as f32);
        let (a, b) = split_subimages(&img).unwrap();
        assert_eq!((a.height(), a.width(), b.height(), b.width()), (256, 256, 256, 256));
        assert_eq!(a.get(0, 0), 0.5 * (img.get(0, 0) + img.get(1, 1)));
        assert_eq!(b.get(0, 0), 0.5 * (img.get(0, 1) + img.get(1, 0)));
        assert_eq!(a.get(3, 5), 0.5 * (img.get(6, 10) + img.get(7, 11)));
    }

    #[test]
    fn split_of_constant_is_constant() {
        let (a, b) = split_subimages(&Image::filled(64, 64, 0.3)).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn split_crops_odd_dimensions() {
        let (a, _) = split_subimages(&Image::zeros(65, 67)).unwrap();
        assert_eq!((a.height(), a.width()), (32, 33));
    }

    #[test]
    fn self_correlation_is_one() {
        let img = noise(64, 64, 3);
        let c = frc_curve(&img, &img).unwrap();
        for (v, e) in c.correlations.iter().zip(&c.energetic) {
            if *e {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(c.frequencies.len(), 33);
        assert!((c.frequencies[32] - 0.5).abs() < 1e-15);
        assert!(c.frequencies.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn negated_correlation_is_minus_one() {
        let a = noise(64, 64, 4);
        let b = a.map(|v| -v);
        let c = frc_curve(&a, &b).unwrap();
        for (v, e) in c.correlations.iter().zip(&c.energetic) {
            if *e {
                assert!((v + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        assert!(frc_curve(&Image::zeros(64, 64), &Image::zeros(64, 32)).is_err());
    }

    #[test]
    fn constant_image_undefined() {
        assert!(matches!(
            frc_resolution(&Image::filled(64, 64, 0.4)),
            Err(Error::FrcUndefined(_))
        ));
        assert!(frc_resolution(&noise(32, 64, 1)).is_err());
    }

    #[test]
    fn crossing_interpolation() {
        let f = [0.0, 0.1, 0.2, 0.3];
        let v = [1.0, 0.5, 0.1, 0.0];
        let x = threshold_crossing(&f, &v, 0.3).unwrap();
        assert!((x - 0.15).abs() < 1e-12);
        assert!(threshold_crossing(&f, &[1.0, 0.9, 0.8, 0.7], 0.3).is_none());
    }

    #[test]
    fn smoothing_skips_dc() {
        let v = [10.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let s = smooth_curve(&v, 5);
        assert_eq!(s[0], 10.0);
        assert_eq!(s[1], 2.0);
        assert_eq!(s[3], 3.0);
        assert_eq!(s[5], 4.0);
    }

    #[test]
    fn scale_invariance() {
        let img = crate::degrade::apply_blur(&noise(128, 128, 8), 1.5).unwrap();
        let a = frc_resolution(&img).unwrap();
        let b = frc_resolution(&img.map(|v| v * 3.7)).unwrap();
        assert!(((a.cutoff_frequency - b.cutoff_frequency) / a.cutoff_frequency).abs() < 1e-9);
    }
}
