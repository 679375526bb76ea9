//! Clean sample generation: parametric simulated structures and ingestion of
//! experimental grayscale images.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{rescale_unit, Image};
use crate::io::read_image_auto;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Disks,
    Filaments,
    Blobs,
    Rings,
    Grid,
    Mixed,
}

impl StructureKind {
    pub const ALL: [StructureKind; 6] = [
        StructureKind::Disks,
        StructureKind::Filaments,
        StructureKind::Blobs,
        StructureKind::Rings,
        StructureKind::Grid,
        StructureKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StructureKind::Disks => "disks",
            StructureKind::Filaments => "filaments",
            StructureKind::Blobs => "blobs",
            StructureKind::Rings => "rings",
            StructureKind::Grid => "grid",
            StructureKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StructureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown structure kind {s:?}")))
    }
}

/// Parameters of one simulated field of view.
///
/// `size_range` is the disk/ring radius, the filament/grid line width or the
/// blob standard deviation, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub object_count: usize,
    pub size_range: (f64, f64),
    pub orientation_range: (f64, f64),
    pub intensity_range: (f64, f64),
    pub canvas: (usize, usize),
    pub seed: u64,
}

impl StructureSpec {
    /// Default parameter regime for `kind` on a `canvas`, with the object
    /// count varied per field of view from `seed`.
    pub fn preset(kind: StructureKind, canvas: (usize, usize), seed: u64) -> Self {
        let area = (canvas.0 * canvas.1) as f64 / (512.0 * 512.0);
        let (density, size_range) = match kind {
            StructureKind::Disks => (28.0, (5.0, 14.0)),
            StructureKind::Filaments => (40.0, (1.0, 2.5)),
            StructureKind::Blobs => (45.0, (3.0, 9.0)),
            StructureKind::Rings => (18.0, (6.0, 16.0)),
            StructureKind::Grid => (0.0, (1.0, 2.0)),
            StructureKind::Mixed => (35.0, (3.0, 12.0)),
        };
        let mut rng = rng_from_seed(seed ^ 0x5EED_C0DE);
        let jitter: f64 = rng.gen_range(0.6..1.4);
        let expected = match kind {
            // Lines per family, roughly one every 40 px.
            StructureKind::Grid => canvas.0.min(canvas.1) as f64 / 40.0,
            _ => density * area,
        };
        let object_count = ((expected * jitter).round() as usize).max(3);
        StructureSpec {
            kind,
            object_count,
            size_range,
            orientation_range: (0.0, PI),
            intensity_range: (0.4, 1.0),
            canvas,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.size_range, self.orientation_range, self.intensity_range];
        if ranges.iter().any(|r| !r.0.is_finite() || !r.1.is_finite() || r.0 > r.1) {
            return Err(Error::InvalidInput(format!("invalid ranges in {self:?}")));
        }
        if self.size_range.0 < 0.0 || self.intensity_range.0 < 0.0 || self.intensity_range.1 > 1.0 {
            return Err(Error::InvalidInput("sizes and intensities must be non-negative, intensities ≤ 1".into()));
        }
        if self.canvas.0 < 64 || self.canvas.1 < 64 {
            return Err(Error::ImageTooSmall {
                height: self.canvas.0,
                width: self.canvas.1,
                min: 64,
            });
        }
        Ok(())
    }
}

/// One rendered object. Coordinates are `(row, col)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacedObject {
    Disk { center: (f64, f64), radius: f64, amplitude: f64 },
    Segment { start: (f64, f64), end: (f64, f64), width: f64, amplitude: f64 },
    Blob { center: (f64, f64), sigma: (f64, f64), angle: f64, amplitude: f64 },
    Ring { center: (f64, f64), radius: f64, width: f64, amplitude: f64 },
    Line { point: (f64, f64), angle: f64, width: f64, amplitude: f64 },
}

/// Draws the object list for `spec` without rendering it.
pub fn layout(spec: &StructureSpec) -> Vec<PlacedObject> {
    let mut rng = rng_from_seed(spec.seed);
    let (h, w) = (spec.canvas.0 as f64, spec.canvas.1 as f64);
    let uniform = |rng: &mut crate::rng::Rng, r: (f64, f64)| {
        if r.1 > r.0 {
            rng.gen_range(r.0..r.1)
        } else {
            r.0
        }
    };

    if spec.kind == StructureKind::Grid {
        let n = spec.object_count;
        let angle = uniform(&mut rng, spec.orientation_range);
        let spacing = h.min(w) / n.max(1) as f64;
        let offset = rng.gen_range(0.0..spacing.max(1e-9));
        let (cy, cx) = (h / 2.0, w / 2.0);
        let mut out = Vec::with_capacity(2 * n);
        for family in 0..2 {
            let a = angle + family as f64 * PI / 2.0;
            // Lines run along direction `a`; offsets step along its normal.
            let normal = (a.cos(), -a.sin());
            for i in 0..n {
                let d = offset + i as f64 * spacing - h.min(w) / 2.0;
                out.push(PlacedObject::Line {
                    point: (cy + d * normal.0, cx + d * normal.1),
                    angle: a,
                    width: uniform(&mut rng, spec.size_range),
                    amplitude: uniform(&mut rng, spec.intensity_range),
                });
            }
        }
        return out;
    }

    let basic = [
        StructureKind::Disks,
        StructureKind::Filaments,
        StructureKind::Blobs,
        StructureKind::Rings,
    ];
    (0..spec.object_count)
        .map(|_| {
            let kind = if spec.kind == StructureKind::Mixed {
                basic[rng.gen_range(0..basic.len())]
            } else {
                spec.kind
            };
            let center = (rng.gen_range(0.0..h), rng.gen_range(0.0..w));
            let size = uniform(&mut rng, spec.size_range);
            let angle = uniform(&mut rng, spec.orientation_range);
            let amplitude = uniform(&mut rng, spec.intensity_range);
            match kind {
                StructureKind::Disks => PlacedObject::Disk { center, radius: size, amplitude },
                StructureKind::Filaments => {
                    let half = 0.5 * rng.gen_range(0.1..0.4) * h.min(w);
                    let (dy, dx) = (angle.sin() * half, angle.cos() * half);
                    PlacedObject::Segment {
                        start: (center.0 - dy, center.1 - dx),
                        end: (center.0 + dy, center.1 + dx),
                        width: size,
                        amplitude,
                    }
                }
                StructureKind::Blobs => {
                    let aspect = rng.gen_range(0.4..1.0);
                    PlacedObject::Blob { center, sigma: (size, size * aspect), angle, amplitude }
                }
                StructureKind::Rings => PlacedObject::Ring {
                    center,
                    radius: size,
                    width: (size / 4.0).max(1.5),
                    amplitude,
                },
                StructureKind::Grid | StructureKind::Mixed => unreachable!(),
            }
        })
        .collect()
}

/// Renders `spec` additively on a zero background and rescales to `[0, 1]`.
pub fn gen_structure(spec: &StructureSpec) -> Result<Image> {
    spec.validate()?;
    let objects = layout(spec);
    Ok(render(&objects, spec.canvas))
}

pub fn render(objects: &[PlacedObject], canvas: (usize, usize)) -> Image {
    let (h, w) = canvas;
    let mut acc = vec![0.0f64; h * w];
    for obj in objects {
        splat(obj, h, w, &mut acc);
    }
    let img = Image::new(h, w, acc.into_iter().map(|v| v as f32).collect())
        .expect("canvas dimensions are consistent");
    rescale_unit(&img)
}

/// Edge softness of rendered objects, in pixels.
const EDGE_SIGMA: f64 = 1.0;

/// Profile of a band `[-half, half]` blurred by the edge Gaussian, at distance `d`.
fn band(d: f64, half: f64) -> f64 {
    normal_cdf((half - d) / EDGE_SIGMA) - normal_cdf((-half - d) / EDGE_SIGMA)
}

fn splat(obj: &PlacedObject, h: usize, w: usize, acc: &mut [f64]) {
    let margin = 4.0 * EDGE_SIGMA;
    let mut paint = |bbox: (f64, f64, f64, f64), f: &dyn Fn(f64, f64) -> f64| {
        let r0 = bbox.0.floor().max(0.0) as usize;
        let c0 = bbox.1.floor().max(0.0) as usize;
        let r1 = (bbox.2.ceil().max(0.0) as usize).min(h.saturating_sub(1));
        let c1 = (bbox.3.ceil().max(0.0) as usize).min(w.saturating_sub(1));
        if bbox.2 < 0.0 || bbox.3 < 0.0 || r0 >= h || c0 >= w {
            return;
        }
        for r in r0..=r1 {
            for c in c0..=c1 {
                acc[r * w + c] += f(r as f64, c as f64);
            }
        }
    };
    match *obj {
        PlacedObject::Disk { center, radius, amplitude } => {
            let e = radius + margin;
            paint((center.0 - e, center.1 - e, center.0 + e, center.1 + e), &|y, x| {
                let d = ((y - center.0).powi(2) + (x - center.1).powi(2)).sqrt();
                amplitude * normal_cdf((radius - d) / EDGE_SIGMA)
            });
        }
        PlacedObject::Ring { center, radius, width, amplitude } => {
            let e = radius + width + margin;
            paint((center.0 - e, center.1 - e, center.0 + e, center.1 + e), &|y, x| {
                let d = ((y - center.0).powi(2) + (x - center.1).powi(2)).sqrt();
                amplitude * band(d - radius, width / 2.0)
            });
        }
        PlacedObject::Segment { start, end, width, amplitude } => {
            let e = width + margin;
            let bbox = (
                start.0.min(end.0) - e,
                start.1.min(end.1) - e,
                start.0.max(end.0) + e,
                start.1.max(end.1) + e,
            );
            let (vy, vx) = (end.0 - start.0, end.1 - start.1);
            let len2 = (vy * vy + vx * vx).max(1e-12);
            paint(bbox, &|y, x| {
                let t = (((y - start.0) * vy + (x - start.1) * vx) / len2).clamp(0.0, 1.0);
                let d = ((y - start.0 - t * vy).powi(2) + (x - start.1 - t * vx).powi(2)).sqrt();
                amplitude * band(d, width / 2.0)
            });
        }
        PlacedObject::Blob { center, sigma, angle, amplitude } => {
            let e = 4.0 * sigma.0.max(sigma.1);
            let (s, c) = angle.sin_cos();
            paint((center.0 - e, center.1 - e, center.0 + e, center.1 + e), &|y, x| {
                let (dy, dx) = (y - center.0, x - center.1);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                amplitude * (-0.5 * ((u / sigma.0).powi(2) + (v / sigma.1).powi(2))).exp()
            });
        }
        PlacedObject::Line { point, angle, width, amplitude } => {
            let (s, c) = angle.sin_cos();
            paint((0.0, 0.0, h as f64, w as f64), &|y, x| {
                // Distance from the line through `point` with direction (sin, cos).
                let d = ((y - point.0) * c - (x - point.1) * s).abs();
                amplitude * band(d, width / 2.0)
            });
        }
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Abramowitz & Stegun 7.1.26, absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// A clean experimental image and the sample label it is tracked under.
#[derive(Debug, Clone)]
pub struct CleanSample {
    pub image: Image,
    pub label: String,
}

/// Reads a single-channel image from disk and rescales it to `[0, 1]`.
pub fn ingest_clean(path: &Path) -> Result<CleanSample> {
    let raw = read_image_auto(path)?;
    let pixel_size = raw.pixel_size_um;
    let image = rescale_unit(&raw).with_pixel_size(pixel_size);
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sample")
        .to_string();
    Ok(CleanSample { image, label })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disks(count: usize, seed: u64) -> StructureSpec {
        StructureSpec {
            kind: StructureKind::Disks,
            object_count: count,
            size_range: (8.0, 12.0),
            orientation_range: (0.0, PI),
            intensity_range: (0.5, 1.0),
            canvas: (512, 512),
            seed,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        for kind in StructureKind::ALL {
            let spec = StructureSpec::preset(kind, (128, 128), 42);
            let a = gen_structure(&spec).unwrap();
            let b = gen_structure(&spec).unwrap();
            assert_eq!(a.pixels(), b.pixels(), "{kind:?}");
            let (lo, hi) = a.min_max();
            assert!(lo >= 0.0 && hi == 1.0, "{kind:?}: {lo} {hi}");
        }
    }

    #[test]
    fn zero_objects_give_zero_image() {
        let img = gen_structure(&disks(0, 1)).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = disks(3, 1);
        s.size_range = (5.0, 2.0);
        assert!(gen_structure(&s).is_err());
        let mut s = disks(3, 1);
        s.canvas = (32, 512);
        assert!(gen_structure(&s).is_err());
    }

    #[test]
    fn erf_matches_known_values() {
        assert!((erf(0.5) - 0.520_499_877_8).abs() < 2e-7);
        assert!((erf(-1.0) + 0.842_700_792_9).abs() < 2e-7);
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn structure_kind_parses() {
        assert_eq!("rings".parse::<StructureKind>().unwrap(), StructureKind::Rings);
        assert!("cubes".parse::<StructureKind>().is_err());
    }
}
