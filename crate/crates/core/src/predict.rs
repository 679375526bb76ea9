//! Inference on whole images: a global score plus per-patch quality and
//! weight maps, and heatmap overlays of those maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{partition_patches, Image, PatchMap, PATCH_SIZE};
use crate::io::read_image_auto;
use crate::net::{aggregate, forward_patches, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// Weighted estimate in target units.
    pub score: f64,
    /// Weighted estimate in normalized units.
    pub normalized_score: f64,
    /// Per-patch quality in target units.
    pub patch_quality: PatchMap,
    pub patch_weight: PatchMap,
    /// Top-left pixel of every patch, row-major.
    pub patch_origins: Vec<(usize, usize)>,
    pub patch_size: usize,
    pub warning: Option<String>,
}

impl PredictionResult {
    /// Normalized per-patch qualities, recovered from the denormalized map.
    pub fn normalized_qualities(&self, model: &Model) -> Vec<f64> {
        self.patch_quality.values.iter().map(|&v| model.normalize(v)).collect()
    }
}

pub fn predict_image(model: &Model, image: &Image) -> Result<PredictionResult> {
    let grid = partition_patches(image)?;
    let pred = forward_patches(model, &grid)?;
    let normalized_score = aggregate(&pred);
    Ok(PredictionResult {
        score: model.denormalize(normalized_score),
        normalized_score,
        patch_quality: PatchMap {
            rows: grid.rows,
            cols: grid.cols,
            values: pred.qualities.iter().map(|&q| model.denormalize(q)).collect(),
        },
        patch_weight: PatchMap { rows: grid.rows, cols: grid.cols, values: pred.weights },
        patch_origins: grid.origin_offsets,
        patch_size: PATCH_SIZE,
        warning: grid.warning,
    })
}

/// One row of a batch prediction report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub score: Option<f64>,
    pub map_quality_path: Option<String>,
    pub map_weight_path: Option<String>,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

/// Predicts every `(id, path)` pair. Per-image failures are recorded in the
/// report instead of aborting the batch. With `maps_dir`, quality and
/// weight maps are written there as CSV (and as overlays if `heatmaps`).
pub fn predict_batch(
    model: &Model,
    inputs: &[(String, PathBuf)],
    maps_dir: Option<&Path>,
    heatmaps: bool,
) -> Result<Vec<BatchRecord>> {
    if let Some(dir) = maps_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = Vec::with_capacity(inputs.len());
    for (id, path) in inputs {
        let start = Instant::now();
        let outcome = read_image_auto(path).and_then(|img| {
            let result = predict_image(model, &img)?;
            let paths = match maps_dir {
                Some(dir) => Some(write_maps(dir, id, &img, &result, heatmaps)?),
                None => None,
            };
            Ok((result.score, paths))
        });
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        records.push(match outcome {
            Ok((score, paths)) => BatchRecord {
                id: id.clone(),
                score: Some(score),
                map_quality_path: paths.as_ref().map(|p| p.0.display().to_string()),
                map_weight_path: paths.as_ref().map(|p| p.1.display().to_string()),
                elapsed_ms,
                error: None,
            },
            Err(e) => {
                log::warn!("prediction failed for {id}: {e}");
                BatchRecord {
                    id: id.clone(),
                    score: None,
                    map_quality_path: None,
                    map_weight_path: None,
                    elapsed_ms,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    Ok(records)
}

fn write_maps(dir: &Path, id: &str, image: &Image, result: &PredictionResult, heatmaps: bool) -> Result<(PathBuf, PathBuf)> {
    let quality = dir.join(format!("{id}_quality.csv"));
    let weight = dir.join(format!("{id}_weight.csv"));
    write_map_csv(&result.patch_quality, &quality)?;
    write_map_csv(&result.patch_weight, &weight)?;
    if heatmaps {
        render_heatmap(image, &result.patch_quality, &dir.join(format!("{id}_quality.png")))?;
        render_heatmap(image, &result.patch_weight, &dir.join(format!("{id}_weight.png")))?;
    }
    Ok((quality, weight))
}

pub fn write_batch_report(records: &[BatchRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "score", "map_quality_path", "map_weight_path", "elapsed_ms", "error"])?;
    for r in records {
        w.write_record([
            r.id.clone(),
            r.score.map(|v| v.to_string()).unwrap_or_default(),
            r.map_quality_path.clone().unwrap_or_default(),
            r.map_weight_path.clone().unwrap_or_default(),
            format!("{:.3}", r.elapsed_ms),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a map as a headerless CSV grid, one patch row per line.
pub fn write_map_csv(map: &PatchMap, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in map.values.chunks(map.cols.max(1)) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_map_csv(path: &Path) -> Result<PatchMap> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let (mut rows, mut cols) = (0, 0);
    for record in r.records() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidInput(format!("map value {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if rows > 0 && row.len() != cols {
            return Err(Error::DimensionMismatch(format!("ragged map row {rows}")));
        }
        cols = row.len();
        rows += 1;
        values.extend(row);
    }
    Ok(PatchMap { rows, cols, values })
}

/// Color ramp from low (dark blue) to high (yellow), linearly interpolated.
pub const HEATMAP_RAMP: [[u8; 3]; 5] = [
    [48, 18, 59],
    [40, 100, 200],
    [30, 180, 140],
    [170, 220, 50],
    [250, 240, 30],
];
/// Opacity of the color layer over the grayscale image.
pub const HEATMAP_ALPHA: f64 = 0.45;

fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0) * (HEATMAP_RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(HEATMAP_RAMP.len() - 2);
    let f = t - i as f64;
    let (a, b) = (HEATMAP_RAMP[i], HEATMAP_RAMP[i + 1]);
    [0, 1, 2].map(|c| a[c] as f64 * (1.0 - f) + b[c] as f64 * f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub map_min: f64,
    pub map_max: f64,
    pub ramp: Vec<[u8; 3]>,
    pub alpha: f64,
    pub patch_size: usize,
}

/// Blends a per-patch map, scaled to its own range, over the grayscale image
/// and writes an RGB PNG plus a JSON sidecar with the range and ramp.
pub fn render_heatmap(image: &Image, map: &PatchMap, path: &Path) -> Result<()> {
    let (h, w) = (map.rows * PATCH_SIZE, map.cols * PATCH_SIZE);
    if image.height() < h || image.width() < w {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} map does not fit a {}x{} image",
            map.rows,
            map.cols,
            image.height(),
            image.width()
        )));
    }
    let (lo, hi) = map.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let gray = image.get(y, x).clamp(0.0, 1.0) as f64 * 255.0;
        let color = ramp((map.get(y / PATCH_SIZE, x / PATCH_SIZE) - lo) / span);
        Rgb(color.map(|c| (gray * (1.0 - HEATMAP_ALPHA) + c * HEATMAP_ALPHA).round() as u8))
    });
    buf.save_with_format(path, image::ImageFormat::Png)?;
    let sidecar = HeatmapSidecar {
        map_min: lo,
        map_max: hi,
        ramp: HEATMAP_RAMP.to_vec(),
        alpha: HEATMAP_ALPHA,
        patch_size: PATCH_SIZE,
    };
    let side = path.with_extension("json");
    fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
}
