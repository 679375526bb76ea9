//! Supervised training of the patch network.
//!
//! Every batch holds patches of a single image and carries that image's
//! normalized label. The loss adds the absolute error of the weighted image
//! estimate to the mean absolute error of the individual patches.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_entry_image, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::image::{partition_patches, PatchGrid};
use crate::net::{aggregate, forward_patches, Model, PatchPrediction};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Population mean and standard deviation of the training labels.
pub fn zscore_fit(labels: &[f64]) -> Result<LabelStats> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no training labels".into()));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let std = (labels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return Err(Error::InvalidInput(
            "training labels have zero spread; z-score normalization is undefined".into(),
        ));
    }
    Ok(LabelStats { mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub mean: f64,
    pub std: f64,
}

pub fn zscore_apply(label: f64, stats: LabelStats) -> f64 {
    (label - stats.mean) / stats.std
}

pub fn zscore_invert(value: f64, stats: LabelStats) -> f64 {
    value * stats.std + stats.mean
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Absolute error of the weighted image estimate.
    pub e_w: f64,
    /// Mean absolute error of the patch estimates.
    pub e_p: f64,
    pub e_wp: f64,
}

pub fn loss_wp(pred: &PatchPrediction, target: f64) -> LossBreakdown {
    let e_w = (aggregate(pred) - target).abs();
    let e_p = pred.qualities.iter().map(|y| (y - target).abs()).sum::<f64>() / pred.len() as f64;
    LossBreakdown { e_w, e_p, e_wp: e_w + e_p }
}

/// Loss plus its gradient w.r.t. each patch quality and each patch weight.
/// The subgradient of `|x|` at zero is taken as zero.
pub fn loss_wp_gradients(pred: &PatchPrediction, target: f64) -> (LossBreakdown, Vec<f64>, Vec<f64>) {
    let n = pred.len() as f64;
    let total: f64 = pred.weights.iter().sum();
    let estimate = aggregate(pred);
    let sw = sign(estimate - target);
    let d_quality = pred
        .qualities
        .iter()
        .zip(&pred.weights)
        .map(|(&y, &a)| sw * a / total + sign(y - target) / n)
        .collect();
    let d_weight = pred
        .qualities
        .iter()
        .map(|&y| sw * (y - estimate) / total)
        .collect();
    (loss_wp(pred, target), d_quality, d_weight)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shuffles the patch indices of one image and cuts them into full batches;
/// leftovers are dropped. Images with fewer patches than one batch yield none.
pub fn make_batches(patch_count: usize, batch_patches: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    if batch_patches == 0 || patch_count < batch_patches {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..patch_count).collect();
    idx.shuffle(rng);
    idx.chunks_exact(batch_patches).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    Final,
    BestValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_patches: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub checkpoint: CheckpointPolicy,
    /// Fixed normalization instead of statistics fitted on the training labels.
    pub label_stats: Option<LabelStats>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_patches: 128,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint: CheckpointPolicy::Final,
            label_stats: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_patches == 0 {
            return Err(Error::InvalidInput(
                "learning rate and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("Adam moments must lie in [0, 1) with positive epsilon".into()));
        }
        if let Some(s) = self.label_stats {
            if !(s.std > 0.0) {
                return Err(Error::InvalidInput("label std override must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction over a flat parameter vector.
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(len: usize, config: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.epsilon * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// One image ready for training or validation.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub patches: PatchGrid,
    pub label: f64,
}

/// Loads and tiles every labeled entry of `split`.
pub fn load_split(manifest: &Manifest, root: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let missing: Vec<&&ManifestEntry> = entries.iter().filter(|e| e.label.is_none()).collect();
    if let Some(first) = missing.first() {
        return Err(Error::LabelsMissing { count: missing.len(), first: first.id.clone() });
    }
    entries
        .into_iter()
        .map(|e| {
            Ok(LabeledImage {
                id: e.id.clone(),
                patches: partition_patches(&load_entry_image(root, e)?)?,
                label: e.label.expect("checked above"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_e_wp: f64,
    pub train_e_w: f64,
    pub train_e_p: f64,
    /// Mean squared residual of the weighted estimate on validation images.
    pub val_metric: Option<f64>,
    /// Mean absolute residual of the weighted estimate on validation images.
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTarget {
    pub name: String,
    pub higher_is_better: bool,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub stats: LabelStats,
    /// Epoch whose weights were returned.
    pub selected_epoch: usize,
}

/// Weighted-estimate residuals of `model` on `images`, in normalized units.
pub fn validation_residuals(model: &Model, images: &[LabeledImage], stats: LabelStats) -> Result<Vec<f64>> {
    images
        .iter()
        .map(|img| {
            let pred = forward_patches(model, &img.patches)?;
            Ok(aggregate(&pred) - zscore_apply(img.label, stats))
        })
        .collect()
}

/// Trains `model` on `train`, validating on `val` after every epoch.
pub fn train_on(
    model: Model,
    train: &[LabeledImage],
    val: &[LabeledImage],
    target: &LabelTarget,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(model, train, val, target, config, |_, _| {})
}

/// Like [`train_on`], calling `observer` with each epoch's record and weights.
pub fn train_observed(
    mut model: Model,
    train: &[LabeledImage],
    val: &[LabeledImage],
    target: &LabelTarget,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &Model),
) -> Result<TrainOutcome> {
    config.validate()?;
    let stats = match config.label_stats {
        Some(s) => s,
        None => zscore_fit(&train.iter().map(|i| i.label).collect::<Vec<_>>())?,
    };
    let usable: Vec<&LabeledImage> = train
        .iter()
        .filter(|img| {
            let ok = img.patches.len() >= config.batch_patches;
            if !ok {
                log::warn!(
                    "skipping {}: {} patches, batch needs {}",
                    img.id,
                    img.patches.len(),
                    config.batch_patches
                );
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput("no training image holds a full batch".into()));
    }
    model.label_mean = stats.mean;
    model.label_std = stats.std;
    model.target_name = target.name.clone();
    model.higher_is_better = target.higher_is_better;

    let floor = model.spec().weight_floor;
    let mut adam = Adam::new(model.parameter_count(), config);
    let mut grad = vec![0.0f32; model.parameter_count()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;

    for epoch in 1..=config.epochs {
        let mut order_rng = rng_from_seed(derive_seed(config.seed, "image_order", &[epoch as u64]));
        let mut batch_rng = rng_from_seed(derive_seed(config.seed, "batches", &[epoch as u64]));
        let mut dropout_rng = rng_from_seed(derive_seed(config.seed, "dropout", &[epoch as u64]));
        let mut order: Vec<&LabeledImage> = usable.clone();
        order.shuffle(&mut order_rng);

        let (mut sum, mut batches) = (LossBreakdown { e_w: 0.0, e_p: 0.0, e_wp: 0.0 }, 0usize);
        for img in order {
            let target_z = zscore_apply(img.label, stats);
            for indices in make_batches(img.patches.len(), config.batch_patches, &mut batch_rng) {
                let patches = img.patches.gather(&indices);
                let (out, cache) =
                    model.network.forward_train(&patches, indices.len(), Some(&mut dropout_rng))?;
                let pred = PatchPrediction {
                    qualities: out.quality.iter().map(|&v| v as f64).collect(),
                    weights: out.weight_logit.iter().map(|&v| (v as f64).max(0.0) + floor).collect(),
                };
                let (loss, d_quality, d_weight) = loss_wp_gradients(&pred, target_z);
                if !loss.e_wp.is_finite() {
                    return Err(Error::NumericFailure(format!(
                        "non-finite loss at epoch {epoch} on image {}",
                        img.id
                    )));
                }
                let d_quality: Vec<f32> = d_quality.iter().map(|&v| v as f32).collect();
                let d_logit: Vec<f32> = d_weight
                    .iter()
                    .zip(&out.weight_logit)
                    .map(|(&g, &z)| if z > 0.0 { g as f32 } else { 0.0 })
                    .collect();
                grad.fill(0.0);
                model.network.backward(cache, &d_quality, &d_logit, &mut grad);
                adam.update(model.network.params_mut(), &grad, config.learning_rate);
                sum.e_w += loss.e_w;
                sum.e_p += loss.e_p;
                sum.e_wp += loss.e_wp;
                batches += 1;
            }
        }
        let n = batches.max(1) as f64;
        let (val_metric, val_mae) = if val.is_empty() {
            (None, None)
        } else {
            let res = validation_residuals(&model, val, stats)?;
            let k = res.len() as f64;
            (
                Some(res.iter().map(|r| r * r).sum::<f64>() / k),
                Some(res.iter().map(|r| r.abs()).sum::<f64>() / k),
            )
        };
        let record = EpochRecord {
            epoch,
            train_e_wp: sum.e_wp / n,
            train_e_w: sum.e_w / n,
            train_e_p: sum.e_p / n,
            val_metric,
            val_mae,
        };
        log::info!(
            "epoch {epoch}: train E_wp {:.4}, val {:?}",
            record.train_e_wp,
            record.val_metric
        );
        if config.checkpoint == CheckpointPolicy::BestValidation {
            if let Some(v) = val_metric {
                if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                    best = Some((v, epoch, model.network.params().to_vec()));
                }
            }
        }
        observer(&record, &model);
        history.push(record);
    }

    let mut selected_epoch = config.epochs;
    if let Some((_, epoch, params)) = best {
        model.network.params_mut().copy_from_slice(&params);
        selected_epoch = epoch;
    }
    Ok(TrainOutcome { model, history, stats, selected_epoch })
}

/// Trains on the labeled train/val splits of a manifest stored under `root`.
pub fn train_model(model: Model, manifest: &Manifest, root: &Path, config: &TrainConfig) -> Result<TrainOutcome> {
    let provenance = manifest.labels.as_ref().ok_or_else(|| Error::LabelsMissing {
        count: manifest.entries.len(),
        first: manifest.entries.first().map(|e| e.id.clone()).unwrap_or_default(),
    })?;
    let target = LabelTarget {
        name: provenance.target_name.clone(),
        higher_is_better: provenance.higher_is_better,
    };
    let train = load_split(manifest, root, Split::Train)?;
    let val = load_split(manifest, root, Split::Val)?;
    train_on(model, &train, &val, &target, config)
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_E_wp", "val_metric", "val_mae"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_e_wp.to_string(),
            opt(r.val_metric),
            opt(r.val_mae),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run metadata written next to the trained weights.
pub fn write_run_metadata(outcome: &TrainOutcome, config: &TrainConfig, path: &Path) -> Result<()> {
    let meta = serde_json::json!({
        "config": config,
        "label_stats": outcome.stats,
        "target_name": outcome.model.target_name,
        "higher_is_better": outcome.model.higher_is_better,
        "selected_epoch": outcome.selected_epoch,
        "arch_fingerprint": outcome.model.fingerprint(),
        "model_format_version": crate::net::MODEL_FORMAT_VERSION,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "reproducibility": "bit-identical for a fixed seed: single-threaded CPU GEMM, fixed reduction order",
        "validation_metric": "mean squared residual of the weighted estimate (normalized units)",
    });
    fs::write(path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(path, e))
}
