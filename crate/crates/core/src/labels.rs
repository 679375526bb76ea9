//! Attaching training labels to a manifest: FRC resolution computed from the
//! images themselves, or scores read from an external `id,label` CSV.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::dataset::{load_entry_image, LabelProvenance, Manifest};
use crate::error::{Error, Result};
use crate::frc::{frc_resolution, frc_settings};

pub const FRC_TARGET: &str = "frc_resolution";

/// An entry that could not be labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFailure {
    pub id: String,
    pub reason: String,
}

/// Labels every entry with its FRC resolution in sub-image pixels (lower is
/// better). Entries whose FRC is undefined keep no label and are reported.
pub fn label_with_frc(manifest: &mut Manifest, root: &Path) -> Result<Vec<LabelFailure>> {
    let results: Vec<Result<f64>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = load_entry_image(root, e)?;
            Ok(frc_resolution(&image)?.resolution_px)
        })
        .collect();
    let mut failures = Vec::new();
    for (entry, result) in manifest.entries.iter_mut().zip(results) {
        match result {
            Ok(v) => entry.label = Some(v),
            Err(e @ (Error::FrcUndefined(_) | Error::ImageTooSmall { .. })) => {
                entry.label = None;
                failures.push(LabelFailure { id: entry.id.clone(), reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    for f in &failures {
        log::warn!("no FRC label for {}: {}", f.id, f.reason);
    }
    manifest.labels = Some(LabelProvenance {
        source: "frc".into(),
        target_name: FRC_TARGET.into(),
        higher_is_better: false,
        parameters: frc_settings(),
    });
    Ok(failures)
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    label: f64,
}

/// Reads an `id,label` CSV.
pub fn read_label_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        if !row.label.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite label for {}", row.id)));
        }
        if out.insert(row.id.clone(), row.label).is_some() {
            return Err(Error::InvalidInput(format!("duplicate label for {}", row.id)));
        }
    }
    Ok(out)
}

/// Copies external scores onto matching entries; returns ids with no score.
/// Ids in the file that match no entry are an error.
pub fn apply_external_labels(
    manifest: &mut Manifest,
    labels: &HashMap<String, f64>,
    target_name: &str,
    higher_is_better: bool,
    source: &Path,
) -> Result<Vec<String>> {
    let known: std::collections::HashSet<&str> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
    let mut unknown: Vec<&String> = labels.keys().filter(|k| !known.contains(k.as_str())).collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(Error::Manifest(format!(
            "{} label ids not in the manifest (first: {})",
            unknown.len(),
            unknown[0]
        )));
    }
    let mut unlabeled = Vec::new();
    for entry in &mut manifest.entries {
        entry.label = labels.get(&entry.id).copied();
        if entry.label.is_none() {
            unlabeled.push(entry.id.clone());
        }
    }
    manifest.labels = Some(LabelProvenance {
        source: "external".into(),
        target_name: target_name.into(),
        higher_is_better,
        parameters: serde_json::json!({ "file": source }),
    });
    Ok(unlabeled)
}
