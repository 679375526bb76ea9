//! Dataset recipes, the persisted manifest, and corpus materialization.
//!
//! A corpus is a pure function of `(recipe, global_seed)`: every clean field
//! of view and every artifact draw takes its seed from [`derive_seed`], so
//! entries can be generated in any order or in parallel.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{
    apply_artifact, apply_graded, sample_artifact_params, ArtifactKind, ArtifactParams,
    ArtifactSpec, GradedArtifactSpec, NOISEFREE_BLUR_LEVELS, NOISEFREE_REFERENCE_NOISE,
    NOISEFREE_VIGNETTING_LEVELS,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{read_image_auto, write_image, ImageFormat};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{gen_structure, ingest_clean, StructureKind, StructureSpec};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Predict,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Predict => "predict",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CleanSource {
    Structure(StructureSpec),
    /// Experimental image; a `canvas`-sized window is cut at a position drawn from `crop_seed`.
    File { path: PathBuf, crop_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Degradation {
    Uniform(ArtifactSpec),
    Graded { graded: GradedArtifactSpec, seed: u64 },
}

impl Degradation {
    /// Short name used in ids and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Degradation::Uniform(a) => a.kind.name(),
            Degradation::Graded { graded: GradedArtifactSpec::Blur { .. }, .. } => "graded_blur",
            Degradation::Graded { graded: GradedArtifactSpec::MpgNoise { .. }, .. } => "graded_mpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_source: CleanSource,
    pub artifact: Degradation,
    pub split: Split,
    pub label: Option<f64>,
    /// Name of the underlying sample (structure class or experimental image).
    pub sample: String,
    /// Artifact level `1..=5` in the noise-free prediction sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    /// Image path relative to the manifest directory.
    pub file: String,
}

/// How labels were produced, so they can be regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProvenance {
    pub source: String,
    pub target_name: String,
    pub higher_is_better: bool,
    #[serde(default)]
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub global_seed: u64,
    pub entries: Vec<ManifestEntry>,
    pub presets: Recipe,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelProvenance>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "incompatible manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Loads the degraded image of `entry`, resolving its path against `root`.
pub fn load_entry_image(root: &Path, entry: &ManifestEntry) -> Result<Image> {
    read_image_auto(&root.join(&entry.file))
}

// ---------------------------------------------------------------------------
// Recipes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::Predict => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SampleSource {
    Simulated {
        kind: StructureKind,
        /// Simulated placeholder for a missing experimental sample; uses the
        /// experimental field-of-view counts.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        standin: bool,
    },
    Experimental { files: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDef {
    pub label: String,
    pub source: SampleSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    /// Train/val/test with sampled artifact parameters.
    Sampled,
    /// Fixed noise-free blur and vignetting levels plus low-noise references.
    NoiseFree,
    /// Row-graded blur and noise.
    Graded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    pub corpus: CorpusKind,
    pub canvas: usize,
    pub samples: Vec<SampleDef>,
    /// Fields of view per simulated sample.
    pub simulated_fovs: SplitCounts,
    /// Fields of view per experimental sample.
    pub experimental_fovs: SplitCounts,
    pub artifacts: Vec<ArtifactKind>,
}

/// Canvas side of the scaled-down desk corpus.
pub const DESK_CANVAS: usize = 128;

impl Recipe {
    /// Full-size corpus: six simulated structures and nine experimental
    /// samples. Missing experimental samples are replaced by simulated
    /// stand-ins so split sizes stay the same.
    pub fn paper(experimental: Vec<SampleDef>) -> Result<Recipe> {
        if experimental.len() > 9 {
            return Err(Error::InvalidInput(format!(
                "paper recipe takes at most 9 experimental samples, got {}",
                experimental.len()
            )));
        }
        let mut samples: Vec<SampleDef> = StructureKind::ALL
            .into_iter()
            .map(|kind| SampleDef {
                label: kind.name().to_string(),
                source: SampleSource::Simulated { kind, standin: false },
            })
            .collect();
        let provided = experimental.len();
        samples.extend(experimental);
        let mut standins = Vec::new();
        for k in provided..9 {
            let kind = StructureKind::ALL[k % StructureKind::ALL.len()];
            standins.push(SampleDef {
                label: format!("standin{k}_{}", kind.name()),
                source: SampleSource::Simulated { kind, standin: true },
            });
        }
        samples.extend(standins);
        Ok(Recipe {
            name: "paper".into(),
            corpus: CorpusKind::Sampled,
            canvas: 512,
            samples,
            simulated_fovs: SplitCounts { train: 24, val: 3, test: 3 },
            experimental_fovs: SplitCounts { train: 16, val: 2, test: 2 },
            artifacts: ArtifactKind::ALL.to_vec(),
        })
    }

    /// Small corpus for desktop-scale training runs.
    pub fn desk() -> Recipe {
        let kinds = [StructureKind::Disks, StructureKind::Blobs, StructureKind::Filaments];
        Recipe {
            name: "desk".into(),
            corpus: CorpusKind::Sampled,
            canvas: DESK_CANVAS,
            samples: kinds
                .into_iter()
                .map(|kind| SampleDef {
                    label: kind.name().to_string(),
                    source: SampleSource::Simulated { kind, standin: false },
                })
                .collect(),
            simulated_fovs: SplitCounts { train: 8, val: 1, test: 1 },
            experimental_fovs: SplitCounts { train: 8, val: 1, test: 1 },
            artifacts: ArtifactKind::ALL.to_vec(),
        }
    }

    /// Noise-free prediction set built from the first test field of view of each sample.
    pub fn noisefree(&self) -> Recipe {
        Recipe {
            name: format!("{}-noisefree", self.name),
            corpus: CorpusKind::NoiseFree,
            ..self.clone()
        }
    }

    /// Row-graded prediction set built from the first test field of view of each sample.
    pub fn graded(&self) -> Recipe {
        Recipe {
            name: format!("{}-graded", self.name),
            corpus: CorpusKind::Graded,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("recipe declares no samples".into()));
        }
        if self.canvas < 64 {
            return Err(Error::InvalidInput(format!("canvas {} below 64 px", self.canvas)));
        }
        if self.corpus == CorpusKind::Sampled && self.artifacts.is_empty() {
            return Err(Error::InvalidInput("recipe declares no artifacts".into()));
        }
        let mut labels: Vec<&str> = self.samples.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("sample labels must be unique".into()));
        }
        for s in &self.samples {
            if let SampleSource::Experimental { files } = &s.source {
                if files.is_empty() {
                    return Err(Error::InvalidInput(format!("sample {} lists no files", s.label)));
                }
            }
        }
        Ok(())
    }

    fn fovs(&self, sample: &SampleDef, split: Split) -> usize {
        match sample.source {
            SampleSource::Simulated { standin: false, .. } => self.simulated_fovs.get(split),
            _ => self.experimental_fovs.get(split),
        }
    }
}

fn clean_source(
    recipe: &Recipe,
    sample_idx: usize,
    sample: &SampleDef,
    split: Split,
    fov: usize,
    global_seed: u64,
) -> CleanSource {
    let seed = derive_seed(
        global_seed,
        "clean",
        &[sample_idx as u64, split.index(), fov as u64],
    );
    match &sample.source {
        SampleSource::Simulated { kind, .. } => {
            CleanSource::Structure(StructureSpec::preset(*kind, (recipe.canvas, recipe.canvas), seed))
        }
        SampleSource::Experimental { files } => CleanSource::File {
            path: files[fov % files.len()].clone(),
            crop_seed: seed,
        },
    }
}

fn entry(
    id: String,
    clean_source: CleanSource,
    artifact: Degradation,
    split: Split,
    sample: &str,
    level: Option<u32>,
) -> ManifestEntry {
    let file = format!("images/{id}.{}", ImageFormat::RawF32.extension());
    ManifestEntry {
        id,
        clean_source,
        artifact,
        split,
        label: None,
        sample: sample.to_string(),
        level,
        file,
    }
}

/// Lists every entry of the corpus without touching the filesystem.
pub fn plan_manifest(recipe: &Recipe, global_seed: u64) -> Result<Manifest> {
    recipe.validate()?;
    let mut entries = Vec::new();
    match recipe.corpus {
        CorpusKind::Sampled => {
            for split in [Split::Train, Split::Val, Split::Test] {
                for (si, sample) in recipe.samples.iter().enumerate() {
                    for fov in 0..recipe.fovs(sample, split) {
                        let clean = clean_source(recipe, si, sample, split, fov, global_seed);
                        for (ai, &kind) in recipe.artifacts.iter().enumerate() {
                            let seed = derive_seed(
                                global_seed,
                                "artifact",
                                &[si as u64, split.index(), fov as u64, ai as u64],
                            );
                            let spec = sample_artifact_params(kind, &mut rng_from_seed(seed));
                            let id = format!("{}_{}_f{fov:02}_{}", split.name(), sample.label, kind.name());
                            entries.push(entry(
                                id,
                                clean.clone(),
                                Degradation::Uniform(spec),
                                split,
                                &sample.label,
                                None,
                            ));
                        }
                    }
                }
            }
        }
        CorpusKind::NoiseFree => {
            for (si, sample) in recipe.samples.iter().enumerate() {
                let clean = clean_source(recipe, si, sample, Split::Test, 0, global_seed);
                let mut rng = rng_from_seed(derive_seed(global_seed, "noisefree", &[si as u64]));
                for (li, &sigma) in NOISEFREE_BLUR_LEVELS.iter().enumerate() {
                    let spec = ArtifactSpec {
                        kind: ArtifactKind::Blur,
                        params: ArtifactParams { sigma_blur: Some(sigma), ..Default::default() },
                        seed: rng.gen(),
                    };
                    let level = li as u32 + 1;
                    let id = format!("nf_{}_blur_l{level}", sample.label);
                    entries.push(entry(id, clean.clone(), Degradation::Uniform(spec), Split::Predict, &sample.label, Some(level)));
                }
                for (li, &sigma) in NOISEFREE_VIGNETTING_LEVELS.iter().enumerate() {
                    let spec = ArtifactSpec {
                        kind: ArtifactKind::Vignetting,
                        params: ArtifactParams { sigma_ill: Some(sigma), ..Default::default() },
                        seed: rng.gen(),
                    };
                    let level = li as u32 + 1;
                    let id = format!("nf_{}_vignetting_l{level}", sample.label);
                    entries.push(entry(id, clean.clone(), Degradation::Uniform(spec), Split::Predict, &sample.label, Some(level)));
                }
                for rep in 1..=5u32 {
                    let spec = ArtifactSpec {
                        kind: ArtifactKind::Reference,
                        params: ArtifactParams::default().with_noise(NOISEFREE_REFERENCE_NOISE),
                        seed: rng.gen(),
                    };
                    let id = format!("nf_{}_reference_r{rep}", sample.label);
                    entries.push(entry(id, clean.clone(), Degradation::Uniform(spec), Split::Predict, &sample.label, None));
                }
            }
        }
        CorpusKind::Graded => {
            for (si, sample) in recipe.samples.iter().enumerate() {
                let clean = clean_source(recipe, si, sample, Split::Test, 0, global_seed);
                for (gi, graded) in [GradedArtifactSpec::PRESET_BLUR, GradedArtifactSpec::PRESET_MPG]
                    .into_iter()
                    .enumerate()
                {
                    let seed = derive_seed(global_seed, "graded", &[si as u64, gi as u64]);
                    let artifact = Degradation::Graded { graded, seed };
                    let id = format!("gr_{}_{}", sample.label, artifact.name());
                    entries.push(entry(id, clean.clone(), artifact, Split::Predict, &sample.label, None));
                }
            }
        }
    }
    Ok(Manifest {
        version: MANIFEST_VERSION,
        global_seed,
        entries,
        presets: recipe.clone(),
        labels: None,
    })
}

/// Produces the clean field of view of a manifest entry.
pub fn clean_image(source: &CleanSource, canvas: usize) -> Result<Image> {
    match source {
        CleanSource::Structure(spec) => gen_structure(spec),
        CleanSource::File { path, crop_seed } => {
            let sample = ingest_clean(path)?;
            let img = sample.image;
            if img.height() < canvas || img.width() < canvas {
                return Err(Error::ImageTooSmall {
                    height: img.height(),
                    width: img.width(),
                    min: canvas,
                });
            }
            let mut rng = rng_from_seed(*crop_seed);
            let r = rng.gen_range(0..=img.height() - canvas);
            let c = rng.gen_range(0..=img.width() - canvas);
            let crop = img.crop(r, c, canvas, canvas)?;
            Ok(crate::image::rescale_unit(&crop).with_pixel_size(crop.pixel_size_um))
        }
    }
}

/// Produces the degraded image of a manifest entry.
pub fn render_entry(entry: &ManifestEntry, canvas: usize) -> Result<Image> {
    let clean = clean_image(&entry.clean_source, canvas)?;
    match &entry.artifact {
        Degradation::Uniform(spec) => apply_artifact(&clean, spec),
        Degradation::Graded { graded, seed } => {
            let out = apply_graded(&clean, graded, *seed)?;
            Ok(crate::image::rescale_unit(&out))
        }
    }
}

/// Plans the corpus, writes every image under `out_dir/images`, and saves
/// the manifest as `out_dir/manifest.json`.
pub fn build_dataset(recipe: &Recipe, global_seed: u64, out_dir: &Path) -> Result<Manifest> {
    let manifest = plan_manifest(recipe, global_seed)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    manifest
        .entries
        .par_iter()
        .try_for_each(|e| -> Result<()> {
            let img = render_entry(e, recipe.canvas)?;
            write_image(&img, &out_dir.join(&e.file), ImageFormat::RawF32)
        })?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_sizes() {
        let m = plan_manifest(&Recipe::paper(vec![]).unwrap(), 1).unwrap();
        assert_eq!(m.count(Split::Train), 1728);
        assert_eq!(m.count(Split::Val), 216);
        assert_eq!(m.count(Split::Test), 216);
    }

    #[test]
    fn desk_preset_sizes() {
        let m = plan_manifest(&Recipe::desk(), 1).unwrap();
        assert_eq!(m.count(Split::Train), 3 * 8 * 6);
        assert_eq!(m.count(Split::Val), 18);
        assert_eq!(m.count(Split::Test), 18);
    }

    #[test]
    fn clean_fov_shared_across_artifacts() {
        let m = plan_manifest(&Recipe::desk(), 5).unwrap();
        let group: Vec<_> = m.entries.iter().take(6).collect();
        assert!(group.iter().all(|e| e.clean_source == group[0].clean_source));
        assert_ne!(m.entries[0].clean_source, m.entries[6].clean_source);
    }

    #[test]
    fn noisefree_levels() {
        let m = plan_manifest(&Recipe::desk().noisefree(), 3).unwrap();
        assert_eq!(m.entries.len(), 3 * 15);
        let blur3 = m.entries.iter().find(|e| e.id.ends_with("blur_l3")).unwrap();
        match &blur3.artifact {
            Degradation::Uniform(spec) => {
                assert_eq!(spec.params.sigma_blur, Some(4.5));
                assert!(spec.params.noise().is_none());
            }
            _ => panic!("expected uniform artifact"),
        }
        let refs: Vec<_> = m.entries.iter().filter(|e| e.id.contains("reference")).collect();
        assert!(refs.iter().all(|e| matches!(&e.artifact,
            Degradation::Uniform(s) if s.params.noise() == Some(NOISEFREE_REFERENCE_NOISE))));
    }

    #[test]
    fn manifest_json_roundtrip() {
        let m = plan_manifest(&Recipe::desk().graded(), 3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let m = plan_manifest(&Recipe::desk(), 3).unwrap();
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn inconsistent_recipe_rejected() {
        let mut r = Recipe::desk();
        r.samples.clear();
        assert!(plan_manifest(&r, 0).is_err());
        let mut r = Recipe::desk();
        r.samples.push(r.samples[0].clone());
        assert!(plan_manifest(&r, 0).is_err());
    }
}
