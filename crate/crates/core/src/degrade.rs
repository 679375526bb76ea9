//! Simulated acquisition artifacts: Gaussian blur, mixed Poisson-Gaussian
//! noise, vignetting, and their row-wise graded variants.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{rescale_unit, Image};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Reference,
    Blur,
    DarkNoise,
    ReadoutNoise,
    ShotNoise,
    Vignetting,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Reference,
        ArtifactKind::Blur,
        ArtifactKind::DarkNoise,
        ArtifactKind::ReadoutNoise,
        ArtifactKind::ShotNoise,
        ArtifactKind::Vignetting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Reference => "reference",
            ArtifactKind::Blur => "blur",
            ArtifactKind::DarkNoise => "dark_noise",
            ArtifactKind::ReadoutNoise => "readout_noise",
            ArtifactKind::ShotNoise => "shot_noise",
            ArtifactKind::Vignetting => "vignetting",
        }
    }
}

impl std::str::FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown artifact kind {s:?}")))
    }
}

/// Mixed Poisson-Gaussian noise parameters: dark-count rate, readout
/// variance and shot-noise variance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTriplet {
    pub lambda_dark: f64,
    pub sigma2_read: f64,
    pub alpha_shot: f64,
}

impl NoiseTriplet {
    pub const ZERO: NoiseTriplet = NoiseTriplet::uniform(0.0);

    pub const fn uniform(v: f64) -> Self {
        NoiseTriplet {
            lambda_dark: v,
            sigma2_read: v,
            alpha_shot: v,
        }
    }

    fn is_valid(&self) -> bool {
        [self.lambda_dark, self.sigma2_read, self.alpha_shot]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Baseline noise added to every sampled training image.
pub const BASELINE_NOISE: NoiseTriplet = NoiseTriplet::uniform(0.005);

/// Noise of the high-quality images in the noise-free prediction sets.
pub const NOISEFREE_REFERENCE_NOISE: NoiseTriplet = NoiseTriplet::uniform(0.05);

/// Blur levels of the noise-free prediction set, in pixels.
pub const NOISEFREE_BLUR_LEVELS: [f64; 5] = [1.0, 2.75, 4.5, 6.25, 8.0];

/// Vignetting levels of the noise-free prediction set, as fractions of the lateral size.
pub const NOISEFREE_VIGNETTING_LEVELS: [f64; 5] = [0.6, 0.5, 0.4, 0.3, 0.2];

/// Free parameters of one artifact. Only the fields relevant to the kind are set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_blur: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_dark: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_read: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_shot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_ill: Option<f64>,
}

impl ArtifactParams {
    pub fn with_noise(mut self, noise: NoiseTriplet) -> Self {
        self.lambda_dark = Some(noise.lambda_dark);
        self.sigma2_read = Some(noise.sigma2_read);
        self.alpha_shot = Some(noise.alpha_shot);
        self
    }

    /// The noise triplet, if any noise parameter is set.
    pub fn noise(&self) -> Option<NoiseTriplet> {
        if self.lambda_dark.is_none() && self.sigma2_read.is_none() && self.alpha_shot.is_none() {
            return None;
        }
        Some(NoiseTriplet {
            lambda_dark: self.lambda_dark.unwrap_or(0.0),
            sigma2_read: self.sigma2_read.unwrap_or(0.0),
            alpha_shot: self.alpha_shot.unwrap_or(0.0),
        })
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [
            self.sigma_blur,
            self.lambda_dark,
            self.sigma2_read,
            self.alpha_shot,
            self.sigma_ill,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub params: ArtifactParams,
    pub seed: u64,
}

impl ArtifactSpec {
    pub fn validate(&self) -> Result<()> {
        if self.params.values().any(|v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "artifact parameters must be finite and non-negative: {:?}",
                self.params
            )));
        }
        let p = &self.params;
        let ok = match self.kind {
            ArtifactKind::Blur => p.sigma_blur.is_some() && p.sigma_ill.is_none(),
            ArtifactKind::Vignetting => {
                p.sigma_ill.map_or(false, |s| s > 0.0) && p.sigma_blur.is_none()
            }
            _ => p.sigma_blur.is_none() && p.sigma_ill.is_none() && p.noise().is_some(),
        };
        if !ok {
            return Err(Error::InvalidInput(format!(
                "parameters {:?} do not fit artifact kind {}",
                self.params,
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Applies the artifact described by `spec` to a clean image.
///
/// Blur or vignetting is applied first; if any noise parameter is set,
/// mixed Poisson-Gaussian noise follows. The result is always clamped and
/// rescaled to `[0, 1]`.
pub fn apply_artifact(image: &Image, spec: &ArtifactSpec) -> Result<Image> {
    spec.validate()?;
    let mut out = match spec.kind {
        ArtifactKind::Blur => apply_blur(image, spec.params.sigma_blur.unwrap_or(0.0))?,
        ArtifactKind::Vignetting => apply_vignetting(image, spec.params.sigma_ill.unwrap_or(0.0))?,
        _ => image.clone(),
    };
    out = match spec.params.noise() {
        Some(noise) => apply_mpg_noise(&out, noise, spec.seed)?,
        None => rescale_unit(&out),
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// Blur
// ---------------------------------------------------------------------------

/// Kernel half-width as a multiple of sigma.
pub const BLUR_TRUNCATE: f64 = 4.0;

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (BLUR_TRUNCATE * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Index into `0..n` with half-sample symmetric reflection (`d c b a | a b c d`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn convolve_rows(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let dst = &mut out[r * w..(r + 1) * w];
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(c as isize + k as isize - radius, w)];
            }
            *d = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let dst = &mut out[r * w..(r + 1) * w];
        for (k, &kv) in kernel.iter().enumerate() {
            let sr = reflect(r as isize + k as isize - radius, h);
            let srow = &src[sr * w..(sr + 1) * w];
            for (d, &s) in dst.iter_mut().zip(srow) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Separable Gaussian convolution with reflective boundaries. `sigma = 0` is the identity.
pub fn apply_blur(image: &Image, sigma: f64) -> Result<Image> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidInput(format!("sigma_blur must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    let kernel = gaussian_kernel(sigma);
    let src: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
    let tmp = convolve_rows(&src, h, w, &kernel);
    let out = convolve_cols(&tmp, h, w, &kernel);
    Ok(Image::new(h, w, out.into_iter().map(|v| v as f32).collect())?
        .with_pixel_size(image.pixel_size_um))
}

// ---------------------------------------------------------------------------
// Mixed Poisson-Gaussian noise
// ---------------------------------------------------------------------------

/// Draws one noisy observation of clean intensity `s`.
///
/// Dark counts are Poisson, readout noise is zero-mean Gaussian, and the
/// signal-dependent shot term has mean `s` and variance `alpha_shot * s`,
/// realized as a Gaussian since unit-range intensities make integer Poisson
/// draws degenerate.
#[inline]
fn noisy_sample(s: f64, noise: &NoiseTriplet, dark: Option<&Poisson<f64>>, rng: &mut Rng) -> f64 {
    let mut v = s;
    if let Some(d) = dark {
        v += d.sample(rng);
    }
    if noise.sigma2_read > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        v += noise.sigma2_read.sqrt() * z;
    }
    if noise.alpha_shot > 0.0 && s > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        v += (noise.alpha_shot * s).sqrt() * z;
    }
    v
}

fn poisson(lambda: f64) -> Option<Poisson<f64>> {
    (lambda > 0.0).then(|| Poisson::new(lambda).expect("positive finite rate"))
}

/// Noisy image before the clamp-and-rescale step, in `f64`.
pub fn mpg_noise_raw(image: &Image, noise: NoiseTriplet, seed: u64) -> Result<Vec<f64>> {
    if !noise.is_valid() {
        return Err(Error::InvalidInput(format!("noise parameters must be ≥ 0: {noise:?}")));
    }
    let mut rng = rng_from_seed(seed);
    let dark = poisson(noise.lambda_dark);
    Ok(image
        .pixels()
        .iter()
        .map(|&s| noisy_sample(s as f64, &noise, dark.as_ref(), &mut rng))
        .collect())
}

/// Adds mixed Poisson-Gaussian noise, then clamps negatives and rescales to `[0, 1]`.
pub fn apply_mpg_noise(image: &Image, noise: NoiseTriplet, seed: u64) -> Result<Image> {
    let raw = mpg_noise_raw(image, noise, seed)?;
    let noisy = Image::new(
        image.height(),
        image.width(),
        raw.into_iter().map(|v| v as f32).collect(),
    )?
    .with_pixel_size(image.pixel_size_um);
    Ok(rescale_unit(&noisy))
}

// ---------------------------------------------------------------------------
// Vignetting
// ---------------------------------------------------------------------------

/// Lateral size used to scale `sigma_ill`.
fn lateral_size(image: &Image) -> f64 {
    image.height().max(image.width()) as f64
}

/// Max-normalized Gaussian illumination mask centered at `(h/2, w/2)`.
pub fn vignetting_mask(height: usize, width: usize, sigma_ill: f64) -> Vec<f64> {
    let l = height.max(width) as f64;
    let s = sigma_ill * l;
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let mut mask = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            mask.push((-d2 / (2.0 * s * s)).exp());
        }
    }
    mask
}

pub fn apply_vignetting(image: &Image, sigma_ill: f64) -> Result<Image> {
    if !sigma_ill.is_finite() || sigma_ill <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma_ill must be > 0, got {sigma_ill}")));
    }
    debug_assert!(lateral_size(image) > 0.0);
    let mask = vignetting_mask(image.height(), image.width(), sigma_ill);
    let pixels = image
        .pixels()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| (v as f64 * m) as f32)
        .collect();
    Ok(Image::new(image.height(), image.width(), pixels)?.with_pixel_size(image.pixel_size_um))
}

// ---------------------------------------------------------------------------
// Spatially graded artifacts
// ---------------------------------------------------------------------------

/// Artifact whose strength grows linearly from the top row to the bottom row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradedArtifactSpec {
    Blur {
        start: f64,
        per_row_increase: f64,
    },
    MpgNoise {
        start: NoiseTriplet,
        per_row_increase: NoiseTriplet,
    },
}

impl GradedArtifactSpec {
    /// Row increments used for the spatially varying prediction images.
    pub const PRESET_BLUR: GradedArtifactSpec = GradedArtifactSpec::Blur {
        start: 0.0,
        per_row_increase: 0.02,
    };
    pub const PRESET_MPG: GradedArtifactSpec = GradedArtifactSpec::MpgNoise {
        start: NoiseTriplet::ZERO,
        per_row_increase: NoiseTriplet {
            lambda_dark: 0.001,
            sigma2_read: 0.007,
            alpha_shot: 0.007,
        },
    };

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            GradedArtifactSpec::Blur { start, per_row_increase } => {
                start.is_finite() && per_row_increase.is_finite() && *start >= 0.0 && *per_row_increase >= 0.0
            }
            GradedArtifactSpec::MpgNoise { start, per_row_increase } => {
                start.is_valid() && per_row_increase.is_valid()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("graded parameters must be ≥ 0: {self:?}")))
        }
    }

    pub fn blur_sigma_at(&self, row: usize) -> Option<f64> {
        match *self {
            GradedArtifactSpec::Blur { start, per_row_increase } => {
                Some(start + row as f64 * per_row_increase)
            }
            _ => None,
        }
    }

    /// Noise parameters of `row`, on top of the baseline noise.
    pub fn noise_at(&self, row: usize) -> Option<NoiseTriplet> {
        match *self {
            GradedArtifactSpec::MpgNoise { start, per_row_increase } => {
                let r = row as f64;
                Some(NoiseTriplet {
                    lambda_dark: BASELINE_NOISE.lambda_dark + start.lambda_dark + r * per_row_increase.lambda_dark,
                    sigma2_read: BASELINE_NOISE.sigma2_read + start.sigma2_read + r * per_row_increase.sigma2_read,
                    alpha_shot: BASELINE_NOISE.alpha_shot + start.alpha_shot + r * per_row_increase.alpha_shot,
                })
            }
            _ => None,
        }
    }
}

/// Applies a row-graded artifact. Graded blur convolves each output row with
/// its own Gaussian; graded noise draws each row with its own parameters,
/// adds the baseline noise, then clamps and rescales the whole image.
pub fn apply_graded(image: &Image, spec: &GradedArtifactSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let (h, w) = (image.height(), image.width());
    match spec {
        GradedArtifactSpec::Blur { .. } => {
            let src: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
            let mut out = vec![0.0f32; h * w];
            let mut column_pass = vec![0.0f64; w];
            for r in 0..h {
                let sigma = spec.blur_sigma_at(r).unwrap_or(0.0);
                let kernel = gaussian_kernel(sigma);
                let radius = (kernel.len() / 2) as isize;
                column_pass.iter_mut().for_each(|v| *v = 0.0);
                for (k, &kv) in kernel.iter().enumerate() {
                    let sr = reflect(r as isize + k as isize - radius, h);
                    for (d, &s) in column_pass.iter_mut().zip(&src[sr * w..(sr + 1) * w]) {
                        *d += kv * s;
                    }
                }
                for c in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        acc += kv * column_pass[reflect(c as isize + k as isize - radius, w)];
                    }
                    out[r * w + c] = acc as f32;
                }
            }
            Ok(Image::new(h, w, out)?.with_pixel_size(image.pixel_size_um))
        }
        GradedArtifactSpec::MpgNoise { .. } => {
            let mut rng = rng_from_seed(seed);
            let mut out = Vec::with_capacity(h * w);
            for r in 0..h {
                let noise = spec.noise_at(r).expect("noise spec");
                let dark = poisson(noise.lambda_dark);
                for &s in image.row(r) {
                    out.push(noisy_sample(s as f64, &noise, dark.as_ref(), &mut rng) as f32);
                }
            }
            let noisy = Image::new(h, w, out)?.with_pixel_size(image.pixel_size_um);
            Ok(rescale_unit(&noisy))
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter sampling
// ---------------------------------------------------------------------------

/// `[min, max]` regime of the free parameter of each sampled artifact.
pub fn parameter_range(kind: ArtifactKind) -> (f64, f64) {
    match kind {
        ArtifactKind::Reference => (0.005, 0.005),
        ArtifactKind::Blur => (1.0, 8.0),
        ArtifactKind::DarkNoise => (0.3, 0.5),
        ArtifactKind::ReadoutNoise => (0.7, 1.5),
        ArtifactKind::ShotNoise => (1.0, 5.0),
        ArtifactKind::Vignetting => (0.2, 0.6),
    }
}

/// Normal draw centered in the range with a quarter-range deviation,
/// clipped to the range.
fn draw_in_range(range: (f64, f64), rng: &mut Rng) -> f64 {
    let (lo, hi) = range;
    if hi <= lo {
        return lo;
    }
    let normal = Normal::new((lo + hi) / 2.0, (hi - lo) / 4.0).expect("positive deviation");
    normal.sample(rng).clamp(lo, hi)
}

/// Draws the free parameter of `kind` plus the baseline noise triplet.
pub fn sample_artifact_params(kind: ArtifactKind, rng: &mut Rng) -> ArtifactSpec {
    let v = draw_in_range(parameter_range(kind), rng);
    let base = ArtifactParams::default().with_noise(BASELINE_NOISE);
    let params = match kind {
        ArtifactKind::Reference => base,
        ArtifactKind::Blur => ArtifactParams { sigma_blur: Some(v), ..base },
        ArtifactKind::DarkNoise => ArtifactParams { lambda_dark: Some(v), ..base },
        ArtifactKind::ReadoutNoise => ArtifactParams { sigma2_read: Some(v), ..base },
        ArtifactKind::ShotNoise => ArtifactParams { alpha_shot: Some(v), ..base },
        ArtifactKind::Vignetting => ArtifactParams { sigma_ill: Some(v), ..base },
    };
    ArtifactSpec {
        kind,
        params,
        seed: rng.gen(),
    }
}
