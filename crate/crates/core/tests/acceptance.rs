//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use itertools::Itertools;
use microiqa::dataset::{build_dataset, load_entry_image, Manifest, Recipe, Split, SplitCounts};
use microiqa::degrade::{
    apply_artifact, mpg_noise_raw, ArtifactKind, ArtifactParams, ArtifactSpec, NoiseTriplet,
    NOISEFREE_BLUR_LEVELS, NOISEFREE_REFERENCE_NOISE,
};
use microiqa::eval::{bench, grouped_krcc, kendall_tau};
use microiqa::frc::frc_resolution;
use microiqa::image::{partition_patches, Image};
use microiqa::labels::label_with_frc;
use microiqa::net::{aggregate, init_model, weighted_mean, Model, ModelSpec, Network, PatchPrediction};
use microiqa::predict::predict_image;
use microiqa::rng::rng_from_seed;
use microiqa::synth::{gen_structure, StructureKind, StructureSpec};
use microiqa::train::{
    load_split, loss_wp, loss_wp_gradients, train_observed, train_on, zscore_fit, LabelTarget,
    LabeledImage, TrainConfig,
};
use rand::Rng;

const SEED: u64 = 20_241;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Shared state: the desk corpus and the model trained on it.
struct Desk {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    manifest: Manifest,
    model: Option<Model>,
}

impl Desk {
    fn build() -> Desk {
        let dir = tempfile::tempdir().expect("tempdir");
        let root = dir.path().join("desk");
        let mut manifest = build_dataset(&Recipe::desk(), SEED, &root).expect("desk corpus");
        let failures = label_with_frc(&mut manifest, &root).expect("FRC labels");
        assert!(failures.is_empty(), "unlabeled entries: {failures:?}");
        Desk { root, manifest, model: None, _dir: dir }
    }

    fn split(&self, split: Split) -> Vec<LabeledImage> {
        load_split(&self.manifest, &self.root, split).expect("labeled split")
    }
}

fn frc_target() -> LabelTarget {
    LabelTarget { name: "frc_resolution".into(), higher_is_better: false }
}

fn c01_architecture() -> Verdict {
    let start = Instant::now();
    let model = init_model(ModelSpec::default(), SEED).map_err(|e| e.to_string())?;
    let count = model.parameter_count();
    let secs = start.elapsed().as_secs_f64();
    check(
        count == 5_237_986 && secs < 1.0,
        format!("{count} trainable parameters (expected 5237986) in {secs:.3}s"),
    )
}

fn c02_loss() -> Verdict {
    let cases = [
        (vec![0.0, 1.0], vec![1.0, 3.0], 0.75, (0.0, 0.5, 0.5)),
        (vec![0.2, 0.2, 0.2], vec![1.0, 5.0, 2.0], 0.2, (0.0, 0.0, 0.0)),
        (vec![1.0], vec![2.0], 0.0, (1.0, 1.0, 2.0)),
        (vec![-1.0, 3.0], vec![1.0, 1.0], 0.0, (1.0, 2.0, 3.0)),
        (vec![0.0, 1.0], vec![10.0, 30.0], 0.75, (0.0, 0.5, 0.5)),
    ];
    let mut worst: f64 = 0.0;
    for (q, a, t, (ew, ep, ewp)) in &cases {
        let l = loss_wp(&PatchPrediction { qualities: q.clone(), weights: a.clone() }, *t);
        worst = worst.max((l.e_w - ew).abs()).max((l.e_p - ep).abs()).max((l.e_wp - ewp).abs());
    }
    check(worst <= 1e-12, format!("{} cases, max deviation {worst:.2e}", cases.len()))
}

fn c03_homogeneity() -> Verdict {
    let mut rng = rng_from_seed(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..300);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let a: Vec<f64> = (0..n).map(|_| 1e-6 + rng.gen_range(0.0..10.0)).collect();
        let base = weighted_mean(&q, &a);
        for c in [1e-3, 1.0, 1e3] {
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            worst = worst.max((weighted_mean(&q, &scaled) - base).abs());
        }
    }
    check(worst < 1e-12, format!("1000 cases x 3 scales, max |dy| {worst:.2e}"))
}

/// E_wp of a fixed-dropout forward pass of the f64 network.
fn loss_of(net: &Network<f64>, patches: &[f64], batch: usize, target: f64) -> f64 {
    let (out, _) = net
        .forward_train(patches, batch, Some(&mut rng_from_seed(SEED + 1)))
        .expect("forward");
    let floor = net.spec().weight_floor;
    let pred = PatchPrediction {
        qualities: out.quality,
        weights: out.weight_logit.iter().map(|&z| z.max(0.0) + floor).collect(),
    };
    loss_wp(&pred, target).e_wp
}

fn c04_gradients() -> Verdict {
    let net: Network<f64> = Network::init(ModelSpec::scaled(8), SEED).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(SEED + 2);
    let batch = 4;
    let clean = gen_structure(&StructureSpec::preset(StructureKind::Mixed, (64, 64), SEED)).map_err(|e| e.to_string())?;
    let grid = partition_patches(&clean).map_err(|e| e.to_string())?;
    let patches: Vec<f64> = grid.data().iter().map(|&v| v as f64 + rng.gen_range(-0.05..0.05)).collect();
    let target = 0.3;

    let (out, cache) = net
        .forward_train(&patches, batch, Some(&mut rng_from_seed(SEED + 1)))
        .map_err(|e| e.to_string())?;
    let floor = net.spec().weight_floor;
    let pred = PatchPrediction {
        qualities: out.quality.clone(),
        weights: out.weight_logit.iter().map(|&z| z.max(0.0) + floor).collect(),
    };
    let (_, dq, da) = loss_wp_gradients(&pred, target);
    let dz: Vec<f64> = da.iter().zip(&out.weight_logit).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
    let mut grad = vec![0.0; net.parameter_count()];
    net.backward(cache, &dq, &dz, &mut grad);

    let h = 1e-6;
    let central = |i: usize| {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        (loss_of(&plus, &patches, batch, target) - loss_of(&minus, &patches, batch, target)) / (2.0 * h)
    };

    let active: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-7).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..120 {
        let i = active[rng.gen_range(0..active.len())];
        let fd = central(i);
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()));
        checked += 1;
    }
    // Coordinates with zero analytic gradient must be flat numerically too.
    let idle: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] == 0.0).collect();
    let mut idle_worst: f64 = 0.0;
    for _ in 0..20.min(idle.len()) {
        let i = idle[rng.gen_range(0..idle.len())];
        idle_worst = idle_worst.max(central(i).abs());
    }
    check(
        worst < 1e-4 && idle_worst < 1e-8,
        format!(
            "{checked} coordinates of {} parameters, max relative error {worst:.2e}; zero-gradient coordinates max |fd| {idle_worst:.1e}",
            grad.len()
        ),
    )
}

fn c05_noise_statistics() -> Verdict {
    // (lambda_dark, sigma2_read, alpha_shot, intensity) spanning the sampled regimes.
    let settings = [
        (0.3, 0.005, 0.005, 0.5),
        (0.5, 0.005, 0.005, 0.2),
        (0.005, 0.7, 0.005, 0.8),
        (0.005, 1.5, 0.005, 0.4),
        (0.005, 0.005, 1.0, 0.9),
        (0.005, 0.005, 5.0, 0.6),
    ];
    let mut worst: f64 = 0.0;
    for (k, &(dark, read, shot, s)) in settings.iter().enumerate() {
        let img = Image::filled(1000, 1000, s as f32);
        let noise = NoiseTriplet { lambda_dark: dark, sigma2_read: read, alpha_shot: shot };
        let v = mpg_noise_raw(&img, noise, SEED + k as u64).map_err(|e| e.to_string())?;
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let s = s as f32 as f64;
        let want_mean = s + dark;
        let want_var = dark + read + shot * s;
        worst = worst
            .max(((mean - want_mean) / want_mean).abs())
            .max(((var - want_var) / want_var).abs());
    }
    check(
        worst < 0.02,
        format!("{} settings at 1e6 samples, max relative moment error {:.3}%", settings.len(), worst * 100.0),
    )
}

fn blur_series(clean: &Image, noise: Option<NoiseTriplet>, seed: u64) -> Vec<f64> {
    NOISEFREE_BLUR_LEVELS
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let mut params = ArtifactParams { sigma_blur: Some(sigma), ..Default::default() };
            if let Some(n) = noise {
                params = params.with_noise(n);
            }
            let spec = ArtifactSpec { kind: ArtifactKind::Blur, params, seed: seed * 10 + i as u64 };
            let img = apply_artifact(clean, &spec).expect("blur");
            frc_resolution(&img).expect("frc").resolution_px
        })
        .collect()
}

fn c06_frc() -> Verdict {
    let levels: Vec<f64> = (1..=5).map(f64::from).collect();
    let (mut noisy_ok, mut clean_monotone) = (0, 0);
    let mut clean_example = Vec::new();
    for seed in 0..10u64 {
        let clean = gen_structure(&StructureSpec::preset(StructureKind::Mixed, (512, 512), SEED + seed)).map_err(|e| e.to_string())?;
        let noisy = blur_series(&clean, Some(NOISEFREE_REFERENCE_NOISE), SEED + seed);
        if kendall_tau(&noisy, &levels).map_or(false, |t| t == 1.0) {
            noisy_ok += 1;
        }
        let plain = blur_series(&clean, None, SEED + seed);
        if kendall_tau(&plain, &levels).map_or(false, |t| t == 1.0) {
            clean_monotone += 1;
        }
        if seed == 0 {
            clean_example = plain;
        }
    }
    check(
        noisy_ok == 10 && clean_monotone == 0,
        format!(
            "(a) reference noise: tau = 1 on {noisy_ok}/10 seeds; (b) noise-free: monotone on {clean_monotone}/10 seeds (seed 0 resolutions {clean_example:.2?} px)"
        ),
    )
}

fn nf_scores(model: &Model, manifest: &Manifest, root: &Path, kind: &str) -> (Vec<f64>, Vec<u32>) {
    let mut scores = Vec::new();
    let mut levels = Vec::new();
    for e in &manifest.entries {
        if e.id.contains(&format!("_{kind}_l")) {
            let img = load_entry_image(root, e).expect("noise-free image");
            scores.push(predict_image(model, &img).expect("prediction").score);
            levels.push(e.level.expect("level"));
        }
    }
    (scores, levels)
}

fn c07_ranking(desk: &mut Desk) -> Verdict {
    let train = desk.split(Split::Train);
    let val = desk.split(Split::Val);
    let config = TrainConfig {
        epochs: 100,
        batch_patches: 16,
        seed: SEED,
        ..Default::default()
    };
    let start = Instant::now();
    let model = init_model(ModelSpec::default(), SEED).map_err(|e| e.to_string())?;
    let outcome = train_observed(model, &train, &val, &frc_target(), &config, |r, _| {
        if r.epoch % 10 == 0 {
            eprintln!("  desk training epoch {}: train E_wp {:.4}", r.epoch, r.train_e_wp);
        }
    })
    .map_err(|e| e.to_string())?;
    let train_secs = start.elapsed().as_secs_f64();

    let nf_root = desk.root.with_file_name("noisefree");
    let nf = build_dataset(&Recipe::desk().noisefree(), SEED, &nf_root).map_err(|e| e.to_string())?;
    let model = outcome.model;
    let (bs, bl) = nf_scores(&model, &nf, &nf_root, "blur");
    let (vs, vl) = nf_scores(&model, &nf, &nf_root, "vignetting");
    let blur = grouped_krcc(&bs, &bl, model.higher_is_better).map_err(|e| e.to_string())?;
    let vign = grouped_krcc(&vs, &vl, model.higher_is_better).map_err(|e| e.to_string())?;
    desk.model = Some(model);
    check(
        blur >= 0.6 && vign >= 0.6,
        format!(
            "{} train images x 100 epochs ({train_secs:.0}s): grouped KRCC blur {blur:.2}, vignetting {vign:.2} (need >= 0.6)",
            train.len()
        ),
    )
}

fn c08_overfit(desk: &Desk) -> Verdict {
    let train = desk.split(Split::Train);
    let stats = zscore_fit(&train.iter().map(|i| i.label).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let single = vec![train[0].clone()];
    let config = TrainConfig {
        epochs: 200,
        batch_patches: single[0].patches.len(),
        seed: SEED,
        label_stats: Some(stats),
        ..Default::default()
    };
    let model = init_model(ModelSpec::default(), SEED).map_err(|e| e.to_string())?;
    let outcome = train_on(model, &single, &[], &frc_target(), &config).map_err(|e| e.to_string())?;
    let pred = microiqa::net::forward_patches(&outcome.model, &single[0].patches).map_err(|e| e.to_string())?;
    let target = (single[0].label - stats.mean) / stats.std;
    let e_w = (aggregate(&pred) - target).abs();
    check(
        e_w < 0.05,
        format!("{} after 200 epochs: E_w = {e_w:.4} normalized units (target {target:.3})", single[0].id),
    )
}

fn c09_maps(desk: &Desk) -> Verdict {
    let model = desk.model.clone().map_or_else(|| init_model(ModelSpec::default(), SEED), Ok).map_err(|e: microiqa::Error| e.to_string())?;
    let clean = gen_structure(&StructureSpec::preset(StructureKind::Filaments, (512, 512), SEED)).map_err(|e| e.to_string())?;
    let res = predict_image(&model, &clean).map_err(|e| e.to_string())?;
    let normalized = res.normalized_qualities(&model);
    let recomputed = model.denormalize(weighted_mean(&normalized, &res.patch_weight.values));
    let diff = (recomputed - res.score).abs();
    let min_weight = res.patch_weight.values.iter().copied().fold(f64::INFINITY, f64::min);
    let shape = (res.patch_quality.rows, res.patch_quality.cols, res.patch_weight.rows, res.patch_weight.cols);
    check(
        shape == (16, 16, 16, 16) && diff <= 1e-9 && min_weight >= 1e-6,
        format!("maps {}x{}, |aggregate - score| = {diff:.1e}, min weight {min_weight:.2e}", shape.0, shape.1),
    )
}

fn c10_throughput(desk: &Desk) -> Verdict {
    let model = desk.model.clone().map_or_else(|| init_model(ModelSpec::default(), SEED), Ok).map_err(|e: microiqa::Error| e.to_string())?;
    let images: Vec<Image> = (0..100u64)
        .map(|i| {
            let kind = StructureKind::ALL[i as usize % StructureKind::ALL.len()];
            gen_structure(&StructureSpec::preset(kind, (512, 512), SEED + i)).expect("structure")
        })
        .collect();
    let report = bench(&images, &model).map_err(|e| e.to_string())?;
    check(
        report.model_faster,
        format!(
            "100 images 512x512 on {} thread(s): model {:.2}s vs direct FRC {:.2}s",
            report.threads, report.model_seconds, report.frc_seconds
        ),
    )
}

fn file_bytes(root: &Path, manifest: &Manifest) -> HashMap<String, Vec<u8>> {
    manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), std::fs::read(root.join(&e.file)).expect("image file")))
        .collect()
}

fn c11_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut recipe = Recipe::desk();
    recipe.simulated_fovs = SplitCounts { train: 2, val: 1, test: 1 };
    let a = build_dataset(&recipe, SEED, &dir.path().join("a")).map_err(|e| e.to_string())?;
    let b = build_dataset(&recipe, SEED, &dir.path().join("b")).map_err(|e| e.to_string())?;
    let data_same = a == b && file_bytes(&dir.path().join("a"), &a) == file_bytes(&dir.path().join("b"), &b);

    let model = init_model(ModelSpec::default(), SEED).map_err(|e| e.to_string())?;
    let img = load_entry_image(&dir.path().join("a"), &a.entries[0]).map_err(|e| e.to_string())?;
    let p1 = predict_image(&model, &img).map_err(|e| e.to_string())?;
    let p2 = predict_image(&model, &img).map_err(|e| e.to_string())?;
    let infer_same = p1.score.to_bits() == p2.score.to_bits() && p1 == p2;

    let mut m = a.clone();
    label_with_frc(&mut m, &dir.path().join("a")).map_err(|e| e.to_string())?;
    let train: Vec<LabeledImage> = load_split(&m, &dir.path().join("a"), Split::Train)
        .map_err(|e| e.to_string())?
        .into_iter()
        .take(6)
        .collect();
    let config = TrainConfig { epochs: 2, batch_patches: 16, seed: SEED, ..Default::default() };
    let run = || train_on(model.clone(), &train, &[], &frc_target(), &config).expect("training");
    let (r1, r2) = (run(), run());
    let train_same = r1.history == r2.history && r1.model.network.params() == r2.model.network.params();
    check(
        data_same && infer_same && train_same,
        format!(
            "dataset {} entries identical: {data_same}; inference bit-identical: {infer_same}; training (CPU f32 backend, tolerance 0) bit-identical: {train_same}",
            a.entries.len()
        ),
    )
}

/// O(n^2) concordant/discordant pair count.
fn tau_brute(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx * dy > 0.0 {
                s += 1;
            } else if dx * dy < 0.0 {
                s -= 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as u64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    (denom > 0.0).then(|| s as f64 / denom)
}

fn c12_krcc() -> Verdict {
    let mut cases = 0;
    let mut mismatches = 0;
    let mut compare = |x: &[f64], y: &[f64]| {
        cases += 1;
        let fast = kendall_tau(x, y).ok();
        if fast != tau_brute(x, y) {
            mismatches += 1;
        }
    };
    for n in 2..=8usize {
        let x: Vec<f64> = (0..n).map(|v| v as f64).collect();
        for perm in (0..n).permutations(n) {
            let y: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            compare(&x, &y);
        }
    }
    let mut rng = rng_from_seed(SEED + 12);
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let kx = rng.gen_range(1..6);
        let ky = rng.gen_range(1..6);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..kx) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..ky) as f64 * 0.5).collect();
        compare(&x, &y);
    }
    check(mismatches == 0, format!("{cases} inputs (all permutations n <= 8 plus 1000 tied), {mismatches} mismatches"))
}

fn main() {
    let mut desk: Option<Desk> = None;
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] C{id:02} {name}: {detail} [{secs:.1}s]");
        results.push((id, name, verdict));
    };

    run(1, "architecture fidelity", &mut c01_architecture);
    run(2, "loss arithmetic", &mut c02_loss);
    run(3, "aggregation homogeneity", &mut c03_homogeneity);
    run(4, "gradient correctness", &mut c04_gradients);
    run(5, "noise model statistics", &mut c05_noise_statistics);
    run(6, "FRC sanity and noise-free failure", &mut c06_frc);
    run(7, "desk-scale ranking regularization", &mut || {
        let d = desk.get_or_insert_with(Desk::build);
        c07_ranking(d)
    });
    run(8, "single-image overfit", &mut || c08_overfit(desk.get_or_insert_with(Desk::build)));
    run(9, "patch-map geometry", &mut || c09_maps(desk.get_or_insert_with(Desk::build)));
    run(10, "throughput direction", &mut || c10_throughput(desk.get_or_insert_with(Desk::build)));
    run(11, "determinism", &mut c11_determinism);
    run(12, "KRCC oracle equivalence", &mut c12_krcc);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| format!("C{:02} {}", r.0, r.1))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
