//! Subcommand implementations. Each returns a one-line JSON summary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use microiqa::dataset::{build_dataset, Manifest, Recipe, SampleDef, SampleSource, Split, MANIFEST_FILE};
use microiqa::eval::{bench, build_ranking, group_means, grouped_krcc, regression_report, write_scatter};
use microiqa::frc::{frc_resolution, frc_settings};
use microiqa::io::{read_image_auto, write_image, ImageFormat};
use microiqa::labels::{apply_external_labels, label_with_frc, read_label_csv};
use microiqa::net::{init_model, load_model, save_model, ModelSpec};
use microiqa::predict::{predict_batch, write_batch_report};
use microiqa::rng::derive_seed;
use microiqa::synth::{gen_structure, StructureKind, StructureSpec};
use microiqa::train::{train_model, write_history, write_run_metadata, CheckpointPolicy, TrainConfig};
use microiqa::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;
use crate::CliError;

type CmdResult = Result<Value, CliError>;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    fs::write(path, bytes).map_err(|e| CliError::Core(Error::Io { path: path.to_path_buf(), source: e }))
}

fn data_error(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::InvalidInput(msg.into()))
}

pub fn run(cfg: &ResolvedConfig) -> CmdResult {
    let out = &cfg.global.out_dir;
    ensure_dir(out)?;
    write_json(&out.join(format!("{}.config.json", cfg.command.name())), cfg)?;
    let seed = cfg.global.seed;
    let summary = match &cfg.command {
        Command::Simulate(a) => simulate(a, seed, out),
        Command::Degrade(a) => degrade(a, seed, out),
        Command::Frc(a) => frc(a, out),
        Command::Label(a) => label(a, out),
        Command::Train(a) => train(a, seed, out),
        Command::Predict(a) => predict(a, out),
        Command::Rank(a) => rank(a, out),
        Command::Krcc(a) => krcc(a, out),
        Command::Report(a) => report(a, out),
        Command::Bench(a) => bench_cmd(a, seed, out),
    }?;
    Ok(json!({ "status": "ok", "command": cfg.command.name(), "summary": summary }))
}

fn image_format(f: OutputFormat) -> ImageFormat {
    match f {
        OutputFormat::F32 => ImageFormat::RawF32,
        OutputFormat::Png => ImageFormat::Png16,
        OutputFormat::Tif => ImageFormat::Tiff16,
    }
}

fn simulate(a: &SimulateArgs, seed: u64, out: &Path) -> CmdResult {
    let specs: Vec<StructureSpec> = match &a.specs {
        Some(path) => {
            let text = fs::read(path).map_err(|e| CliError::Core(Error::Io { path: path.clone(), source: e }))?;
            serde_json::from_slice(&text).map_err(Error::from)?
        }
        None => {
            let kinds = a
                .kind
                .iter()
                .map(|k| k.parse::<StructureKind>().map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            kinds
                .iter()
                .enumerate()
                .flat_map(|(ki, &kind)| {
                    (0..a.count).map(move |i| {
                        let s = derive_seed(seed, "simulate", &[ki as u64, i as u64]);
                        StructureSpec::preset(kind, (a.height, a.width), s)
                    })
                })
                .collect()
        }
    };
    let dir = out.join("simulate");
    ensure_dir(&dir)?;
    let format = image_format(a.format);
    let files = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let img = gen_structure(spec)?;
            let path = dir.join(format!("{}_{i:04}.{}", spec.kind.name(), format.extension()));
            write_image(&img, &path, format)?;
            Ok(path.display().to_string())
        })
        .collect::<microiqa::Result<Vec<_>>>()?;
    write_json(&dir.join("specs.json"), &specs)?;
    Ok(json!({ "images": files.len(), "dir": dir }))
}

fn experimental_samples(dirs: &[PathBuf]) -> Result<Vec<SampleDef>, CliError> {
    dirs.iter()
        .map(|dir| {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| CliError::Core(Error::Io { path: dir.clone(), source: e }))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| ImageFormat::from_path(p).is_ok())
                .collect();
            files.sort();
            let label = dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("experimental")
                .to_string();
            Ok(SampleDef { label, source: SampleSource::Experimental { files } })
        })
        .collect()
}

fn degrade(a: &DegradeArgs, seed: u64, out: &Path) -> CmdResult {
    let recipe = match &a.recipe {
        Some(path) => {
            let text = fs::read(path).map_err(|e| CliError::Core(Error::Io { path: path.clone(), source: e }))?;
            serde_json::from_slice(&text).map_err(Error::from)?
        }
        None => {
            let base = || -> Result<Recipe, CliError> {
                Ok(match a.base {
                    Base::Desk => Recipe::desk(),
                    Base::Paper => Recipe::paper(experimental_samples(&a.experimental)?)?,
                })
            };
            match a.preset {
                Preset::Desk => Recipe::desk(),
                Preset::Paper => Recipe::paper(experimental_samples(&a.experimental)?)?,
                Preset::Noisefree => base()?.noisefree(),
                Preset::Graded => base()?.graded(),
            }
        }
    };
    let dir = out.join(a.name.clone().unwrap_or_else(|| recipe.name.clone()));
    let manifest = build_dataset(&recipe, seed, &dir)?;
    Ok(json!({ "entries": manifest.entries.len(), "manifest": dir.join(MANIFEST_FILE) }))
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `(id, path)` pairs from positional files and/or a manifest.
fn collect_inputs(files: &[PathBuf], manifest: Option<&Path>, split: Option<Split>) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut inputs: Vec<(String, PathBuf)> = files
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            (id, p.clone())
        })
        .collect();
    if let Some(path) = manifest {
        let m = Manifest::load(path)?;
        let root = manifest_root(path);
        inputs.extend(
            m.entries
                .iter()
                .filter(|e| split.map_or(true, |s| e.split == s))
                .map(|e| (e.id.clone(), root.join(&e.file))),
        );
    }
    if inputs.is_empty() {
        return Err(CliError::Usage("no input images (pass files or --manifest)".into()));
    }
    Ok(inputs)
}

fn frc(a: &FrcArgs, out: &Path) -> CmdResult {
    let inputs = collect_inputs(&a.inputs, a.manifest.as_deref(), None)?;
    let results: Vec<_> = inputs
        .par_iter()
        .map(|(_, path)| read_image_auto(path).and_then(|img| frc_resolution(&img)))
        .collect();
    let path = out.join(&a.output);
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["id", "cutoff_freq", "resolution_px", "resolution_um", "no_crossing_flag"])
        .map_err(Error::from)?;
    let mut failures = Vec::new();
    for ((id, _), result) in inputs.iter().zip(results) {
        match result {
            Ok(r) => w
                .write_record([
                    id.clone(),
                    r.cutoff_frequency.to_string(),
                    r.resolution_px.to_string(),
                    r.resolution_um.map(|v| v.to_string()).unwrap_or_default(),
                    r.no_crossing.to_string(),
                ])
                .map_err(Error::from)?,
            Err(e) => {
                log::warn!("FRC failed for {id}: {e}");
                failures.push(json!({ "id": id, "error": e.to_string() }));
            }
        }
    }
    w.flush().map_err(|e| CliError::Core(Error::Io { path: path.clone(), source: e }))?;
    write_json(&path.with_extension("settings.json"), &frc_settings())?;
    Ok(json!({ "measured": inputs.len() - failures.len(), "failures": failures, "csv": path }))
}

fn label(a: &LabelArgs, out: &Path) -> CmdResult {
    let mut manifest = Manifest::load(&a.manifest)?;
    let report = match &a.external {
        Some(csv) => {
            let labels = read_label_csv(csv)?;
            let unlabeled = apply_external_labels(&mut manifest, &labels, &a.target_name, a.higher_is_better, csv)?;
            json!({ "source": "external", "unlabeled": unlabeled })
        }
        None => {
            let failures = label_with_frc(&mut manifest, &manifest_root(&a.manifest))?;
            let failures: Vec<Value> = failures.iter().map(|f| json!({ "id": f.id, "reason": f.reason })).collect();
            json!({ "source": "frc", "unlabeled": failures })
        }
    };
    manifest.save(&a.manifest)?;
    write_json(&out.join("label_report.json"), &report)?;
    let labeled = manifest.entries.iter().filter(|e| e.label.is_some()).count();
    Ok(json!({ "labeled": labeled, "entries": manifest.entries.len(), "manifest": a.manifest }))
}

fn train(a: &TrainArgs, seed: u64, out: &Path) -> CmdResult {
    let manifest = Manifest::load(&a.manifest)?;
    let spec = match a.width_divisor {
        0 => return Err(CliError::Usage("--width-divisor must be at least 1".into())),
        1 => ModelSpec::default(),
        d => ModelSpec::scaled(d),
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_patches: a.batch_patches,
        learning_rate: a.learning_rate,
        seed,
        checkpoint: match a.checkpoint {
            Checkpoint::Final => CheckpointPolicy::Final,
            Checkpoint::BestValidation => CheckpointPolicy::BestValidation,
        },
        ..TrainConfig::default()
    };
    config.validate()?;
    let model = init_model(spec, seed)?;
    let outcome = train_model(model, &manifest, &manifest_root(&a.manifest), &config)?;
    let model_path = out.join(&a.model_out);
    save_model(&outcome.model, &model_path)?;
    write_history(&outcome.history, &out.join("history.csv"))?;
    write_run_metadata(&outcome, &config, &out.join("run.json"))?;
    let last = outcome.history.last();
    Ok(json!({
        "model": model_path,
        "epochs": outcome.history.len(),
        "selected_epoch": outcome.selected_epoch,
        "final_train_E_wp": last.map(|r| r.train_e_wp),
        "final_val_metric": last.and_then(|r| r.val_metric),
    }))
}

/// Direction and provenance of a predictions CSV, written beside it.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionMeta {
    target_name: String,
    higher_is_better: bool,
    model: PathBuf,
    arch_fingerprint: String,
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    [Split::Train, Split::Val, Split::Test, Split::Predict]
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| CliError::Usage(format!("unknown split {s:?}")))
}

fn predict(a: &PredictArgs, out: &Path) -> CmdResult {
    let model = load_model(&a.model)?;
    let split = a.split.as_deref().map(parse_split).transpose()?;
    let inputs = collect_inputs(&a.inputs, a.manifest.as_deref(), split)?;
    let records = predict_batch(&model, &inputs, Some(&out.join("maps")), a.heatmaps)?;
    let path = out.join(&a.output);
    write_batch_report(&records, &path)?;
    let meta = PredictionMeta {
        target_name: model.target_name.clone(),
        higher_is_better: model.higher_is_better,
        model: a.model.clone(),
        arch_fingerprint: model.fingerprint(),
    };
    write_json(&path.with_extension("meta.json"), &meta)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    Ok(json!({ "images": records.len(), "failed": failed, "csv": path }))
}

#[derive(Deserialize)]
struct PredictionRow {
    id: String,
    score: Option<f64>,
}

/// Scored ids from a predictions CSV plus the score direction.
fn read_predictions(path: &Path, order: Option<Order>) -> Result<(Vec<String>, Vec<f64>, bool), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let (mut ids, mut scores) = (Vec::new(), Vec::new());
    for row in reader.deserialize() {
        let row: PredictionRow = row.map_err(Error::from)?;
        match row.score {
            Some(s) => {
                ids.push(row.id);
                scores.push(s);
            }
            None => log::warn!("{} has no score; skipped", row.id),
        }
    }
    let higher_is_better = match order {
        Some(o) => o == Order::HigherIsBetter,
        None => {
            let meta_path = path.with_extension("meta.json");
            let text = fs::read(&meta_path).map_err(|_| {
                CliError::Usage(format!("{} not found; pass --order", meta_path.display()))
            })?;
            let meta: PredictionMeta = serde_json::from_slice(&text).map_err(Error::from)?;
            meta.higher_is_better
        }
    };
    Ok((ids, scores, higher_is_better))
}

fn rank(a: &RankArgs, out: &Path) -> CmdResult {
    let (ids, scores, higher_is_better) = read_predictions(&a.predictions, a.order)?;
    let manifest = a.manifest.as_deref().map(Manifest::load).transpose()?;
    let lookup: HashMap<&str, _> = manifest
        .iter()
        .flat_map(|m| m.entries.iter().map(|e| (e.id.as_str(), e)))
        .collect();
    if manifest.is_some() {
        if let Some(missing) = ids.iter().find(|id| !lookup.contains_key(id.as_str())) {
            return Err(CliError::Core(Error::Manifest(format!("{missing} not in the manifest"))));
        }
    }
    let ranking = build_ranking(&ids, &scores, higher_is_better)?;
    let path = out.join(&a.output);
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["rank", "id", "score", "level", "sample"]).map_err(Error::from)?;
    for r in &ranking {
        let entry = lookup.get(r.id.as_str());
        w.write_record([
            r.rank.to_string(),
            r.id.clone(),
            r.score.to_string(),
            entry.and_then(|e| e.level).map(|l| l.to_string()).unwrap_or_default(),
            entry.map(|e| e.sample.clone()).unwrap_or_default(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| CliError::Core(Error::Io { path: path.clone(), source: e }))?;
    Ok(json!({ "ranked": ranking.len(), "higher_is_better": higher_is_better, "csv": path }))
}

fn krcc(a: &KrccArgs, out: &Path) -> CmdResult {
    let (ids, scores, higher_is_better) = read_predictions(&a.predictions, a.order)?;
    let manifest = Manifest::load(&a.manifest)?;
    let score_of: HashMap<&str, f64> = ids.iter().map(String::as_str).zip(scores.iter().copied()).collect();
    let mut groups: Vec<(&str, Vec<f64>, Vec<u32>)> = Vec::new();
    for e in &manifest.entries {
        let (Some(level), Some(&score)) = (e.level, score_of.get(e.id.as_str())) else {
            continue;
        };
        let name = e.artifact.name();
        let pos = match groups.iter().position(|g| g.0 == name) {
            Some(p) => p,
            None => {
                groups.push((name, Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        groups[pos].1.push(score);
        groups[pos].2.push(level);
    }
    if groups.is_empty() {
        return Err(data_error("no predicted entries carry an artifact level"));
    }
    let path = out.join(&a.output);
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["artifact", "images", "levels", "krcc", "group_means"]).map_err(Error::from)?;
    let mut results = Vec::new();
    for (name, s, l) in &groups {
        let means = group_means(s, l)?;
        let tau = grouped_krcc(s, l, higher_is_better);
        if let Err(e) = &tau {
            log::warn!("KRCC for {name}: {e}");
        }
        let tau = tau.ok();
        let mean_text: Vec<String> = means.iter().map(|(lv, m)| format!("{lv}:{m}")).collect();
        w.write_record([
            name.to_string(),
            s.len().to_string(),
            means.len().to_string(),
            tau.map(|t| t.to_string()).unwrap_or_default(),
            mean_text.join(";"),
        ])
        .map_err(Error::from)?;
        results.push(json!({ "artifact": name, "krcc": tau }));
    }
    w.flush().map_err(|e| CliError::Core(Error::Io { path: path.clone(), source: e }))?;
    Ok(json!({ "higher_is_better": higher_is_better, "results": results, "csv": path }))
}

fn report(a: &ReportArgs, out: &Path) -> CmdResult {
    let (ids, scores, _) = read_predictions(&a.predictions, Some(Order::HigherIsBetter))?;
    let manifest = Manifest::load(&a.manifest)?;
    let labels: HashMap<&str, f64> = manifest
        .entries
        .iter()
        .filter_map(|e| e.label.map(|l| (e.id.as_str(), l)))
        .collect();
    let model = a.model.as_deref().map(load_model).transpose()?;
    let normalize = |v: f64| model.as_ref().map_or(v, |m| m.normalize(v));
    let (mut kept, mut targets, mut preds) = (Vec::new(), Vec::new(), Vec::new());
    for (id, &s) in ids.iter().zip(&scores) {
        if let Some(&t) = labels.get(id.as_str()) {
            kept.push(id.clone());
            targets.push(normalize(t));
            preds.push(normalize(s));
        }
    }
    if kept.len() < 3 {
        return Err(data_error(format!("{} labeled predictions; need at least 3", kept.len())));
    }
    let rep = regression_report(&targets, &preds)?;
    let path = out.join(&a.output);
    write_json(
        &path,
        &json!({ "report": rep, "normalized": model.is_some(), "target_name": manifest.labels.map(|l| l.target_name) }),
    )?;
    write_scatter(&kept, &targets, &preds, &out.join(&a.scatter))?;
    Ok(json!({ "n": rep.n, "slope": rep.slope, "intercept": rep.intercept, "mse": rep.mse, "report": path }))
}

fn bench_cmd(a: &BenchArgs, seed: u64, out: &Path) -> CmdResult {
    let model = load_model(&a.model)?;
    let images = (0..a.count)
        .map(|i| {
            let kind = StructureKind::ALL[i % StructureKind::ALL.len()];
            gen_structure(&StructureSpec::preset(kind, (a.size, a.size), derive_seed(seed, "bench", &[i as u64])))
        })
        .collect::<microiqa::Result<Vec<_>>>()?;
    let report = if images.is_empty() {
        json!({ "images": 0, "frc_seconds": 0.0, "model_seconds": 0.0 })
    } else {
        serde_json::to_value(bench(&images, &model)?).map_err(Error::from)?
    };
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let body = json!({
        "report": report,
        "hardware": format!("{} {} with {cores} logical core(s)", std::env::consts::OS, std::env::consts::ARCH),
        "isolation": "both pathways run serially in one process; FRC first, then the model",
    });
    let path = out.join(&a.output);
    write_json(&path, &body)?;
    Ok(body)
}
