use std::path::{Path, PathBuf};

use contrast_iqa::dataset::{Manifest, Split, ZScoreNormalizer};
use contrast_iqa::features::{extract_features, random_archive, BackboneConfig, Extractor, FeatureCache, FeatureVector, WeightArchive};
use contrast_iqa::imagecore::read_image;
use contrast_iqa::metrics::{evaluate, EvalReport};
use contrast_iqa::regressor::{
    make_pairs, predict, siamese_score, siamese_train, train, train_augmented, SavedHead, TrainReport, ARCH_MLP,
    ARCH_SIAMESE,
};
use contrast_iqa::synthdata::{generate_dataset, write_procedural_bases, Distortion, SynthSpec};

use crate::config::{ExtractorChoice, RunConfig};
use crate::error::{CliError, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pgm", "pnm"];
pub const CURVES_HEADER: &str = "epoch,train_loss,val_loss,val_plcc,val_srcc,lr";
pub const SCATTER_HEADER: &str = "path,actual_mos,predicted_mos";

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

pub struct SynthArgs {
    pub bases: Option<PathBuf>,
    pub procedural: Option<usize>,
    pub size: usize,
    pub gammas: Vec<f64>,
    pub contrasts: Vec<f64>,
    pub variants: usize,
    pub seed: u64,
    pub out: PathBuf,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(format!("--bases {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(format!("--bases {}: {e}", dir.display())))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::validation(format!("--bases {}: no PNG or PNM images", dir.display())));
    }
    Ok(paths)
}

pub fn synth(a: &SynthArgs) -> Result<String> {
    let mut levels = Vec::new();
    for &g in &a.gammas {
        levels.push(Distortion::gamma(g).map_err(|e| CliError::validation(format!("--gammas: {e}")))?);
    }
    for &s in &a.contrasts {
        levels.push(Distortion::linear_contrast(s).map_err(|e| CliError::validation(format!("--contrasts: {e}")))?);
    }
    if levels.is_empty() {
        return Err(CliError::validation("--gammas: give at least one level (or --contrasts)"));
    }
    if a.variants == 0 {
        return Err(CliError::validation("--variants: must be at least 1"));
    }
    let bases = match (&a.bases, a.procedural) {
        (Some(dir), None) => list_images(dir)?,
        (None, Some(n)) if n > 0 && a.size >= 8 => write_procedural_bases(&a.out.join("bases"), n, a.size, a.seed)?,
        (None, Some(_)) => return Err(CliError::validation("--procedural: need at least one base of size >= 8")),
        _ => return Err(CliError::validation("--bases: give exactly one of --bases or --procedural")),
    };
    let mut spec = SynthSpec::new(bases, levels, a.seed, &a.out);
    spec.variants = a.variants;
    let m = generate_dataset(&spec)?;
    Ok(format!("{} records written to {}", m.len(), a.out.join("manifest.csv").display()))
}

/// Extractor from the command-line style choice.
pub fn build_extractor(kind: &str, weights: Option<&Path>, random_weights: Option<u64>, backbone: &str) -> Result<Extractor> {
    match kind {
        "handcrafted" => Ok(Extractor::handcrafted()),
        "cnn" => {
            let cfg = BackboneConfig::by_name(backbone)
                .ok_or_else(|| CliError::validation(format!("--backbone: unknown backbone {backbone:?} (nano or b0)")))?;
            let archive = match (weights, random_weights) {
                (Some(p), None) => WeightArchive::load(p).map_err(|e| CliError::from(e).context("--weights"))?,
                (None, Some(seed)) => random_archive(&cfg, seed),
                _ => return Err(CliError::validation("--weights: cnn needs exactly one of --weights or --random-weights")),
            };
            Extractor::cnn(&cfg, &archive).map_err(|e| CliError::from(e).context("--weights"))
        }
        other => Err(CliError::validation(format!("--extractor: {other:?} is not handcrafted or cnn"))),
    }
}

fn extractor_for(choice: &ExtractorChoice) -> Result<Extractor> {
    match choice {
        ExtractorChoice::Handcrafted => build_extractor("handcrafted", None, None, ""),
        ExtractorChoice::Cnn { weights, backbone } => build_extractor("cnn", Some(weights), None, backbone),
    }
}

pub fn extract(manifest: &Path, extractor: &Extractor, out: &Path) -> Result<String> {
    let m = Manifest::load(manifest).map_err(|e| CliError::from(e).context("--manifest"))?;
    let cache = extract_features(&m, extractor)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    cache.save(out).map_err(|e| CliError::from(e).context("--out"))?;
    Ok(format!("{} rows of dimension {} written to {}", cache.len(), cache.dim(), out.display()))
}

/// Loads the manifest and assigns a split unless it already carries one.
fn split_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let m = Manifest::load(&cfg.manifest).map_err(|e| CliError::from(e).context("config key manifest"))?;
    let assigned = m.records().iter().any(|r| r.split != Split::Unassigned);
    let m = if assigned { m } else { m.split(cfg.split_fraction, cfg.train.seed)? };
    for split in [Split::Train, Split::Val] {
        if m.with_split(split).next().is_none() {
            return Err(CliError::validation(format!("config key manifest: no {split} records after splitting")));
        }
    }
    Ok(m)
}

fn train_normalizer(m: &Manifest) -> Result<ZScoreNormalizer> {
    Ok(ZScoreNormalizer::fit(m.records().iter().filter(|r| r.split == Split::Train))?)
}

/// Cache from the config, extracting (and writing `features.cqwa`) when none is given.
fn features_for(cfg: &RunConfig, m: &Manifest) -> Result<FeatureCache> {
    match &cfg.features {
        Some(p) => FeatureCache::load(p).map_err(|e| CliError::from(e).context("config key features")),
        None => {
            let cache = extract_features(m, &extractor_for(&cfg.extractor)?)?;
            cache.save(&cfg.out_dir.join("features.cqwa"))?;
            Ok(cache)
        }
    }
}

fn write_run(cfg: &RunConfig, m: &Manifest, head: &SavedHead, report: &TrainReport) -> Result<()> {
    head.save(&cfg.out_dir.join("head.cqwa"))?;
    write(&cfg.out_dir.join("report.csv"), report.to_csv())?;
    head.normalizer.save(&cfg.out_dir.join("normalizer.json"))?;
    m.save(&cfg.out_dir.join("split.csv"))?;
    Ok(())
}

fn summary(report: &TrainReport, cfg: &RunConfig) -> String {
    let b = report.best();
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.4}"));
    format!(
        "{} epochs in {:.2}s; best epoch {} (val MSE {:.4}, PLCC {}, SRCC {}); outputs in {}",
        report.epochs.len(),
        report.wall_time_secs,
        b.epoch,
        b.val_mse,
        opt(b.val_plcc),
        opt(b.val_srcc),
        cfg.out_dir.display()
    )
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let m = split_manifest(cfg)?;
    let norm = train_normalizer(&m)?;
    create_dir(&cfg.out_dir)?;
    let (params, report, tag) = if cfg.augment {
        let ex = extractor_for(&cfg.extractor)?;
        let (p, r) = train_augmented(&m, &ex, &norm, &cfg.train)?;
        (p, r, ex.tag())
    } else {
        let cache = features_for(cfg, &m)?;
        let (p, r) = train(&cache, &m, &norm, &cfg.train).map_err(|e| CliError::from(e).context("config key features"))?;
        (p, r, cache.extractor_tag.clone())
    };
    let head = SavedHead {
        params,
        arch: ARCH_MLP.into(),
        normalizer: norm,
        extractor: Some(tag),
    };
    write_run(cfg, &m, &head, &report)?;
    Ok(summary(&report, cfg))
}

/// Training-split features with their MOS, stored next to a siamese head.
fn anchors_archive(cache: &FeatureCache, m: &Manifest) -> Result<WeightArchive> {
    let idx: Vec<usize> = m.with_split(Split::Train).map(|(i, _)| i).collect();
    let rows = idx.iter().map(|&i| cache.rows()[i].clone()).collect();
    let sub = FeatureCache::new(rows, cache.extractor_tag.clone(), m.content_hash())?;
    let mos: Vec<f64> = idx.iter().map(|&i| m.records()[i].mos).collect();
    let mut a = sub.to_archive();
    a.metadata.insert("mos".into(), serde_json::to_string(&mos).expect("finite scores serialise"));
    Ok(a)
}

fn load_anchors(path: &Path) -> Result<Vec<(FeatureVector, f64)>> {
    let ctx = |e: CliError| e.context(format!("--anchors {}", path.display()));
    let a = WeightArchive::load(path).map_err(|e| ctx(e.into()))?;
    let cache = FeatureCache::from_archive(&a).map_err(|e| ctx(e.into()))?;
    let mos: Vec<f64> = a
        .metadata
        .get("mos")
        .and_then(|s| serde_json::from_str(s).ok())
        .ok_or_else(|| ctx(CliError::validation("missing or malformed mos metadata")))?;
    if mos.len() != cache.len() {
        return Err(ctx(CliError::validation(format!("{} scores for {} rows", mos.len(), cache.len()))));
    }
    Ok(cache.rows().iter().map(|(_, f)| f.clone()).zip(mos).collect())
}

pub fn pair_train_cmd(cfg: &RunConfig) -> Result<String> {
    if cfg.augment {
        return Err(CliError::validation("config key augment: not supported for pair-train"));
    }
    let m = split_manifest(cfg)?;
    let norm = train_normalizer(&m)?;
    create_dir(&cfg.out_dir)?;
    let cache = features_for(cfg, &m)?;
    let seed = cfg.train.seed;
    let tr = make_pairs(&cache, &m, &norm, Split::Train, cfg.partners, seed).map_err(|e| CliError::from(e).context("config key features"))?;
    let va = make_pairs(&cache, &m, &norm, Split::Val, cfg.partners, seed).map_err(|e| CliError::from(e).context("config key features"))?;
    let (params, report) = siamese_train(&tr, &va, &cfg.train)?;
    let head = SavedHead {
        params,
        arch: ARCH_SIAMESE.into(),
        normalizer: norm,
        extractor: Some(cache.extractor_tag.clone()),
    };
    write_run(cfg, &m, &head, &report)?;
    anchors_archive(&cache, &m)?.save(&cfg.out_dir.join("anchors.cqwa"))?;
    Ok(format!("{} training pairs; {}", tr.len(), summary(&report, cfg)))
}

fn load_head(path: &Path) -> Result<SavedHead> {
    SavedHead::load(path).map_err(|e| CliError::from(e).context(format!("--head {}", path.display())))
}

fn score_features(head: &SavedHead, feats: &[FeatureVector], anchors: Option<&Path>) -> Result<Vec<f64>> {
    if let Some(f) = feats.first() {
        if f.dim() != head.params.in_dim() {
            return Err(CliError::validation(format!(
                "--head: expects {}-dimensional features, got {}",
                head.params.in_dim(),
                f.dim()
            )));
        }
    }
    match head.arch.as_str() {
        ARCH_MLP => Ok(predict(feats, &head.params, &head.normalizer)?),
        ARCH_SIAMESE => {
            let path = anchors.ok_or_else(|| CliError::validation("--anchors: required for a siamese head"))?;
            let anchors = load_anchors(path)?;
            feats
                .iter()
                .map(|f| siamese_score(f, &anchors, &head.params, &head.normalizer).map_err(CliError::from))
                .collect()
        }
        other => Err(CliError::validation(format!("--head: unknown architecture {other:?}"))),
    }
}

pub struct EvalArgs {
    pub manifest: PathBuf,
    pub head: PathBuf,
    pub features: PathBuf,
    pub anchors: Option<PathBuf>,
    pub split: String,
    pub out: PathBuf,
}

pub fn eval_cmd(a: &EvalArgs) -> Result<(EvalReport, String)> {
    let m = Manifest::load(&a.manifest).map_err(|e| CliError::from(e).context("--manifest"))?;
    let cache = FeatureCache::load(&a.features).map_err(|e| CliError::from(e).context("--features"))?;
    cache
        .check_alignment(&m)
        .map_err(|e| CliError::validation(format!("--features does not match --manifest: {e}")))?;
    let head = load_head(&a.head)?;
    let idx: Vec<usize> = match a.split.as_str() {
        "all" => (0..m.len()).collect(),
        "train" => m.with_split(Split::Train).map(|(i, _)| i).collect(),
        "val" => m.with_split(Split::Val).map(|(i, _)| i).collect(),
        other => return Err(CliError::validation(format!("--split: {other:?} is not train, val or all"))),
    };
    if idx.len() < 2 {
        return Err(CliError::validation(format!("--split {}: fewer than two records", a.split)));
    }
    let feats: Vec<FeatureVector> = idx.iter().map(|&i| cache.rows()[i].1.clone()).collect();
    let preds = score_features(&head, &feats, a.anchors.as_deref())?;
    let actual: Vec<f64> = idx.iter().map(|&i| m.records()[i].mos).collect();
    let paths: Vec<String> = idx.iter().map(|&i| m.records()[i].image_path.clone()).collect();
    let report = evaluate(&preds, &actual, &paths)?;
    report
        .write_to_dir(&a.out)
        .map_err(|e| CliError::io(format!("--out {}: {e}", a.out.display())))?;
    let line = format!(
        "n={} PLCC {:.4} SRCC {:.4} tolerance accuracy {:.4} MSE {:.4}; reports in {}",
        report.n,
        report.plcc,
        report.srcc,
        report.tolerance_accuracy,
        report.mse,
        a.out.display()
    );
    Ok((report, line))
}

pub struct ScoreArgs {
    pub image: PathBuf,
    pub head: PathBuf,
    pub weights: Option<PathBuf>,
    pub random_weights: Option<u64>,
    pub backbone: String,
    pub anchors: Option<PathBuf>,
}

pub fn score_cmd(a: &ScoreArgs) -> Result<f64> {
    let head = load_head(&a.head)?;
    let tag = head.extractor.clone().unwrap_or_else(|| "handcrafted".into());
    let kind = if tag.starts_with("cnn") { "cnn" } else { "handcrafted" };
    let extractor = build_extractor(kind, a.weights.as_deref(), a.random_weights, &a.backbone)?;
    let img = read_image(&a.image).map_err(|e| CliError::from(e).context("--image"))?;
    let f = extractor.extract(&img)?;
    Ok(score_features(&head, &[f], a.anchors.as_deref())?[0])
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| v.to_string())
}

pub fn report_cmd(train_report: &Path, per_image: Option<&Path>, out: &Path) -> Result<String> {
    let text = std::fs::read_to_string(train_report).map_err(|e| CliError::io(format!("--train-report {}: {e}", train_report.display())))?;
    let report = TrainReport::from_csv(&text).map_err(|e| CliError::from(e).context(format!("--train-report {}", train_report.display())))?;
    let mut curves = format!("{CURVES_HEADER}\n");
    for e in &report.epochs {
        curves.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.train_mse,
            e.val_mse,
            opt(e.val_plcc),
            opt(e.val_srcc),
            e.lr
        ));
    }
    let mut scatter = format!("{SCATTER_HEADER}\n");
    let mut rows = 0;
    if let Some(p) = per_image {
        let body = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("--per-image {}: {e}", p.display())))?;
        let mut lines = body.lines();
        if lines.next() != Some(SCATTER_HEADER) {
            return Err(CliError::validation(format!("--per-image {}: expected header {SCATTER_HEADER}", p.display())));
        }
        for l in lines.filter(|l| !l.is_empty()) {
            scatter.push_str(l);
            scatter.push('\n');
            rows += 1;
        }
    }
    create_dir(out)?;
    write(&out.join("curves.csv"), curves)?;
    write(&out.join("scatter.csv"), scatter)?;
    Ok(format!(
        "curves.csv ({} epochs) and scatter.csv ({rows} rows) written to {}",
        report.epochs.len(),
        out.display()
    ))
}

