//! The training loop: shuffled mini-batches, AdamW, plateau scheduling and
//! best-validation checkpointing.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{accumulate_backward, head_forward, mse_loss, HeadParams, Mode, HIDDEN1, HIDDEN2};
use super::optim::{adamw_step, AdamWConfig, OptimizerState, PlateauScheduler, SchedulerConfig};
use super::RegressorError;
use crate::dataset::{Manifest, Split, ZScoreNormalizer};
use crate::features::{Extractor, FeatureCache, FeatureVector};
use crate::imagecore::{read_image, SeededRng};
use crate::metrics;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;
const AUGMENT_STREAM: u64 = 0x4155_474d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub scheduler: SchedulerConfig,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 50,
            batch_size: 32,
            dropout: 0.5,
            seed: 0,
            scheduler: SchedulerConfig::default(),
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let bad = |field: &'static str, why: &str| Err(RegressorError::InvalidConfig {
            field,
            reason: why.to_string(),
        });
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return bad("factor", "must lie in (0, 1)");
        }
        if s.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if !positive(s.min_lr) {
            return bad("min_lr", "must be positive");
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !positive(a.eps) {
            return bad("eps", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean squared error over the epoch's training batches, in normalised units.
    pub train_mse: f64,
    /// Validation error of the clipped, denormalised predictions.
    pub val_mse: f64,
    /// `None` when the correlation is undefined (constant predictions).
    pub val_plcc: Option<f64>,
    pub val_srcc: Option<f64>,
    /// Rate used during this epoch.
    pub lr: f64,
}

pub const REPORT_HEADER: &str = "epoch,train_mse,val_mse,val_plcc,val_srcc,lr";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

/// Compares everything except wall time.
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_mse,
                e.val_mse,
                fmt_opt(e.val_plcc),
                fmt_opt(e.val_srcc),
                e.lr
            );
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output. The best epoch is recomputed
    /// as the first epoch with minimum validation error; wall time is 0.
    pub fn from_csv(text: &str) -> Result<Self, RegressorError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => return Err(RegressorError::BadReport(format!("header {:?}", other.unwrap_or("")))),
        }
        let mut epochs = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            let err = || RegressorError::BadReport(format!("line {}: {line:?}", i + 2));
            if cols.len() != 6 {
                return Err(err());
            }
            let f = |s: &str| s.trim().parse::<f64>().map_err(|_| err());
            let opt = |s: &str| f(s).map(|v| (!v.is_nan()).then_some(v));
            epochs.push(EpochStats {
                epoch: cols[0].trim().parse().map_err(|_| err())?,
                train_mse: f(cols[1])?,
                val_mse: f(cols[2])?,
                val_plcc: opt(cols[3])?,
                val_srcc: opt(cols[4])?,
                lr: f(cols[5])?,
            });
        }
        if epochs.is_empty() {
            return Err(RegressorError::BadReport("no epochs".into()));
        }
        let best_epoch = best_index(&epochs) + 1;
        Ok(Self {
            epochs,
            best_epoch,
            wall_time_secs: 0.0,
        })
    }
}

fn best_index(epochs: &[EpochStats]) -> usize {
    let mut best = 0;
    for (i, e) in epochs.iter().enumerate() {
        if e.val_mse < epochs[best].val_mse {
            best = i;
        }
    }
    best
}

/// Inputs with regression targets.
#[derive(Clone, Debug, Default)]
pub struct Samples {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Eval-mode forward over every row.
pub fn forward_all(p: &HeadParams<f32>, inputs: &[Vec<f32>]) -> Result<Vec<f64>, RegressorError> {
    inputs
        .iter()
        .map(|x| Ok(head_forward(x, p, Mode::Eval)?.0 as f64))
        .collect()
}

/// Per-dimension affine map `(x - mean) / scale` fitted on training inputs.
///
/// Training runs on standardised inputs; every checkpoint has the map folded
/// into its first layer so saved heads consume raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    /// Population mean and standard deviation per dimension; dimensions with
    /// (near) zero spread keep scale 1.
    pub fn fit(inputs: &[Vec<f32>]) -> Self {
        let dim = inputs.first().map_or(0, Vec::len);
        let n = inputs.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in inputs {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, &v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (m, s))| ((v as f64 - m) / s) as f32)
            .collect()
    }

    /// Head on raw inputs equivalent to `p` on standardised inputs.
    pub fn fold(&self, p: &HeadParams<f32>) -> HeadParams<f32> {
        let mut out = p.clone();
        let n = p.in_dim();
        for (row, b) in out.w1.chunks_exact_mut(n).zip(out.b1.iter_mut()) {
            let mut shift = *b as f64;
            for ((w, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                let ws = *w as f64 / s;
                shift -= ws * m;
                *w = ws as f32;
            }
            *b = shift as f32;
        }
        out
    }
}

type Refresh<'a> = dyn FnMut(usize, &mut Vec<Vec<f32>>) -> Result<(), RegressorError> + 'a;

/// Generic loop shared by the plain, augmented and pairwise trainers.
///
/// `val_map` converts a raw head output into the units of `val.targets`.
/// `refresh`, if given, supplies the raw training inputs for each epoch.
pub(crate) fn fit_loop(
    train: &Samples,
    val: &Samples,
    val_map: &dyn Fn(f64) -> f64,
    cfg: &TrainConfig,
    hidden: [usize; 2],
    mut refresh: Option<&mut Refresh<'_>>,
) -> Result<(HeadParams<f32>, TrainReport), RegressorError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(RegressorError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(RegressorError::EmptySplit("val"));
    }
    let in_dim = train.inputs[0].len();
    for x in train.inputs.iter().chain(&val.inputs) {
        if x.len() != in_dim {
            return Err(RegressorError::DimMismatch {
                expected: in_dim,
                got: x.len(),
            });
        }
    }

    let start = Instant::now();
    let scaler = InputScaler::fit(&train.inputs);
    let mut params = HeadParams::<f32>::init(in_dim, hidden, cfg.seed);
    let mut opt = OptimizerState::new(&params, cfg.learning_rate);
    let mut sched = PlateauScheduler::new(cfg.learning_rate, cfg.scheduler);
    let mut best = scaler.fold(&params);
    let mut best_mse = f64::INFINITY;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut inputs: Vec<Vec<f32>> = train.inputs.iter().map(|x| scaler.apply(x)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = HeadParams::<f64>::zeros_with_hidden(in_dim, hidden);

    for epoch in 1..=cfg.epochs {
        if let Some(r) = refresh.as_mut() {
            r(epoch, &mut inputs)?;
            for x in inputs.iter_mut() {
                *x = scaler.apply(x);
            }
        }
        let lr = opt.lr;
        order.sort_unstable();
        order.shuffle(&mut SeededRng::derive(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut drop_rng = SeededRng::derive(cfg.seed, &[DROPOUT_STREAM, epoch as u64]);

        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut preds = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let mode = if cfg.dropout > 0.0 {
                    Mode::Train {
                        rng: &mut drop_rng,
                        dropout: cfg.dropout,
                    }
                } else {
                    Mode::Eval
                };
                let (y, t) = head_forward(&inputs[i], &params, mode)?;
                preds.push(y as f64);
                traces.push(t);
                targets.push(train.targets[i]);
            }
            let (loss, dpred) = mse_loss(&preds, &targets)?;
            sse += loss * batch.len() as f64;
            grads.fill_zero();
            for (t, d) in traces.iter().zip(dpred) {
                accumulate_backward(t, d, &params, &mut grads)?;
            }
            adamw_step(&mut params, &grads, &mut opt, cfg.weight_decay, &cfg.adamw);
        }
        let train_mse = sse / train.len() as f64;
        if !train_mse.is_finite() || !params.is_finite() {
            return Err(RegressorError::Diverged(epoch));
        }

        let folded = scaler.fold(&params);
        let val_pred: Vec<f64> = forward_all(&folded, &val.inputs)?.into_iter().map(val_map).collect();
        let val_mse = metrics::mse(&val_pred, &val.targets).map_err(RegressorError::Metric)?;
        let val_plcc = metrics::plcc(&val_pred, &val.targets).ok();
        let val_srcc = metrics::srcc(&val_pred, &val.targets).ok();
        if val_mse < best_mse {
            best_mse = val_mse;
            best = folded;
        }
        opt.lr = sched.step(val_mse);
        epochs.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            val_plcc,
            val_srcc,
            lr,
        });
    }

    let best_epoch = best_index(&epochs) + 1;
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Trains the default head on raw samples; validation error is in target units.
pub fn train_samples(train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<(HeadParams<f32>, TrainReport), RegressorError> {
    fit_loop(train, val, &|y| y, cfg, [HIDDEN1, HIDDEN2], None)
}

fn rows_of(cache: &FeatureCache, manifest: &Manifest, split: Split) -> Vec<usize> {
    manifest.with_split(split).map(|(i, _)| i).filter(|&i| i < cache.len()).collect()
}

fn check_cache(cache: &FeatureCache, manifest: &Manifest) -> Result<(), RegressorError> {
    cache.check_alignment(manifest).map_err(RegressorError::Feature)
}

/// Trains the 512-256-1 head on cached features.
///
/// Train targets are z-scores of the train-split MOS; validation is measured on
/// clipped, denormalised predictions against the raw MOS.
pub fn train(
    cache: &FeatureCache,
    manifest: &Manifest,
    normalizer: &ZScoreNormalizer,
    cfg: &TrainConfig,
) -> Result<(HeadParams<f32>, TrainReport), RegressorError> {
    check_cache(cache, manifest)?;
    let recs = manifest.records();
    let gather = |split: Split, target: &dyn Fn(f64) -> f64| Samples {
        inputs: rows_of(cache, manifest, split)
            .iter()
            .map(|&i| cache.rows()[i].1.values().to_vec())
            .collect(),
        targets: rows_of(cache, manifest, split)
            .iter()
            .map(|&i| target(recs[i].mos))
            .collect(),
    };
    let train_set = gather(Split::Train, &|m| normalizer.normalize(m));
    let val_set = gather(Split::Val, &|m| m);
    fit_loop(
        &train_set,
        &val_set,
        &|z| normalizer.denormalize_clip(z),
        cfg,
        [HIDDEN1, HIDDEN2],
        None,
    )
}

/// Like [`train`] but re-extracts training features every epoch from
/// randomly augmented images. Validation uses the extractor's plain transform.
pub fn train_augmented(
    manifest: &Manifest,
    extractor: &Extractor,
    normalizer: &ZScoreNormalizer,
    cfg: &TrainConfig,
) -> Result<(HeadParams<f32>, TrainReport), RegressorError> {
    let load = |split: Split| -> Result<Vec<(usize, crate::imagecore::RasterImage)>, RegressorError> {
        manifest
            .with_split(split)
            .map(|(i, r)| {
                let path = manifest.resolve(r);
                read_image(&path)
                    .map(|img| (i, img))
                    .map_err(|e| RegressorError::Image(format!("{}: {e}", path.display())))
            })
            .collect()
    };
    let train_imgs = load(Split::Train)?;
    let val_imgs = load(Split::Val)?;
    let recs = manifest.records();
    let policy = extractor.policy().clone();

    let extract_epoch = |epoch: usize| -> Result<Vec<Vec<f32>>, RegressorError> {
        train_imgs
            .par_iter()
            .map(|(i, img)| {
                let rng = SeededRng::derive(cfg.seed, &[AUGMENT_STREAM, *i as u64, epoch as u64]);
                extractor
                    .extract_augmented(img, rng, &policy)
                    .map(|f: FeatureVector| f.values().to_vec())
                    .map_err(RegressorError::Feature)
            })
            .collect()
    };
    let val_set = Samples {
        inputs: val_imgs
            .par_iter()
            .map(|(_, img)| extractor.extract(img).map(|f| f.values().to_vec()))
            .collect::<Result<_, _>>()
            .map_err(RegressorError::Feature)?,
        targets: val_imgs.iter().map(|(i, _)| recs[*i].mos).collect(),
    };
    let train_set = Samples {
        inputs: extract_epoch(1)?,
        targets: train_imgs.iter().map(|(i, _)| normalizer.normalize(recs[*i].mos)).collect(),
    };
    let mut refresh = |epoch: usize, inputs: &mut Vec<Vec<f32>>| -> Result<(), RegressorError> {
        *inputs = if epoch == 1 {
            train_set.inputs.clone()
        } else {
            extract_epoch(epoch)?
        };
        Ok(())
    };
    fit_loop(
        &train_set,
        &val_set,
        &|z| normalizer.denormalize_clip(z),
        cfg,
        [HIDDEN1, HIDDEN2],
        Some(&mut refresh),
    )
}

/// Clipped, denormalised eval-mode predictions for every feature row, in order.
pub fn predict(features: &[FeatureVector], p: &HeadParams<f32>, normalizer: &ZScoreNormalizer) -> Result<Vec<f64>, RegressorError> {
    features
        .iter()
        .map(|f| Ok(normalizer.denormalize_clip(head_forward(f.values(), p, Mode::Eval)?.0 as f64)))
        .collect()
}

/// [`predict`] over every row of a cache.
pub fn predict_cache(cache: &FeatureCache, p: &HeadParams<f32>, normalizer: &ZScoreNormalizer) -> Result<Vec<f64>, RegressorError> {
    let feats: Vec<FeatureVector> = cache.rows().iter().map(|(_, f)| f.clone()).collect();
    predict(&feats, p, normalizer)
}
