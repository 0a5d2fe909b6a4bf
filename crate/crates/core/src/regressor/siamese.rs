//! Pairwise difference regression.
//!
//! The head sees `|f_a - f_b|` and is trained to predict the normalised MOS
//! gap `|z_a - z_b|`. Because the input is symmetric, a pair model cannot
//! produce an absolute score by itself; [`siamese_score`] recovers one from
//! labelled anchors with inverse-distance weighting:
//!
//! ```text
//! w_i   = 1 / (max(d_i, 0) + eps)
//! score = clip(sum(w_i * mos_i) / sum(w_i))
//! ```

use super::head::{head_forward, HeadParams, Mode, HIDDEN1, HIDDEN2};
use super::train::{fit_loop, Samples, TrainConfig, TrainReport};
use super::RegressorError;
use crate::dataset::{Manifest, Split, ZScoreNormalizer};
use crate::features::{FeatureCache, FeatureVector};
use crate::imagecore::SeededRng;

pub const DEFAULT_PARTNERS: usize = 4;
pub const ANCHOR_EPS: f64 = 1e-6;

const PAIR_STREAM: u64 = 0x5041_4952;

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub feature_a: FeatureVector,
    pub feature_b: FeatureVector,
    /// `|MOS_a - MOS_b|` in normalised units.
    pub target: f64,
}

impl PairSample {
    pub fn new(feature_a: FeatureVector, feature_b: FeatureVector, target: f64) -> Result<Self, RegressorError> {
        if feature_a.dim() != feature_b.dim() {
            return Err(RegressorError::DimMismatch {
                expected: feature_a.dim(),
                got: feature_b.dim(),
            });
        }
        if !(target >= 0.0 && target.is_finite()) {
            return Err(RegressorError::InvalidConfig {
                field: "target",
                reason: format!("pair target {target} must be finite and non-negative"),
            });
        }
        Ok(Self {
            feature_a,
            feature_b,
            target,
        })
    }

    pub fn input(&self) -> Vec<f32> {
        abs_diff(self.feature_a.values(), self.feature_b.values())
    }
}

fn abs_diff(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect()
}

/// For every image of `split`, `k` partners drawn uniformly (with
/// replacement) from the other images of the same split.
pub fn make_pairs(
    cache: &FeatureCache,
    manifest: &Manifest,
    normalizer: &ZScoreNormalizer,
    split: Split,
    k: usize,
    seed: u64,
) -> Result<Vec<PairSample>, RegressorError> {
    cache.check_alignment(manifest).map_err(RegressorError::Feature)?;
    let idx: Vec<usize> = manifest.with_split(split).map(|(i, _)| i).collect();
    if idx.len() < 2 {
        return Err(RegressorError::EmptySplit(split.as_str()));
    }
    let mut rng = SeededRng::derive(seed, &[PAIR_STREAM, split as u64]);
    let recs = manifest.records();
    let rows = cache.rows();
    let mut pairs = Vec::with_capacity(idx.len() * k);
    for (pos, &a) in idx.iter().enumerate() {
        for _ in 0..k {
            // pick among the n-1 others
            let mut o = (rng.next_f64() * (idx.len() - 1) as f64) as usize;
            if o >= pos {
                o += 1;
            }
            let b = idx[o];
            let target = (normalizer.normalize(recs[a].mos) - normalizer.normalize(recs[b].mos)).abs();
            pairs.push(PairSample::new(rows[a].1.clone(), rows[b].1.clone(), target)?);
        }
    }
    Ok(pairs)
}

fn to_samples(pairs: &[PairSample]) -> Samples {
    Samples {
        inputs: pairs.iter().map(PairSample::input).collect(),
        targets: pairs.iter().map(|p| p.target).collect(),
    }
}

/// Trains a difference head; validation error is in normalised distance units.
pub fn siamese_train(
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    cfg: &TrainConfig,
) -> Result<(HeadParams<f32>, TrainReport), RegressorError> {
    fit_loop(
        &to_samples(train_pairs),
        &to_samples(val_pairs),
        &|d| d,
        cfg,
        [HIDDEN1, HIDDEN2],
        None,
    )
}

/// Predicted normalised MOS gap between two images. Exactly symmetric.
pub fn pair_distance(p: &HeadParams<f32>, a: &FeatureVector, b: &FeatureVector) -> Result<f64, RegressorError> {
    if a.dim() != b.dim() {
        return Err(RegressorError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(head_forward(&abs_diff(a.values(), b.values()), p, Mode::Eval)?.0 as f64)
}

/// Inverse-distance weighted mean of anchor scores. `anchors` holds
/// `(distance, mos)` pairs; negative distances count as zero.
pub fn anchor_weighted_score(anchors: &[(f64, f64)], eps: f64) -> Result<f64, RegressorError> {
    if anchors.is_empty() {
        return Err(RegressorError::NoAnchors);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(d, mos) in anchors {
        let w = 1.0 / (d.max(0.0) + eps);
        num += w * mos;
        den += w;
    }
    Ok(num / den)
}

/// Absolute score of `features` from labelled anchors, clipped to the normaliser's range.
pub fn siamese_score(
    features: &FeatureVector,
    anchors: &[(FeatureVector, f64)],
    p: &HeadParams<f32>,
    normalizer: &ZScoreNormalizer,
) -> Result<f64, RegressorError> {
    let dists = anchors
        .iter()
        .map(|(f, mos)| Ok((pair_distance(p, features, f)?, *mos)))
        .collect::<Result<Vec<_>, RegressorError>>()?;
    let s = anchor_weighted_score(&dists, ANCHOR_EPS)?;
    Ok(s.clamp(normalizer.clip_lo, normalizer.clip_hi))
}
