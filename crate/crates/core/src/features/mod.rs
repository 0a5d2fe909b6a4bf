//! Frozen feature extraction and its on-disk containers.

mod archive;
mod backbone;
mod handcrafted;
mod parity;
mod scaling;

pub use archive::{ArchiveEntry, ArchiveError, WeightArchive};
pub use backbone::{
    backbone_forward, random_archive, zero_archive, Activation, Backbone, BackboneConfig, BlockSpec, StageConfig,
};
pub use handcrafted::{handcrafted_features, HANDCRAFTED_DIM, HANDCRAFTED_NAMES};
pub use parity::{ParityFixture, PARITY_TOLERANCE};
pub use scaling::{compound_scale, round_channels, scaled_config, CompoundScale, ScaleFactors, DEFAULT_CONSTRAINT_TOLERANCE};

use std::path::Path;

use rayon::prelude::*;

use crate::dataset::Manifest;
use crate::imagecore::{augment, augment_raster, eval_transform, read_image, resize_bilinear, AugmentPolicy, RasterImage, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid compound scale: {0}")]
    InvalidScale(String),
    #[error("compound-scaling constraint off by {residual:.4} (tolerance {tolerance})")]
    ConstraintViolation { residual: f64, tolerance: f64 },
    #[error("invalid backbone config: {0}")]
    InvalidConfig(String),
    #[error("parameter {0} missing from archive")]
    MissingParameter(String),
    #[error("parameter {0} has the wrong shape")]
    ShapeMismatch(String),
    #[error("input tensor {got:?}, expected {expected:?}")]
    InputShape { expected: [usize; 3], got: [usize; 3] },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("feature dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("feature cache: {0}")]
    BadCache(String),
    #[error("{} image(s) failed: {}", .0.len(), .0.iter().map(|(p, e)| format!("{p}: {e}")).collect::<Vec<_>>().join("; "))]
    Extraction(Vec<(String, String)>),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Output of a frozen extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    /// Elementwise `|self - other|`, the pairwise-model input. Exactly symmetric.
    pub fn abs_diff(&self, other: &FeatureVector) -> Result<FeatureVector, FeatureError> {
        if self.dim() != other.dim() {
            return Err(FeatureError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).collect()))
    }
}

/// Per-image features in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    rows: Vec<(String, FeatureVector)>,
    pub extractor_tag: String,
    dim: usize,
    pub manifest_hash: String,
}

impl FeatureCache {
    pub fn new(rows: Vec<(String, FeatureVector)>, extractor_tag: impl Into<String>, manifest_hash: impl Into<String>) -> Result<Self, FeatureError> {
        let dim = rows.first().map_or(0, |(_, f)| f.dim());
        if let Some((_, f)) = rows.iter().find(|(_, f)| f.dim() != dim) {
            return Err(FeatureError::DimMismatch {
                expected: dim,
                got: f.dim(),
            });
        }
        Ok(Self {
            rows,
            extractor_tag: extractor_tag.into(),
            dim,
            manifest_hash: manifest_hash.into(),
        })
    }

    pub fn rows(&self) -> &[(String, FeatureVector)] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks that rows correspond one-to-one, in order, with the manifest.
    pub fn check_alignment(&self, manifest: &Manifest) -> Result<(), FeatureError> {
        if self.rows.len() != manifest.len() {
            return Err(FeatureError::BadCache(format!(
                "{} rows for {} manifest records",
                self.rows.len(),
                manifest.len()
            )));
        }
        for (i, ((path, _), rec)) in self.rows.iter().zip(manifest.records()).enumerate() {
            if path != &rec.image_path {
                return Err(FeatureError::BadCache(format!(
                    "row {i} is {path}, manifest has {}",
                    rec.image_path
                )));
            }
        }
        Ok(())
    }

    /// Container form: one entry per row named by its decimal index, shape
    /// `[dim]`, with metadata `format`, `extractor`, `dim`, `manifest_hash` and
    /// `paths` (JSON array of row paths).
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        for (i, (_, f)) in self.rows.iter().enumerate() {
            a.insert(i.to_string(), vec![self.dim], f.values().to_vec())
                .expect("row names are unique");
        }
        let paths: Vec<&str> = self.rows.iter().map(|(p, _)| p.as_str()).collect();
        a.metadata.insert("format".into(), "feature-cache".into());
        a.metadata.insert("extractor".into(), self.extractor_tag.clone());
        a.metadata.insert("dim".into(), self.dim.to_string());
        a.metadata.insert("manifest_hash".into(), self.manifest_hash.clone());
        a.metadata
            .insert("paths".into(), serde_json::to_string(&paths).expect("paths serialise"));
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self, FeatureError> {
        let meta = |k: &str| {
            a.metadata
                .get(k)
                .ok_or_else(|| FeatureError::BadCache(format!("missing metadata key {k}")))
        };
        let paths: Vec<String> =
            serde_json::from_str(meta("paths")?).map_err(|e| FeatureError::BadCache(format!("paths: {e}")))?;
        let dim: usize = meta("dim")?
            .parse()
            .map_err(|_| FeatureError::BadCache("dim is not an integer".into()))?;
        if paths.len() != a.len() {
            return Err(FeatureError::BadCache(format!("{} paths for {} rows", paths.len(), a.len())));
        }
        let mut rows = Vec::with_capacity(paths.len());
        for (i, path) in paths.into_iter().enumerate() {
            let e = a
                .get(&i.to_string())
                .ok_or_else(|| FeatureError::BadCache(format!("row {i} missing")))?;
            if e.shape != [dim] {
                return Err(FeatureError::DimMismatch {
                    expected: dim,
                    got: e.values.len(),
                });
            }
            rows.push((path, FeatureVector::new(e.values.clone())?));
        }
        let mut cache = Self::new(rows, meta("extractor")?.clone(), meta("manifest_hash")?.clone())?;
        cache.dim = dim;
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        Self::from_archive(&WeightArchive::load(path)?)
    }
}

/// A frozen feature extractor.
pub enum Extractor {
    /// Contrast statistics of the image resized to `policy.target_size`.
    Handcrafted { policy: AugmentPolicy },
    /// MBConv backbone over the normalised tensor.
    Cnn { backbone: Box<Backbone>, policy: AugmentPolicy, tag: String },
}

impl Extractor {
    pub fn handcrafted() -> Self {
        Extractor::Handcrafted {
            policy: AugmentPolicy::default(),
        }
    }

    pub fn cnn(cfg: &BackboneConfig, archive: &WeightArchive) -> Result<Self, FeatureError> {
        let backbone = Backbone::new(cfg, archive)?;
        let policy = AugmentPolicy {
            target_size: cfg.input_size,
            ..AugmentPolicy::default()
        };
        let source = archive.metadata.get("source").map_or("archive", String::as_str);
        Ok(Extractor::Cnn {
            backbone: Box::new(backbone),
            policy,
            tag: format!("cnn:{source}"),
        })
    }

    pub fn tag(&self) -> String {
        match self {
            Extractor::Handcrafted { .. } => "handcrafted".into(),
            Extractor::Cnn { tag, .. } => tag.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Extractor::Handcrafted { .. } => HANDCRAFTED_DIM,
            Extractor::Cnn { backbone, .. } => backbone.feature_dim(),
        }
    }

    pub fn policy(&self) -> &AugmentPolicy {
        match self {
            Extractor::Handcrafted { policy } | Extractor::Cnn { policy, .. } => policy,
        }
    }

    /// Features under the evaluation transform.
    pub fn extract(&self, img: &RasterImage) -> Result<FeatureVector, FeatureError> {
        match self {
            Extractor::Handcrafted { policy } => Ok(handcrafted_features(&resize_bilinear(
                img,
                policy.target_size,
                policy.target_size,
            ))),
            Extractor::Cnn { backbone, policy, .. } => {
                let t = eval_transform(img, policy).map_err(|e| FeatureError::InvalidConfig(e.to_string()))?;
                backbone.forward(&t)
            }
        }
    }

    /// Features of a seeded augmentation of `img` (training-time mode).
    pub fn extract_augmented(&self, img: &RasterImage, rng: SeededRng, policy: &AugmentPolicy) -> Result<FeatureVector, FeatureError> {
        match self {
            Extractor::Handcrafted { .. } => Ok(handcrafted_features(&augment_raster(img, rng, policy))),
            Extractor::Cnn { backbone, .. } => {
                let t = augment(img, rng, policy).map_err(|e| FeatureError::InvalidConfig(e.to_string()))?;
                backbone.forward(&t)
            }
        }
    }
}

/// Decodes every manifest image and extracts features in parallel. Rows come
/// back in manifest order; failures are collected with their paths.
pub fn extract_features(manifest: &Manifest, extractor: &Extractor) -> Result<FeatureCache, FeatureError> {
    let results: Vec<Result<FeatureVector, (String, String)>> = manifest
        .records()
        .par_iter()
        .map(|rec| {
            let fail = |e: String| (rec.image_path.clone(), e);
            let img = read_image(&manifest.resolve(rec)).map_err(|e| fail(e.to_string()))?;
            extractor.extract(&img).map_err(|e| fail(e.to_string()))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (rec, r) in manifest.records().iter().zip(results) {
        match r {
            Ok(f) => rows.push((rec.image_path.clone(), f)),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(FeatureError::Extraction(failures));
    }
    FeatureCache::new(rows, extractor.tag(), manifest.content_hash())
}
