//! Head checkpoints in the `CQWA` container.

use std::path::Path;

use super::head::{HeadParams, TENSOR_NAMES};
use super::RegressorError;
use crate::dataset::ZScoreNormalizer;
use crate::features::WeightArchive;

pub const ARCH_MLP: &str = "mlp-512-256-1";
pub const ARCH_SIAMESE: &str = "siamese";

/// A head with everything needed to score new images.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedHead {
    pub params: HeadParams<f32>,
    pub arch: String,
    pub normalizer: ZScoreNormalizer,
    /// Tag of the extractor whose features the head was trained on.
    pub extractor: Option<String>,
}

impl SavedHead {
    pub fn to_archive(&self) -> WeightArchive {
        let p = &self.params;
        let mut a = WeightArchive::new();
        for ((name, shape), values) in TENSOR_NAMES.iter().zip(p.shapes()).zip(p.tensors()) {
            a.insert(*name, shape, values.to_vec()).expect("tensor names are unique");
        }
        a.metadata.insert("in_dim".into(), p.in_dim().to_string());
        a.metadata.insert("arch".into(), self.arch.clone());
        a.metadata.insert("normalizer".into(), self.normalizer.to_json());
        if let Some(e) = &self.extractor {
            a.metadata.insert("extractor".into(), e.clone());
        }
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self, RegressorError> {
        let meta = |k: &'static str| a.metadata.get(k).ok_or(RegressorError::MissingMetadata(k));
        let in_dim: usize = meta("in_dim")?
            .parse()
            .map_err(|_| RegressorError::BadArchive("in_dim is not an integer".into()))?;
        let normalizer = ZScoreNormalizer::from_json(meta("normalizer")?)
            .map_err(|e| RegressorError::BadArchive(format!("normalizer: {e}")))?;

        let get = |name: &str| a.get(name).ok_or_else(|| RegressorError::MissingParameter(name.to_string()));
        let w1 = get(TENSOR_NAMES[0])?;
        let w2 = get(TENSOR_NAMES[2])?;
        if w1.shape.len() != 2 || w2.shape.len() != 2 {
            return Err(RegressorError::ShapeMismatch("layer weights must be rank 2".into()));
        }
        if w1.shape[1] != in_dim {
            return Err(RegressorError::DimMismatch {
                expected: in_dim,
                got: w1.shape[1],
            });
        }
        let hidden = [w1.shape[0], w2.shape[0]];
        let expected = HeadParams::<f32>::zeros_with_hidden(in_dim, hidden).shapes();
        let mut tensors: [Vec<f32>; 6] = Default::default();
        for ((slot, name), shape) in tensors.iter_mut().zip(TENSOR_NAMES).zip(&expected) {
            let e = get(name)?;
            if &e.shape != shape {
                return Err(RegressorError::ShapeMismatch(format!("{name}: {:?}, expected {shape:?}", e.shape)));
            }
            *slot = e.values.clone();
        }
        let params = HeadParams::from_tensors(in_dim, hidden, tensors)?;
        if !params.is_finite() {
            return Err(RegressorError::BadArchive("non-finite parameter".into()));
        }
        Ok(Self {
            params,
            arch: meta("arch")?.clone(),
            normalizer,
            extractor: a.metadata.get("extractor").cloned(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RegressorError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RegressorError> {
        Self::from_archive(&WeightArchive::load(path)?)
    }
}

pub fn save_head(path: &Path, params: &HeadParams<f32>, normalizer: &ZScoreNormalizer) -> Result<(), RegressorError> {
    SavedHead {
        params: params.clone(),
        arch: ARCH_MLP.into(),
        normalizer: *normalizer,
        extractor: None,
    }
    .save(path)
}

pub fn load_head(path: &Path) -> Result<HeadParams<f32>, RegressorError> {
    Ok(SavedHead::load(path)?.params)
}
