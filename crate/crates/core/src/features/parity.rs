//! Forward-parity fixtures produced by an external exporter.
//!
//! A fixture is two CQWA files next to a weight archive: one holding a single
//! entry `input` of shape `[3, H, W]` (already normalised), the other a single
//! entry `features` of shape `[D]` recorded by the reference implementation.

use std::path::Path;

use super::{Backbone, FeatureError, WeightArchive};
use crate::imagecore::Tensor3;

/// Largest accepted absolute deviation from the reference features.
pub const PARITY_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ParityFixture {
    pub input: Tensor3,
    pub reference: Vec<f32>,
}

fn single<'a>(a: &'a WeightArchive, name: &str, rank: usize) -> Result<&'a super::ArchiveEntry, FeatureError> {
    let e = a
        .get(name)
        .ok_or_else(|| FeatureError::MissingParameter(name.into()))?;
    if e.shape.len() != rank {
        return Err(FeatureError::ShapeMismatch(name.into()));
    }
    Ok(e)
}

impl ParityFixture {
    pub fn from_archives(input: &WeightArchive, reference: &WeightArchive) -> Result<Self, FeatureError> {
        let i = single(input, "input", 3)?;
        let tensor = Tensor3::new(i.shape[0], i.shape[1], i.shape[2], i.values.clone())
            .map_err(|_| FeatureError::ShapeMismatch("input".into()))?;
        let r = single(reference, "features", 1)?;
        Ok(Self {
            input: tensor,
            reference: r.values.clone(),
        })
    }

    pub fn to_archives(&self) -> (WeightArchive, WeightArchive) {
        let mut i = WeightArchive::new();
        i.insert(
            "input",
            vec![self.input.channels(), self.input.height(), self.input.width()],
            self.input.data().to_vec(),
        )
        .expect("single entry");
        let mut r = WeightArchive::new();
        r.insert("features", vec![self.reference.len()], self.reference.clone())
            .expect("single entry");
        (i, r)
    }

    pub fn load(input: &Path, reference: &Path) -> Result<Self, FeatureError> {
        Self::from_archives(&WeightArchive::load(input)?, &WeightArchive::load(reference)?)
    }

    /// Max absolute difference between `backbone` features and the reference.
    pub fn max_abs_diff(&self, backbone: &Backbone) -> Result<f64, FeatureError> {
        let got = backbone.forward(&self.input)?;
        if got.dim() != self.reference.len() {
            return Err(FeatureError::DimMismatch {
                expected: self.reference.len(),
                got: got.dim(),
            });
        }
        Ok(got
            .values()
            .iter()
            .zip(&self.reference)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max))
    }

    pub fn matches(&self, backbone: &Backbone) -> Result<bool, FeatureError> {
        Ok(self.max_abs_diff(backbone)? < PARITY_TOLERANCE)
    }
}
