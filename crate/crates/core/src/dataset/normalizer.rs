use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, MosRecord};

/// MOS z-score transform with a clipped inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreNormalizer {
    pub mu: f64,
    pub sigma: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl ZScoreNormalizer {
    pub const DEFAULT_CLIP: (f64, f64) = (1.0, 5.0);

    pub fn new(mu: f64, sigma: f64, clip_lo: f64, clip_hi: f64) -> Result<Self, DatasetError> {
        let n = Self {
            mu,
            sigma,
            clip_lo,
            clip_hi,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(DatasetError::InvalidNormalizer(format!(
                "mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(DatasetError::InvalidNormalizer(format!(
                "clip range [{}, {}]",
                self.clip_lo, self.clip_hi
            )));
        }
        Ok(())
    }

    /// Mean and population standard deviation (divisor N) of the scores.
    pub fn fit_scores(scores: &[f64]) -> Result<Self, DatasetError> {
        if scores.len() < 2 {
            return Err(DatasetError::TooFewRecords);
        }
        let n = scores.len() as f64;
        let mu = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
        if var == 0.0 || scores.iter().all(|&s| s == scores[0]) {
            return Err(DatasetError::DegenerateScores);
        }
        let (lo, hi) = Self::DEFAULT_CLIP;
        Self::new(mu, var.sqrt(), lo, hi)
    }

    /// Fits on the given records, which should be the training split only.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a MosRecord>) -> Result<Self, DatasetError> {
        let scores: Vec<f64> = records.into_iter().map(|r| r.mos).collect();
        Self::fit_scores(&scores)
    }

    pub fn normalize(&self, mos: f64) -> f64 {
        (mos - self.mu) / self.sigma
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sigma + self.mu
    }

    pub fn denormalize_clip(&self, z: f64) -> f64 {
        self.denormalize(z).clamp(self.clip_lo, self.clip_hi)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("normaliser serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let n: Self = serde_json::from_str(text)?;
        n.validate()?;
        Ok(n)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_examples() {
        let n = ZScoreNormalizer::fit_scores(&[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(n.mu, 3.0);
        assert!((n.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let n = ZScoreNormalizer::fit_scores(&[0.0, 2.0]).unwrap();
        assert_eq!((n.mu, n.sigma), (1.0, 1.0));
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            ZScoreNormalizer::fit_scores(&[3.0, 3.0, 3.0]),
            Err(DatasetError::DegenerateScores)
        ));
        assert!(matches!(
            ZScoreNormalizer::fit_scores(&[3.0]),
            Err(DatasetError::TooFewRecords)
        ));
    }

    #[test]
    fn normalize_examples() {
        let n = ZScoreNormalizer::new(3.0, 0.8165, 1.0, 5.0).unwrap();
        assert_eq!(n.normalize(3.0), 0.0);
        assert!((n.normalize(3.0 + 0.8165) - 1.0).abs() < 1e-12);
        assert!((n.normalize(4.0) - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn denormalize_clip_examples() {
        let n = ZScoreNormalizer::new(3.0, 1.0, 1.0, 5.0).unwrap();
        assert_eq!(n.denormalize_clip(0.0), 3.0);
        assert_eq!(n.denormalize_clip(10.0), 5.0);
        assert_eq!(n.denormalize_clip(-10.0), 1.0);
    }

    #[test]
    fn json_round_trip() {
        let n = ZScoreNormalizer::new(3.25, 0.7, 1.0, 5.0).unwrap();
        assert_eq!(ZScoreNormalizer::from_json(&n.to_json()).unwrap(), n);
        assert!(ZScoreNormalizer::from_json(r#"{"mu":1,"sigma":0,"clip_lo":1,"clip_hi":5}"#).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_in_range(scores in prop::collection::vec(1.0f64..5.0, 2..50), x in 1.0f64..=5.0) {
            prop_assume!(scores.iter().any(|&s| s != scores[0]));
            let n = ZScoreNormalizer::fit_scores(&scores).unwrap();
            prop_assert!((n.denormalize_clip(n.normalize(x)) - x).abs() < 1e-9);
        }

        #[test]
        fn fit_set_is_standardised(scores in prop::collection::vec(0.0f64..10.0, 2..200)) {
            prop_assume!(scores.iter().any(|&s| (s - scores[0]).abs() > 1e-6));
            let n = ZScoreNormalizer::fit_scores(&scores).unwrap();
            let z: Vec<f64> = scores.iter().map(|&s| n.normalize(s)).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
