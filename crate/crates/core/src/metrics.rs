//! Agreement statistics between predicted and subjective scores.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Default tolerance for [`tolerance_accuracy`], in MOS units.
pub const DEFAULT_TOLERANCE: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} values")]
    TooShort(usize),
    #[error("vector has zero variance")]
    DegenerateVector,
    #[error("tolerance must be positive")]
    InvalidTolerance,
    #[error("closed-form SRCC requires distinct values")]
    TiedValues,
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(MetricError::TooShort(min));
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::DegenerateVector);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

/// Spearman rank-order correlation.
///
/// Without ties this is the closed form over integer rank differences (exact
/// for small `n`); with ties it is the Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    match srcc_closed_form(x, y) {
        Err(MetricError::TiedValues) => rank_pearson(x, y),
        r => r,
    }
}

/// Pearson correlation of average ranks, the tie-aware definition.
pub fn rank_pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

/// `1 - 6 * sum(d^2) / (n (n^2 - 1))`; only defined without ties.
pub fn srcc_closed_form(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    if has_ties(x) || has_ties(y) {
        return Err(MetricError::TiedValues);
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    let n = x.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Fraction of predictions with `|pred - actual| <= tau` (inclusive).
pub fn tolerance_accuracy(pred: &[f64], actual: &[f64], tau: f64) -> Result<f64, MetricError> {
    check_pair(pred, actual, 1)?;
    if !(tau > 0.0) {
        return Err(MetricError::InvalidTolerance);
    }
    let hits = pred.iter().zip(actual).filter(|(p, a)| (*p - *a).abs() <= tau).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, actual, 1)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub path: String,
    pub actual_mos: f64,
    pub predicted_mos: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plcc: f64,
    pub srcc: f64,
    pub tolerance_accuracy: f64,
    pub mse: f64,
    pub n: usize,
    pub per_image: Vec<ImageScore>,
}

/// All statistics over aligned predictions, actual scores and paths.
pub fn evaluate(predictions: &[f64], actuals: &[f64], paths: &[String]) -> Result<EvalReport, MetricError> {
    check_pair(predictions, actuals, 2)?;
    if paths.len() != predictions.len() {
        return Err(MetricError::LengthMismatch(paths.len(), predictions.len()));
    }
    Ok(EvalReport {
        plcc: plcc(predictions, actuals)?,
        srcc: srcc(predictions, actuals)?,
        tolerance_accuracy: tolerance_accuracy(predictions, actuals, DEFAULT_TOLERANCE)?,
        mse: mse(predictions, actuals)?,
        n: predictions.len(),
        per_image: paths
            .iter()
            .zip(actuals.iter().zip(predictions))
            .map(|(p, (&a, &q))| ImageScore {
                path: p.clone(),
                actual_mos: a,
                predicted_mos: q,
            })
            .collect(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "plcc,srcc,tolerance_accuracy,mse,n\n{},{},{},{},{}\n",
            self.plcc, self.srcc, self.tolerance_accuracy, self.mse, self.n
        )
    }

    pub fn per_image_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["path", "actual_mos", "predicted_mos"]).expect("in-memory write");
        for r in &self.per_image {
            w.write_record([r.path.clone(), r.actual_mos.to_string(), r.predicted_mos.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Writes `report.json`, `summary.csv` and `per_image.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            ("report.json", self.to_json()),
            ("summary.csv", self.summary_csv()),
            ("per_image.csv", self.per_image_csv()),
        ];
        files
            .into_iter()
            .map(|(name, body)| {
                let p = dir.join(name);
                std::fs::write(&p, body)?;
                Ok(p)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert!((plcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((plcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.9820).abs() < 1e-4);
    }

    #[test]
    fn plcc_errors() {
        assert_eq!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::DegenerateVector));
        assert_eq!(plcc(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(plcc(&[1.0], &[1.0]), Err(MetricError::TooShort(2)));
    }

    #[test]
    fn srcc_examples() {
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -0.5);
        assert_eq!(srcc_closed_form(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -0.5);
        assert!((srcc(&[1.0, 5.0, 9.0], &[0.1, 0.2, 100.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(srcc(&[2.0, 2.0], &[1.0, 3.0]), Err(MetricError::DegenerateVector));
        assert_eq!(srcc_closed_form(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(MetricError::TiedValues));
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn tolerance_examples() {
        let a = [3.0, 3.0, 3.0];
        assert_eq!(tolerance_accuracy(&a, &a, 0.5).unwrap(), 1.0);
        assert_eq!(tolerance_accuracy(&[3.4, 3.6], &[3.0, 3.0], 0.5).unwrap(), 0.5);
        assert_eq!(tolerance_accuracy(&[3.5], &[3.0], 0.5).unwrap(), 1.0);
        assert_eq!(tolerance_accuracy(&[3.5], &[3.0], 0.0), Err(MetricError::InvalidTolerance));
    }

    #[test]
    fn evaluate_perfect() {
        let a = [1.5, 2.0, 4.0];
        let paths: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = evaluate(&a, &a, &paths).unwrap();
        assert_eq!((r.plcc, r.srcc, r.tolerance_accuracy, r.mse, r.n), (1.0, 1.0, 1.0, 0.0, 3));
        assert!(r.per_image_csv().starts_with("path,actual_mos,predicted_mos\na,1.5,1.5\n"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in ["plcc", "srcc", "tolerance_accuracy", "mse"] {
            assert!(json.get(k).is_some(), "{k}");
        }
    }

    proptest! {
        #[test]
        fn plcc_affine_invariance(
            xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -10.0f64..10.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            let base = match plcc(&x, &y) { Ok(v) => v, Err(_) => return Ok(()) };
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = plcc(&ax, &y).unwrap();
            prop_assert!((r - a.signum() * base).abs() < 1e-12);
            prop_assert!((plcc(&y, &x).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn srcc_monotone_invariance(xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60)) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            let base = match srcc(&x, &y) { Ok(v) => v, Err(_) => return Ok(()) };
            let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            prop_assert!((srcc(&tx, &y).unwrap() - base).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }

        #[test]
        fn closed_form_agrees_with_rank_pearson(x in prop::collection::vec(-1e3f64..1e3, 2..200), seed in any::<u64>()) {
            let mut y = x.clone();
            y.sort_by(f64::total_cmp);
            y.dedup();
            prop_assume!(y.len() == x.len());
            y.rotate_left((seed % x.len() as u64) as usize);
            let cf = srcc_closed_form(&x, &y).unwrap();
            prop_assert!((cf - rank_pearson(&x, &y).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn tolerance_monotone_in_tau(
            pa in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..40),
            t1 in 0.01f64..2.0, t2 in 0.01f64..2.0,
        ) {
            let (p, a): (Vec<f64>, Vec<f64>) = pa.into_iter().unzip();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(tolerance_accuracy(&p, &a, lo).unwrap() <= tolerance_accuracy(&p, &a, hi).unwrap());
        }
    }
}
