//! Global contrast statistics of the luma channel.
//!
//! All sixteen slots are computed from the 256-bin grey histogram or from
//! integer patch sums over a mirror-symmetric grid, which makes the vector
//! exactly invariant under horizontal flips.

use super::FeatureVector;
use crate::imagecore::RasterImage;

pub const HANDCRAFTED_DIM: usize = 16;
const GRID: usize = 8;
const KL_EPSILON: f64 = 1e-12;

/// Slot names, in vector order.
pub const HANDCRAFTED_NAMES: [&str; HANDCRAFTED_DIM] = [
    "mean",
    "std",
    "skewness",
    "excess_kurtosis",
    "entropy_bits",
    "symmetric_kl_uniform",
    "local_contrast_mean",
    "local_contrast_std",
    "min",
    "max",
    "median",
    "iqr",
    "reserved0",
    "reserved1",
    "reserved2",
    "reserved3",
];

/// Integer BT.601 luma, matching common 8-bit grey conversion.
fn grey(img: &RasterImage) -> Vec<u8> {
    img.data()
        .chunks_exact(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect()
}

fn histogram(values: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Value at fractional order-statistic position `pos` (0-based) of the sorted
/// samples described by `hist`.
fn order_stat(hist: &[u64; 256], pos: f64) -> f64 {
    let at = |k: u64| -> f64 {
        let mut cum = 0;
        for (v, &c) in hist.iter().enumerate() {
            cum += c;
            if k < cum {
                return v as f64;
            }
        }
        255.0
    };
    let lo = pos.floor();
    let frac = pos - lo;
    let a = at(lo as u64);
    if frac == 0.0 {
        a
    } else {
        a + frac * (at(lo as u64 + 1) - a)
    }
}

/// Linear-interpolated quantile (sample position `(n - 1) * q`).
fn quantile(hist: &[u64; 256], n: u64, q: f64) -> f64 {
    order_stat(hist, (n - 1) as f64 * q)
}

/// Column ranges of the grid; the right half mirrors the left half exactly,
/// sharing the centre column when the width is odd.
fn column_bands(width: usize) -> Vec<(usize, usize)> {
    let half = GRID / 2;
    let centre_end = width.div_ceil(2);
    let left: Vec<(usize, usize)> = (0..half)
        .map(|j| {
            let start = j * width / GRID;
            let end = if j + 1 == half { centre_end } else { (j + 1) * width / GRID };
            (start, end)
        })
        .collect();
    let right = left.iter().rev().map(|&(s, e)| (width - e, width - s));
    left.iter().copied().chain(right).collect()
}

fn row_bands(height: usize) -> Vec<(usize, usize)> {
    (0..GRID).map(|j| (j * height / GRID, (j + 1) * height / GRID)).collect()
}

/// Standard deviations of the grey values in each grid patch, sorted.
fn patch_stds(g: &[u8], width: usize, height: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(GRID * GRID);
    for &(r0, r1) in &row_bands(height) {
        for &(c0, c1) in &column_bands(width) {
            if r1 <= r0 || c1 <= c0 {
                continue;
            }
            let (mut s, mut s2, mut n) = (0u64, 0u64, 0u64);
            for y in r0..r1 {
                for &v in &g[y * width + c0..y * width + c1] {
                    s += v as u64;
                    s2 += (v as u64) * (v as u64);
                    n += 1;
                }
            }
            let mean = s as f64 / n as f64;
            let var = (s2 as f64 / n as f64 - mean * mean).max(0.0);
            out.push(var.sqrt());
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// The sixteen-slot contrast descriptor (see [`HANDCRAFTED_NAMES`]).
///
/// Moments are population moments; skewness and excess kurtosis are 0 for a
/// constant image. Entropy is in bits over 256 bins. The symmetric KL term is
/// `KL(p||u) + KL(u||p)` in bits against the uniform histogram, with
/// `p_i = count_i / N + 1e-12`. Local contrast is the mean and spread of patch
/// standard deviations over an 8x8 grid.
pub fn handcrafted_features(img: &RasterImage) -> FeatureVector {
    let g = grey(img);
    let hist = histogram(&g);
    let n = g.len() as u64;
    let nf = n as f64;

    let mean = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum::<f64>() / nf;
    let central = |k: i32| {
        hist.iter()
            .enumerate()
            .map(|(v, &c)| c as f64 * (v as f64 - mean).powi(k))
            .sum::<f64>()
            / nf
    };
    let var = central(2);
    let std = var.sqrt();
    let (skew, kurt) = if var > 0.0 {
        (central(3) / var.powf(1.5), central(4) / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let probs: Vec<f64> = hist.iter().map(|&c| c as f64 / nf).collect();
    let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    let u = 1.0 / 256.0;
    let sym_kl = probs
        .iter()
        .map(|&p| {
            let p = p + KL_EPSILON;
            (p - u) * (p / u).log2()
        })
        .sum::<f64>()
        .max(0.0);

    let (lc_mean, lc_std) = mean_std(&patch_stds(&g, img.width(), img.height()));
    let min = hist.iter().position(|&c| c > 0).unwrap_or(0) as f64;
    let max = hist.iter().rposition(|&c| c > 0).unwrap_or(0) as f64;
    let median = quantile(&hist, n, 0.5);
    let iqr = quantile(&hist, n, 0.75) - quantile(&hist, n, 0.25);

    let values = [
        mean, std, skew, kurt, entropy, sym_kl, lc_mean, lc_std, min, max, median, iqr, 0.0, 0.0, 0.0, 0.0,
    ];
    FeatureVector::new(values.iter().map(|&v| v as f32).collect()).expect("handcrafted statistics are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{horizontal_flip, to_unit_tensor, SeededRng};
    use proptest::prelude::*;

    fn slot(f: &FeatureVector, name: &str) -> f32 {
        f.values()[HANDCRAFTED_NAMES.iter().position(|n| *n == name).unwrap()]
    }

    #[test]
    fn constant_image() {
        let f = handcrafted_features(&RasterImage::filled(9, 7, [90, 90, 90]));
        assert_eq!(f.dim(), 16);
        for name in ["std", "skewness", "excess_kurtosis", "entropy_bits", "local_contrast_mean", "iqr"] {
            assert_eq!(slot(&f, name), 0.0, "{name}");
        }
        assert_eq!(slot(&f, "mean"), 90.0);
        assert_eq!(slot(&f, "median"), 90.0);
    }

    #[test]
    fn uniform_histogram() {
        let img = RasterImage::from_fn(16, 16, |x, y| {
            let v = (y * 16 + x) as u8;
            [v, v, v]
        });
        let f = handcrafted_features(&img);
        assert!((slot(&f, "entropy_bits") - 8.0).abs() < 1e-6);
        assert!(slot(&f, "symmetric_kl_uniform").abs() < 1e-9);
        assert_eq!(slot(&f, "min"), 0.0);
        assert_eq!(slot(&f, "max"), 255.0);
        assert_eq!(slot(&f, "median"), 127.5);
    }

    #[test]
    fn two_level_image() {
        let img = RasterImage::from_fn(10, 10, |x, _| if x < 5 { [0; 3] } else { [255; 3] });
        let f = handcrafted_features(&img);
        assert!((slot(&f, "entropy_bits") - 1.0).abs() < 1e-6);
        assert_eq!(slot(&f, "mean"), 127.5);
        assert_eq!(slot(&f, "std"), 127.5);
        assert!(slot(&f, "skewness").abs() < 1e-6);
        // two-point symmetric distribution: kurtosis 1, excess -2
        assert!((slot(&f, "excess_kurtosis") + 2.0).abs() < 1e-6);
        assert!(slot(&f, "symmetric_kl_uniform") > 0.0);
    }

    #[test]
    fn bands_mirror() {
        for w in 1..40 {
            let bands = column_bands(w);
            assert_eq!(bands.len(), GRID);
            for (j, &(s, e)) in bands.iter().enumerate() {
                let (ms, me) = bands[GRID - 1 - j];
                assert_eq!((s, e), (w - me, w - ms), "w={w} band {j}");
            }
            let covered: std::collections::HashSet<usize> = bands.iter().flat_map(|&(s, e)| s..e).collect();
            assert_eq!(covered.len(), w);
        }
    }

    fn random_image(w: usize, h: usize, seed: u64) -> RasterImage {
        let mut rng = SeededRng::new(seed);
        RasterImage::from_fn(w, h, |_, _| {
            [(rng.next_f64() * 256.0) as u8, (rng.next_f64() * 256.0) as u8, (rng.next_f64() * 256.0) as u8]
        })
    }

    proptest! {
        #[test]
        fn flip_invariant(w in 1usize..40, h in 1usize..30, seed in any::<u64>()) {
            let img = random_image(w, h, seed);
            let flipped = horizontal_flip(&to_unit_tensor(&img)).to_raster();
            prop_assert_eq!(handcrafted_features(&img), handcrafted_features(&flipped));
        }

        #[test]
        fn entropy_and_kl_bounds(w in 1usize..40, h in 1usize..30, seed in any::<u64>()) {
            let f = handcrafted_features(&random_image(w, h, seed));
            let e = slot(&f, "entropy_bits");
            prop_assert!((0.0..=8.0 + 1e-6).contains(&e));
            prop_assert!(slot(&f, "symmetric_kl_uniform") > 0.0);
        }
    }
}
