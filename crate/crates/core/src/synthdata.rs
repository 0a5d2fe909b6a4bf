//! Contrast-distorted dataset synthesis with pseudo-MOS labels.
//!
//! Every base image is distorted at each configured level; optionally each
//! (base, level) pair is expanded into several label-preserving geometric
//! variants (mirror and mild crop), so small base sets still yield a few hundred
//! records.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{DatasetError, Manifest, MosRecord};
use crate::imagecore::{read_image, resize_bilinear, ImageError, RasterImage, ReadImageError, SeededRng};

const VARIANT_STREAM: u64 = 0x5641_5249;
const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("contrast scale must lie in (0, 2], got {0}")]
    InvalidScale(f64),
    #[error("synthesis needs at least one base image and one level")]
    EmptySpec,
    #[error("variants per pair must be at least 1")]
    NoVariants,
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Read(#[from] ReadImageError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistortionKind {
    Gamma,
    LinearContrast,
}

impl DistortionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::Gamma => "gamma",
            DistortionKind::LinearContrast => "linear_contrast",
        }
    }
}

/// A contrast distortion: gamma exponent or linear contrast scale about mid-grey.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distortion {
    kind: DistortionKind,
    level: f64,
}

impl Distortion {
    pub fn gamma(gamma: f64) -> Result<Self, SynthError> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(SynthError::InvalidGamma(gamma));
        }
        Ok(Self {
            kind: DistortionKind::Gamma,
            level: gamma,
        })
    }

    pub fn linear_contrast(scale: f64) -> Result<Self, SynthError> {
        if !(scale > 0.0 && scale <= 2.0) {
            return Err(SynthError::InvalidScale(scale));
        }
        Ok(Self {
            kind: DistortionKind::LinearContrast,
            level: scale,
        })
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn apply(&self, img: &RasterImage) -> RasterImage {
        match self.kind {
            DistortionKind::Gamma => apply_gamma(img, self.level).expect("validated gamma"),
            DistortionKind::LinearContrast => apply_linear_contrast(img, self.level).expect("validated scale"),
        }
    }

    /// Distortion magnitude on the scale used by [`pseudo_mos`].
    pub fn magnitude(&self) -> f64 {
        match self.kind {
            DistortionKind::Gamma => self.level.log2().abs(),
            DistortionKind::LinearContrast => (1.0 - self.level).abs(),
        }
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}__{}", self.kind.as_str(), self.level)
    }
}

fn lut_apply(img: &RasterImage, f: impl Fn(f64) -> f64) -> RasterImage {
    let lut: Vec<u8> = (0..=255u32)
        .map(|x| f(x as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    img.map_samples(|v| lut[v as usize])
}

/// `round(255 * (x / 255)^gamma)` per sample.
pub fn apply_gamma(img: &RasterImage, gamma: f64) -> Result<RasterImage, SynthError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(SynthError::InvalidGamma(gamma));
    }
    Ok(lut_apply(img, |x| 255.0 * (x / 255.0).powf(gamma)))
}

/// `clamp(round(127.5 + s * (x - 127.5)), 0, 255)` per sample.
pub fn apply_linear_contrast(img: &RasterImage, scale: f64) -> Result<RasterImage, SynthError> {
    if !(scale > 0.0 && scale <= 2.0) {
        return Err(SynthError::InvalidScale(scale));
    }
    Ok(lut_apply(img, |x| 127.5 + scale * (x - 127.5)))
}

/// Synthetic quality label on `[1, 5]`, 5 for an undistorted image.
pub fn pseudo_mos(d: &Distortion) -> f64 {
    let slope = match d.kind {
        DistortionKind::Gamma => 2.5,
        DistortionKind::LinearContrast => 4.0,
    };
    (5.0 - slope * d.magnitude()).clamp(1.0, 5.0)
}

/// Smooth synthetic scene used when no photographs are at hand: a tilted
/// gradient, a few soft colour blobs and mild texture, varied by `index`.
pub fn procedural_base(index: usize, width: usize, height: usize, seed: u64) -> RasterImage {
    let mut rng = SeededRng::derive(seed, &[0x4241_5345, index as u64]);
    let tilt = rng.uniform(0.0, std::f64::consts::TAU);
    let base_level = rng.uniform(0.3, 0.7);
    let tint = [rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)];
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.uniform(0.0, 1.0),
                rng.uniform(0.0, 1.0),
                rng.uniform(0.08, 0.3),
                [rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35)],
            )
        })
        .collect();
    let freq = rng.uniform(8.0, 24.0);
    RasterImage::from_fn(width, height, |x, y| {
        let u = x as f64 / width as f64;
        let v = y as f64 / height as f64;
        let ramp = 0.3 * ((u - 0.5) * tilt.cos() + (v - 0.5) * tilt.sin());
        let texture = 0.04 * (freq * u * std::f64::consts::TAU).sin() * (freq * 0.7 * v * std::f64::consts::TAU).cos();
        let mut rgb = [0.0; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let mut val = base_level + ramp + texture;
            for &(bx, by, r, amp) in &blobs {
                let d2 = (u - bx).powi(2) + (v - by).powi(2);
                val += amp[c] * (-d2 / (2.0 * r * r)).exp();
            }
            *out = (val * tint[c] * 255.0).round().clamp(0.0, 255.0);
        }
        rgb.map(|v| v as u8)
    })
}

/// Label-preserving geometric variant: optional mirror plus a crop covering
/// 80-100% of each side, resized back to the source dimensions.
fn geometric_variant(img: &RasterImage, mut rng: SeededRng) -> RasterImage {
    let flip = rng.bernoulli(0.5);
    let scale = rng.uniform(0.8, 1.0);
    let (w, h) = (img.width(), img.height());
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let ox = (rng.next_f64() * (w - cw + 1) as f64) as usize;
    let oy = (rng.next_f64() * (h - ch + 1) as f64) as usize;
    let cropped = RasterImage::from_fn(cw, ch, |x, y| {
        let sx = if flip { ox + cw - 1 - x } else { ox + x };
        img.pixel(sx, oy + y)
    });
    resize_bilinear(&cropped, w, h)
}

/// What to generate and where.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub base_images: Vec<PathBuf>,
    pub levels: Vec<Distortion>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Records per (base, level) pair; variant 0 is the undistorted geometry.
    pub variants: usize,
}

impl SynthSpec {
    pub fn new(base_images: Vec<PathBuf>, levels: Vec<Distortion>, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_images,
            levels,
            seed,
            output_dir: output_dir.into(),
            variants: 1,
        }
    }
}

fn file_name(base: &str, d: &Distortion, variant: usize) -> String {
    if variant == 0 {
        format!("{base}__{d}.png")
    } else {
        format!("{base}__{d}__v{variant}.png")
    }
}

/// Writes every distorted image plus `manifest.csv` into the output directory
/// and returns the manifest. Rows are ordered base-major, then level, then
/// variant, independent of the parallel schedule.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Manifest, SynthError> {
    if spec.base_images.is_empty() || spec.levels.is_empty() {
        return Err(SynthError::EmptySpec);
    }
    if spec.variants == 0 {
        return Err(SynthError::NoVariants);
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(&spec.output_dir).map_err(io_err(&spec.output_dir))?;

    let bases: Vec<(String, RasterImage)> = spec
        .base_images
        .par_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "base".into());
            Ok((stem, read_image(p)?))
        })
        .collect::<Result<_, SynthError>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..bases.len())
        .flat_map(|b| (0..spec.levels.len()).flat_map(move |l| (0..spec.variants).map(move |v| (b, l, v))))
        .collect();

    let records = jobs
        .par_iter()
        .map(|&(b, l, v)| {
            let (stem, img) = &bases[b];
            let level = &spec.levels[l];
            let geometry = if v == 0 {
                img.clone()
            } else {
                geometric_variant(img, SeededRng::derive(spec.seed, &[VARIANT_STREAM, b as u64, v as u64]))
            };
            let distorted = level.apply(&geometry);
            let name = file_name(stem, level, v);
            let path = spec.output_dir.join(&name);
            std::fs::write(&path, distorted.encode_png()?).map_err(io_err(&path))?;
            Ok(MosRecord::new(name, pseudo_mos(level)))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let manifest = Manifest::new(records, "synthetic")?.with_base_dir(&spec.output_dir);
    manifest.save(&spec.output_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Writes `count` procedural base images as PNG files and returns their paths.
pub fn write_procedural_bases(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>, SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("base{i:02}.png"));
            let png = procedural_base(i, size, size, seed).encode_png()?;
            std::fs::write(&path, png).map_err(|source| SynthError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}
