//! No-reference contrast image quality assessment.
//!
//! The crate is organised as a pipeline:
//!
//! - [`imagecore`]: decoding, resizing, tensor conversion and the seeded augmentation pipeline.
//! - [`synthdata`]: gamma / linear-contrast distortion of base images with pseudo-MOS labels.
//! - [`dataset`]: manifest CSV handling, train/validation split and MOS z-score normalisation.
//! - [`features`]: frozen feature extractors (handcrafted contrast statistics or an MBConv
//!   backbone) plus the `CQWA` binary weight archive and feature cache.
//! - [`regressor`]: the 512-256-1 regression head, AdamW, plateau scheduling, the training
//!   loop and the pairwise (Siamese) difference mode.
//! - [`metrics`]: PLCC, SRCC, tolerance accuracy and evaluation reports.

pub mod dataset;
pub mod features;
pub mod imagecore;
pub mod metrics;
pub mod regressor;
pub mod synthdata;

pub use dataset::{Manifest, MosRecord, Split, ZScoreNormalizer};
pub use features::{FeatureCache, FeatureVector, WeightArchive};
pub use imagecore::{AugmentPolicy, RasterImage, SeededRng, Tensor3};
pub use metrics::EvalReport;
pub use regressor::{HeadParams, TrainConfig, TrainReport};
