//! Regression head, optimiser, training loop and pairwise mode.

mod head;
mod optim;
mod persist;
mod siamese;
mod train;

pub use head::{accumulate_backward, head_backward, head_forward, mse_loss, HeadParams, Mode, Trace, HIDDEN1, HIDDEN2, TENSOR_NAMES};
pub use optim::{adamw_step, adamw_update, AdamWConfig, OptimizerState, PlateauScheduler, SchedulerConfig, PLATEAU_THRESHOLD};
pub use persist::{load_head, save_head, SavedHead, ARCH_MLP, ARCH_SIAMESE};
pub use siamese::{
    anchor_weighted_score, make_pairs, pair_distance, siamese_score, siamese_train, PairSample, ANCHOR_EPS, DEFAULT_PARTNERS,
};
pub use train::{
    forward_all, predict, predict_cache, train, train_augmented, train_samples, EpochStats, InputScaler, Samples, TrainConfig, TrainReport, REPORT_HEADER,
};

use crate::features::{ArchiveError, FeatureError};
use crate::metrics::MetricError;

#[derive(Debug, thiserror::Error)]
pub enum RegressorError {
    #[error("input has dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("trace does not belong to the current parameters")]
    StaleTrace,
    #[error("empty batch")]
    EmptyBatch,
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("no anchors given")]
    NoAnchors,
    #[error("head archive is missing parameter {0}")]
    MissingParameter(String),
    #[error("head archive is missing metadata key {0}")]
    MissingMetadata(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad head archive: {0}")]
    BadArchive(String),
    #[error("bad training report: {0}")]
    BadReport(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Feature(FeatureError),
    #[error(transparent)]
    Metric(MetricError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}
