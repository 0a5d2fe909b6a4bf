//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once;
//! unknown keys are rejected. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use contrast_iqa::regressor::{TrainConfig, DEFAULT_PARTNERS};

use crate::error::CliError;

const KEYS: &[&str] = &[
    "manifest",
    "features",
    "extractor",
    "weights",
    "backbone",
    "out_dir",
    "split_fraction",
    "augment",
    "partners",
    "seed",
    "learning_rate",
    "weight_decay",
    "epochs",
    "batch_size",
    "dropout",
    "factor",
    "patience",
    "min_lr",
    "beta1",
    "beta2",
    "eps",
];

#[derive(Clone, Debug, PartialEq)]
pub enum ExtractorChoice {
    Handcrafted,
    Cnn { weights: PathBuf, backbone: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Precomputed feature cache; when absent features are extracted on the fly.
    pub features: Option<PathBuf>,
    pub extractor: ExtractorChoice,
    pub out_dir: PathBuf,
    pub split_fraction: f64,
    pub augment: bool,
    pub partners: usize,
    pub train: TrainConfig,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::validation(format!("config key {key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::validation(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::validation(format!("config line {}: duplicate key {k:?}", n + 1)));
            }
        }
        let path = |v: &String| base.join(v);
        let required = |k: &str| {
            kv.get(k)
                .ok_or_else(|| CliError::validation(format!("config key {k} is required")))
        };

        let mut train = TrainConfig::default();
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get($key) {
                    $field = parse_value($key, v)?;
                }
            };
        }
        set!("seed", train.seed);
        set!("learning_rate", train.learning_rate);
        set!("weight_decay", train.weight_decay);
        set!("epochs", train.epochs);
        set!("batch_size", train.batch_size);
        set!("dropout", train.dropout);
        set!("factor", train.scheduler.factor);
        set!("patience", train.scheduler.patience);
        set!("min_lr", train.scheduler.min_lr);
        set!("beta1", train.adamw.beta1);
        set!("beta2", train.adamw.beta2);
        set!("eps", train.adamw.eps);

        let extractor = match kv.get("extractor").map(String::as_str).unwrap_or("handcrafted") {
            "handcrafted" => ExtractorChoice::Handcrafted,
            "cnn" => ExtractorChoice::Cnn {
                weights: path(required("weights")?),
                backbone: kv.get("backbone").cloned().unwrap_or_else(|| "b0".into()),
            },
            other => {
                return Err(CliError::validation(format!(
                    "config key extractor: {other:?} is not handcrafted or cnn"
                )))
            }
        };
        let mut cfg = Self {
            manifest: path(required("manifest")?),
            features: kv.get("features").map(path),
            extractor,
            out_dir: path(required("out_dir")?),
            split_fraction: 0.8,
            augment: false,
            partners: DEFAULT_PARTNERS,
            train,
        };
        set!("split_fraction", cfg.split_fraction);
        set!("augment", cfg.augment);
        set!("partners", cfg.partners);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("--config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| match e {
            contrast_iqa::regressor::RegressorError::InvalidConfig { field, reason } => {
                CliError::validation(format!("config key {field}: {reason}"))
            }
            other => CliError::validation(other.to_string()),
        })?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CliError::validation("config key split_fraction: must lie in (0, 1)"));
        }
        if self.partners == 0 {
            return Err(CliError::validation("config key partners: must be at least 1"));
        }
        if self.augment && self.features.is_some() {
            return Err(CliError::validation(
                "config keys augment and features: augmentation re-extracts features, drop one of them",
            ));
        }
        let mut paths = vec![("manifest", &self.manifest)];
        if let Some(f) = &self.features {
            paths.push(("features", f));
        }
        if let ExtractorChoice::Cnn { weights, .. } = &self.extractor {
            paths.push(("weights", weights));
        }
        for (key, p) in paths {
            if !p.exists() {
                return Err(CliError::io(format!("config key {key}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
