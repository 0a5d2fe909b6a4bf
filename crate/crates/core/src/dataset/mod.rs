//! Manifest CSV handling, seeded train/validation splitting and MOS z-scores.

mod normalizer;

pub use normalizer::ZScoreNormalizer;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::imagecore::SeededRng;

const SPLIT_STREAM: u64 = 0x5350_4c49_5400;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("manifest {0} not found")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest header {0:?}; expected path,mos[,split]")]
    BadHeader(String),
    #[error("unparsable MOS on line {0}")]
    UnparsableMos(usize),
    #[error("malformed row on line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate path {0}")]
    DuplicatePath(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("need at least two scores to fit a normaliser")]
    TooFewRecords,
    #[error("all scores are equal; standard deviation is zero")]
    DegenerateScores,
    #[error("invalid normaliser: {0}")]
    InvalidNormalizer(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Split {
    Train,
    Val,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Unassigned => "unassigned",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "" | "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MosRecord {
    /// Path as written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: String,
    pub mos: f64,
    pub split: Split,
}

impl MosRecord {
    pub fn new(image_path: impl Into<String>, mos: f64) -> Self {
        Self {
            image_path: image_path.into(),
            mos,
            split: Split::Unassigned,
        }
    }
}

/// Ordered catalogue of images and their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    records: Vec<MosRecord>,
    pub source_tag: String,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<MosRecord>, source_tag: impl Into<String>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.image_path.is_empty() {
                return Err(DatasetError::MalformedRow {
                    line: 0,
                    reason: "empty path".into(),
                });
            }
            if !r.mos.is_finite() {
                return Err(DatasetError::MalformedRow {
                    line: 0,
                    reason: format!("non-finite MOS for {}", r.image_path),
                });
            }
            if !seen.insert(r.image_path.as_str()) {
                return Err(DatasetError::DuplicatePath(r.image_path.clone()));
            }
        }
        Ok(Self {
            records,
            source_tag: source_tag.into(),
            base_dir: PathBuf::new(),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn records(&self) -> &[MosRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &MosRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = (usize, &MosRecord)> {
        self.records.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    /// Sub-manifest containing only records of `split`, order preserved.
    pub fn subset(&self, split: Split) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
            source_tag: self.source_tag.clone(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Hex SHA-256 over the record paths, each terminated by `\n`. Stored in
    /// feature caches to tie them to the manifest they were extracted from.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.image_path.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seeded shuffle followed by prefix assignment: exactly
    /// `round(N * train_fraction)` records become `Train`, the rest `Val`.
    /// Record order in the returned manifest is unchanged.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Manifest, DatasetError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DatasetError::BadFraction(train_fraction));
        }
        if self.records.is_empty() {
            return Err(DatasetError::EmptyManifest);
        }
        let n = self.records.len();
        let n_train = (n as f64 * train_fraction).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut SeededRng::derive(seed, &[SPLIT_STREAM]));
        let mut out = self.clone();
        for (rank, &i) in order.iter().enumerate() {
            out.records[i].split = if rank < n_train { Split::Train } else { Split::Val };
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Manifest, DatasetError> {
        if !path.exists() {
            return Err(DatasetError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let tag = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::parse_csv(&text, tag)?.with_base_dir(base))
    }

    /// Parses manifest CSV text. Line numbers in errors count the header as line 1.
    pub fn parse_csv(text: &str, source_tag: impl Into<String>) -> Result<Manifest, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = match rows.next() {
            Some(h) => h?,
            None => return Err(DatasetError::BadHeader(String::new())),
        };
        let cols: Vec<&str> = header.iter().collect();
        let has_split = match cols.as_slice() {
            ["path", "mos"] => false,
            ["path", "mos", "split"] => true,
            _ => return Err(DatasetError::BadHeader(cols.join(","))),
        };
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, row) in rows.enumerate() {
            let line = i + 2;
            let row = row?;
            if row.len() == 1 && row.get(0) == Some("") {
                continue;
            }
            let expected = if has_split { 3 } else { 2 };
            if row.len() != expected {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: format!("expected {expected} fields, found {}", row.len()),
                });
            }
            let path = row[0].to_string();
            if path.is_empty() {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: "empty path".into(),
                });
            }
            let mos: f64 = row[1].parse().map_err(|_| DatasetError::UnparsableMos(line))?;
            if !mos.is_finite() {
                return Err(DatasetError::UnparsableMos(line));
            }
            let split = if has_split {
                Split::parse(&row[2]).ok_or_else(|| DatasetError::MalformedRow {
                    line,
                    reason: format!("unknown split {:?}", &row[2]),
                })?
            } else {
                Split::Unassigned
            };
            if !seen.insert(path.clone()) {
                return Err(DatasetError::DuplicatePath(path));
            }
            records.push(MosRecord {
                image_path: path,
                mos,
                split,
            });
        }
        Ok(Manifest {
            records,
            source_tag: source_tag.into(),
            base_dir: PathBuf::new(),
        })
    }

    /// CSV text with header `path,mos,split`, LF line endings.
    pub fn to_csv(&self) -> Result<String, DatasetError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["path", "mos", "split"])?;
        for r in &self.records {
            w.write_record([r.image_path.as_str(), &r.mos.to_string(), r.split.as_str()])?;
        }
        let bytes = w.into_inner().map_err(|e| DatasetError::Io {
            path: PathBuf::new(),
            source: e.into_error(),
        })?;
        Ok(String::from_utf8(bytes).expect("manifest csv is utf-8"))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_csv()?).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
