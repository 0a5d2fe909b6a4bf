//! `CQWA` binary container for named f32 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "CQWA"
//! version    u16      1
//! count      u32      number of entries
//! entry*     name_len u16, name (UTF-8), rank u8, dims u32 x rank, values f32 x prod(dims)
//! meta_count u32      number of metadata pairs
//! meta*      key_len u16, key (UTF-8), value_len u32, value (UTF-8)
//! crc        u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Metadata pairs are written in key order.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"CQWA";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("not a CQWA archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("archive truncated")]
    TruncatedFile,
    #[error("invalid archive content: {0}")]
    Invalid(String),
    #[error("duplicate entry name {0}")]
    DuplicateName(String),
    #[error("entry {name}: {values} values for shape {shape:?}")]
    ShapeMismatch { name: String, shape: Vec<usize>, values: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl ArchiveEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self, ArchiveError> {
        let name = name.into();
        if shape.iter().product::<usize>() != values.len() {
            return Err(ArchiveError::ShapeMismatch {
                name,
                shape,
                values: values.len(),
            });
        }
        Ok(Self { name, shape, values })
    }
}

/// Ordered named tensors plus free-form string metadata.
#[derive(Clone, Debug, Default)]
pub struct WeightArchive {
    entries: Vec<ArchiveEntry>,
    index: HashMap<String, usize>,
    pub metadata: BTreeMap<String, String>,
}

impl PartialEq for WeightArchive {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.metadata == other.metadata
    }
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ArchiveEntry) -> Result<(), ArchiveError> {
        if self.index.contains_key(&entry.name) {
            return Err(ArchiveError::DuplicateName(entry.name));
        }
        if entry.name.len() > u16::MAX as usize || entry.shape.len() > u8::MAX as usize {
            return Err(ArchiveError::Invalid(format!("entry {} too large to encode", entry.name)));
        }
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<(), ArchiveError> {
        self.push(ArchiveEntry::new(name, shape, values)?)
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArchiveEntry> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.entries.iter().map(|e| 7 + e.name.len() + 4 * (e.shape.len() + e.values.len())).sum();
        let mut out = Vec::with_capacity(16 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 4 {
            return Err(if MAGIC.starts_with(bytes) {
                ArchiveError::TruncatedFile
            } else {
                ArchiveError::BadMagic
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        // Parse the structure first so truncation is told apart from corruption.
        let parsed = parse_body(bytes);
        let body_len = match &parsed {
            Ok((_, consumed)) => *consumed,
            Err(ArchiveError::TruncatedFile) => return Err(ArchiveError::TruncatedFile),
            Err(_) => bytes.len().saturating_sub(4),
        };
        if bytes.len() < body_len + 4 {
            return Err(ArchiveError::TruncatedFile);
        }
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
        if stored != computed || bytes.len() != body_len + 4 {
            return Err(ArchiveError::ChecksumMismatch { stored, computed });
        }
        parsed.map(|(a, _)| a)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ArchiveError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        let bytes = std::fs::read(path).map_err(|source| ArchiveError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let end = self.pos.checked_add(n).ok_or(ArchiveError::TruncatedFile)?;
        // the trailing 4 CRC bytes are never part of the body
        if end + 4 > self.bytes.len() {
            return Err(ArchiveError::TruncatedFile);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String, ArchiveError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ArchiveError::Invalid("non-UTF-8 string".into()))
    }
}

fn parse_body(bytes: &[u8]) -> Result<(WeightArchive, usize), ArchiveError> {
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u16()?;
    if version != VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let mut archive = WeightArchive::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = cur.string(name_len)?;
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(ArchiveError::TruncatedFile)?;
        let raw = cur.take(n)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        archive.push(ArchiveEntry { name, shape, values })?;
    }
    let meta_count = cur.u32()? as usize;
    for _ in 0..meta_count {
        let klen = cur.u16()? as usize;
        let key = cur.string(klen)?;
        let vlen = cur.u32()? as usize;
        let value = cur.string(vlen)?;
        archive.metadata.insert(key, value);
    }
    Ok((archive, cur.pos))
}
