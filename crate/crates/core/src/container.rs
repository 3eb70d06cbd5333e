//! Binary tensor container used for checkpoints and subword tables.
//!
//! Layout:
//!
//! ```text
//! "OMNER1\0"              7 bytes magic
//! header_len              u64 little-endian
//! header                  header_len bytes of UTF-8 JSON
//! data                    little-endian f64 values
//! ```
//!
//! The header carries a format version, a `kind` tag, free-form metadata and
//! a manifest of `{name, shape, offset, len}` entries. Offsets are in bytes
//! from the start of the data section; `len` counts f64 values.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 7] = b"OMNER1\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("expected container kind {expected:?}, found {found:?}")]
    Kind { expected: String, found: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("manifest entry {name:?}: {message}")]
    Entry { name: String, message: String },
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedTensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push(NamedTensor::new(name, shape, data));
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor, ContainerError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f64], ContainerError> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(ContainerError::Entry {
                name: name.to_string(),
                message: format!("expected shape {shape:?}, found {:?}", t.shape),
            });
        }
        Ok(&t.data)
    }

    pub fn check_kind(&self, expected: &str) -> Result<(), ContainerError> {
        if self.kind != expected {
            return Err(ContainerError::Kind {
                expected: expected.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for t in &self.tensors {
            manifest.push(ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len() as u64,
            });
            offset += 8 * t.data.len() as u64;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            manifest,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let header_len = u64::from_le_bytes(len_bytes);
        let header_start = MAGIC.len() + 8;
        let data_start = (header_start as u64)
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| ContainerError::Header("header length exceeds file".into()))?
            as usize;
        let header: Header = serde_json::from_slice(&bytes[header_start..data_start])
            .map_err(|e| ContainerError::Header(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(ContainerError::Version(header.format_version));
        }

        let data = &bytes[data_start..];
        let mut ranges: Vec<(u64, u64, &str)> = Vec::new();
        let mut names = HashSet::new();
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for entry in &header.manifest {
            let fail = |message: String| ContainerError::Entry {
                name: entry.name.clone(),
                message,
            };
            if !names.insert(entry.name.as_str()) {
                return Err(fail("duplicate name".into()));
            }
            let expected: Option<u64> = entry
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if expected != Some(entry.len) {
                return Err(fail(format!(
                    "shape {:?} does not match length {}",
                    entry.shape, entry.len
                )));
            }
            let end = entry
                .len
                .checked_mul(8)
                .and_then(|n| n.checked_add(entry.offset))
                .filter(|&end| end <= data.len() as u64)
                .ok_or_else(|| fail("extends past end of file".into()))?;
            if entry.offset % 8 != 0 {
                return Err(fail("misaligned offset".into()));
            }
            ranges.push((entry.offset, end, entry.name.as_str()));
            let values: Vec<f64> = data[entry.offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(fail(format!("non-finite value at index {pos}")));
            }
            tensors.push(NamedTensor {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                data: values,
            });
        }
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(ContainerError::Entry {
                    name: pair[1].2.to_string(),
                    message: format!("overlaps {:?}", pair[0].2),
                });
            }
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ContainerError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Container::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Container::from_bytes(&fs::read(path)?)
    }
}

/// Whether `path` starts with the container magic bytes.
pub fn is_container(path: impl AsRef<Path>) -> bool {
    let mut buf = [0u8; 7];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map(|_| &buf == MAGIC)
        .unwrap_or(false)
}
