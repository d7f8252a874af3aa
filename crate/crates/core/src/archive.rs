//! `TNSA0001` tensor archives.
//!
//! Layout: 8 magic bytes, a little-endian `u64` header length, a UTF-8 JSON
//! header `{name: {"dtype": "f32", "shape": [..], "offset": o, "length": l}}`,
//! then the payload. Offsets are relative to the payload start and 8-byte
//! aligned; values are little-endian `f32`. A `"__metadata__"` key holding a
//! string-to-string map may appear in the header.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TNSA0001";
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major `rows x cols` matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter().map(|&v| v as f32));
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_row_iterator(r, c, self.data.iter().map(|&v| v as f64))),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn to_vec_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryHeader {
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name == METADATA_KEY {
            return Err(Error::Archive(format!("{METADATA_KEY} is reserved")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Archive(format!("missing entry {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Deterministic encoding: entries in name order, header padded with
    /// spaces so the payload starts on an 8-byte boundary.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        if !self.metadata.is_empty() {
            header.insert(
                METADATA_KEY.into(),
                serde_json::to_value(&self.metadata).expect("string map"),
            );
        }
        let mut offset = 0usize;
        for (name, t) in &self.entries {
            let length = t.data.len() * 4;
            let h = EntryHeader {
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
                length,
            };
            header.insert(name.clone(), serde_json::to_value(h).expect("entry header"));
            offset += length.div_ceil(8) * 8;
        }
        let mut json = serde_json::to_vec(&header).expect("header");
        while !(MAGIC.len() + 8 + json.len()).is_multiple_of(8) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let payload_start = out.len();
        for t in self.entries.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.resize(payload_start + (out.len() - payload_start).div_ceil(8) * 8, 0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Archive("header length exceeds file".into()))?;
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| Error::Archive(format!("header: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut archive = TensorArchive::new();
        let mut spans = Vec::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                archive.metadata =
                    serde_json::from_value(value).map_err(|e| Error::Archive(format!("metadata: {e}")))?;
                continue;
            }
            let h: EntryHeader =
                serde_json::from_value(value).map_err(|e| Error::Archive(format!("entry {name:?}: {e}")))?;
            if h.dtype != "f32" {
                return Err(Error::Archive(format!("entry {name:?}: unsupported dtype {}", h.dtype)));
            }
            let n: usize = h.shape.iter().product();
            if h.length != n * 4 {
                return Err(Error::Archive(format!(
                    "entry {name:?}: length {} != product(shape) * 4 = {}",
                    h.length,
                    n * 4
                )));
            }
            if !h.offset.is_multiple_of(8) {
                return Err(Error::Archive(format!(
                    "entry {name:?}: offset {} not 8-byte aligned",
                    h.offset
                )));
            }
            let end = h.offset + h.length;
            if end > payload.len() {
                return Err(Error::Archive(format!("entry {name:?} runs past end of payload")));
            }
            let data = payload[h.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            spans.push((h.offset, end, name.clone()));
            archive.entries.insert(name, Tensor { shape: h.shape, data });
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Archive(format!("entries {:?} and {:?} overlap", w[0].2, w[1].2)));
            }
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
