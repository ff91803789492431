//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SIMASSOC"
//! version  u32      currently 1
//! length   u32      byte length of the manifest
//! manifest UTF-8 JSON {"kind", "meta", "tensors": [{"name", "dtype", "shape"}]}
//! buffers  f32 LE   one buffer per manifest entry, in manifest order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

pub const MAGIC: &[u8; 8] = b"SIMASSOC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Named `f32` tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported dtype {0:?} for tensor {1}")]
    Dtype(String, String),
    #[error("{0} trailing bytes after last buffer")]
    Trailing(usize),
    #[error("expected checkpoint kind {expected:?}, found {found:?}")]
    Kind { expected: String, found: String },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("checkpoint does not fit this network: {0}")]
    Meta(String),
    #[error("tensor {name}: {source}")]
    Tensor { name: String, source: TensorError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Kind { expected: kind.into(), found: self.kind.clone() });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| Entry { name: n.clone(), dtype: "f32".into(), shape: t.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated("header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < mlen {
            return Err(CheckpointError::Truncated("manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
        let mut cursor = &body[mlen..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.dtype != "f32" {
                return Err(CheckpointError::Dtype(e.dtype, e.name));
            }
            let n: usize = e.shape.iter().product();
            if cursor.len() < n * 4 {
                return Err(CheckpointError::Truncated("tensor buffer"));
            }
            let data = cursor[..n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            cursor = &cursor[n * 4..];
            let t = Tensor::new(e.shape, data)
                .map_err(|source| CheckpointError::Tensor { name: e.name.clone(), source })?;
            tensors.push((e.name, t));
        }
        if !cursor.is_empty() {
            return Err(CheckpointError::Trailing(cursor.len()));
        }
        Ok(Self { kind: manifest.kind, meta: manifest.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("test", serde_json::json!({"epoch": 3, "f": 128}));
        c.push("a.weight", Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap());
        c.push("a.bias", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        c
    }

    #[test]
    fn byte_exact_round_trip() {
        let bytes = sample().to_bytes();
        let parsed = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, sample());
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated(_))));
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Trailing(1))));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }
}
