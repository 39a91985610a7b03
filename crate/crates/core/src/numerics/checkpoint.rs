//! Named-tensor container.
//!
//! Layout: 8-byte magic `ULDTENS\0`, little-endian `u64` manifest length,
//! UTF-8 JSON manifest, then the raw little-endian `f64` payload. Manifest
//! offsets are byte offsets from the start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

pub const CONTAINER_MAGIC: &[u8; 8] = b"ULDTENS\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<ManifestEntry>,
}

pub type NamedTensors<T> = BTreeMap<String, Tensor<T>>;

pub fn encode<T: Scalar>(tensors: &NamedTensors<T>) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset,
        });
        offset += 8 * t.len() as u64;
    }
    let manifest = Manifest {
        format_version: CONTAINER_VERSION,
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors.values() {
        for &v in t.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<NamedTensors<T>> {
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < 16 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(bad("missing tensor container magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format_version != CONTAINER_VERSION {
        return Err(bad(format!(
            "unsupported container version {} (expected {CONTAINER_VERSION})",
            manifest.format_version
        )));
    }
    let payload = &bytes[payload_start..];
    let mut out = BTreeMap::new();
    for e in manifest.tensors {
        if e.dtype != "f64" {
            return Err(bad(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * numel;
        if end > payload.len() {
            return Err(bad(format!("tensor {}: truncated payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| bad(format!("tensor {}: {err}", e.name)))?;
        out.insert(e.name, t);
    }
    Ok(out)
}

pub fn write_container<T: Scalar>(path: &Path, tensors: &NamedTensors<T>) -> Result<()> {
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_container<T: Scalar>(path: &Path) -> Result<NamedTensors<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
