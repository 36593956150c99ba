//! `AFNW` checkpoint container.
//!
//! Layout: magic `AFNW`, little-endian `u32` format version, little-endian
//! `u32` manifest length, the UTF-8 JSON manifest, then every tensor listed in
//! the manifest as little-endian `f32` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"AFNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Free-form metadata, e.g. the network spec that produced the weights.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

pub fn encode<T: Scalar>(meta: &serde_json::Value, tensors: &[(String, &Tensor<T>)]) -> Result<Vec<u8>> {
    let manifest = Manifest {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in tensors {
        t.check_finite(name)?;
        for v in t.data() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "AFNW checkpoint",
        reason: reason.into(),
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(format_err("missing AFNW magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + json_len)
        .ok_or_else(|| format_err("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    let mut offset = 12 + json_len;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes
            .get(offset..offset + 4 * n)
            .ok_or_else(|| format_err(format!("truncated data for {}", entry.name)))?;
        offset += 4 * n;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        tensors.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
    }
    if offset != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        tensors,
    })
}

pub fn save<T: Scalar>(path: &Path, meta: &serde_json::Value, tensors: &[(String, &Tensor<T>)]) -> Result<()> {
    atomic_write(path, &encode(meta, tensors)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&read_bytes(path)?)
}
