//! Weight file: `u64` little-endian header length, JSON header, then every
//! tensor as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, EncoderParams, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "retrieval-ocr-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    architecture: Architecture,
    architecture_fingerprint: String,
    tensors: Vec<TensorHeader>,
}

pub fn weights_to_bytes(params: &EncoderParams) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        version: WEIGHTS_VERSION,
        architecture: params.architecture().clone(),
        architecture_fingerprint: params.architecture().fingerprint(),
        tensors: params
            .tensors()
            .iter()
            .map(|t| TensorHeader {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * params.num_parameters());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Format("weight file shorter than its length prefix".into()))?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| Error::Format("weight file header is truncated".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("weight header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Format(format!("not a weight file (format '{}')", header.format)));
    }
    if header.version != WEIGHTS_VERSION {
        return Err(Error::IncompatibleModel(format!(
            "weight format version {} (expected {WEIGHTS_VERSION})",
            header.version
        )));
    }
    if header.architecture_fingerprint != header.architecture.fingerprint() {
        return Err(Error::IncompatibleModel(format!(
            "architecture fingerprint {} does not match the declared architecture",
            header.architecture_fingerprint
        )));
    }
    let specs = header.architecture.tensor_specs();
    let declared: Vec<(String, Vec<usize>)> = header
        .tensors
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if declared != specs {
        return Err(Error::IncompatibleModel("tensor list does not match the architecture".into()));
    }
    let mut body = &bytes[8 + len..];
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape) in specs {
        let n: usize = shape.iter().product();
        if body.len() < 4 * n {
            return Err(Error::Format(format!("weight file truncated inside tensor {name}")));
        }
        let data = body[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        body = &body[4 * n..];
        tensors.push(Tensor { name, shape, data });
    }
    if !body.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", body.len())));
    }
    EncoderParams::from_parts(header.architecture, tensors).map_err(|e| match e {
        Error::Shape(m) => Error::Format(m),
        other => other,
    })
}

pub fn save_weights(params: &EncoderParams, path: &Path) -> Result<()> {
    fs::write(path, weights_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes)
}

/// Loads weights and requires a specific architecture.
pub fn load_weights_for(path: &Path, arch: &Architecture) -> Result<EncoderParams> {
    let params = load_weights(path)?;
    if params.architecture() != arch {
        return Err(Error::IncompatibleModel(format!(
            "{} holds architecture {}, expected {}",
            path.display(),
            params.architecture().fingerprint(),
            arch.fingerprint()
        )));
    }
    Ok(params)
}
