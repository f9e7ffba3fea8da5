//! Model checkpoints.
//!
//! Layout: the 8-byte magic `GDASUMCK`, a little-endian `u32` header length,
//! a JSON header (format version, dtype, dims, hyperparameters, tensor table),
//! then every tensor's values as little-endian floats in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dims, HyperParams, ModelParams};

const MAGIC: &[u8; 8] = b"GDASUMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    /// Lossless for the `f64` parameters used in training.
    #[default]
    F64,
    /// Half the size; rounds every parameter to `f32`.
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: Dtype,
    dims: Dims,
    hyper: HyperParams,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub hyper: HyperParams,
}

pub fn encode_checkpoint(params: &ModelParams, hyper: &HyperParams, dtype: Dtype) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    let header = Header {
        format: "gdasum-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        dtype,
        dims: params.dims(),
        hyper: hyper.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.to_string(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + params.n_scalars() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in tensors {
        for &v in values {
            match dtype {
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if header.format != "gdasum-checkpoint" || header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(format!(
            "{} v{} (this build reads v{CHECKPOINT_VERSION})",
            header.format, header.version
        )));
    }

    let mut params = ModelParams::zeros(header.dims);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n.to_string(), s))
        .collect();
    let found: Vec<(String, Vec<usize>)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if expected != found {
        return Err(Error::CheckpointVersion(
            "tensor table does not match the model layout".into(),
        ));
    }

    let width = header.dtype.width();
    let payload = &bytes[12 + header_len..];
    if payload.len() != params.n_scalars() * width {
        return Err(corrupt(&format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            params.n_scalars() * width
        )));
    }
    let mut chunks = payload.chunks_exact(width);
    for (_, values) in params.tensors_mut() {
        for v in values.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = match header.dtype {
                Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                Dtype::F32 => f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            };
        }
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    Ok(Checkpoint {
        params,
        hyper: header.hyper,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, hyper: &HyperParams) -> Result<()> {
    save_checkpoint_as(path, params, hyper, Dtype::default())
}

pub fn save_checkpoint_as(
    path: &Path,
    params: &ModelParams,
    hyper: &HyperParams,
    dtype: Dtype,
) -> Result<()> {
    let bytes = encode_checkpoint(params, hyper, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it was trained for feature width `feature_dim`.
pub fn load_checkpoint_for(path: &Path, feature_dim: usize) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let dims = ckpt.params.dims();
    if dims.feature != feature_dim {
        return Err(Error::CheckpointVersion(format!(
            "checkpoint expects feature dim {}, data has {feature_dim}",
            dims.feature
        )));
    }
    Ok(ckpt)
}
