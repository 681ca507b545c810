//! Binary model checkpoints.
//!
//! Layout: magic `FSNNCKPT`, `u32` version, `u32` header length, a JSON
//! header (model config and the parameter/buffer layout), every parameter
//! in declaration order as little-endian `f32`, every batch-norm buffer
//! (means then variances), and finally the SHA-256 of all preceding
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::model::{FuseModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"FSNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<(String, Vec<usize>)>,
    buffers: Vec<(String, usize)>,
}

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Checkpoint(msg.into()))
}

pub fn encode(model: &FuseModel<f32>) -> Vec<u8> {
    let header = Header {
        config: model.config().clone(),
        params: model.params.iter().map(|(_, p)| (p.name.clone(), p.value.shape.clone())).collect(),
        buffers: model.buffers.entries.iter().map(|(n, b)| (n.clone(), b.mean.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * (model.params.numel() + model.buffers.numel()) + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |vals: &[f32]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for (_, p) in model.params.iter() {
        put(&p.value.data);
    }
    for (_, b) in &model.buffers.entries {
        put(&b.mean);
        put(&b.var);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8]) -> Result<FuseModel<f32>> {
    if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
        return err("bad magic");
    }
    let (body, footer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != footer {
        return err("checksum mismatch");
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != VERSION {
        return err(format!("unsupported version {version}"));
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let Some(json) = body.get(16..16 + hlen) else {
        return err("truncated header");
    };
    let header: Header = serde_json::from_slice(json).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    let mut model = FuseModel::<f32>::new(header.config)?;
    let layout: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.shape.clone()))
        .collect();
    if layout != header.params {
        return err("parameter layout does not match the configured architecture");
    }
    let buffers: Vec<(String, usize)> = model.buffers.entries.iter().map(|(n, b)| (n.clone(), b.mean.len())).collect();
    if buffers != header.buffers {
        return err("buffer layout does not match the configured architecture");
    }
    let mut payload = body[16 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let expected = model.params.numel() + model.buffers.numel();
    if (body.len() - 16 - hlen) != 4 * expected {
        return err(format!("payload holds {} bytes, expected {}", body.len() - 16 - hlen, 4 * expected));
    }
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in model.params.value_mut(id).data.iter_mut() {
            *v = payload.next().expect("length checked");
        }
    }
    for (_, b) in model.buffers.entries.iter_mut() {
        for v in b.mean.iter_mut().chain(b.var.iter_mut()) {
            *v = payload.next().expect("length checked");
        }
    }
    Ok(model)
}

pub fn save(model: &FuseModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|source| NnError::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<FuseModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    decode(&bytes)
}
