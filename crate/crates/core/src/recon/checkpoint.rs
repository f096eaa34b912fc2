//! Single-file model checkpoints.
//!
//! Layout: magic `FBUNET`, u16 version, u32 header length, JSON header
//! (config, seed, training corpus ids, tensor names and lengths), then
//! every tensor as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Reconstructor, UNet, UNetConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"FBUNET";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    seed: u64,
    #[serde(default)]
    trained_on: Vec<String>,
    tensors: Vec<(String, usize)>,
}

pub fn checkpoint_bytes(model: &Reconstructor) -> Vec<u8> {
    let tensors = model.net.tensors();
    let header = Header {
        config: model.net.cfg,
        seed: model.seed,
        trained_on: model.trained_on.clone(),
        tensors: tensors.iter().map(|(n, t)| (n.clone(), t.len())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Reconstructor> {
    let bad = |d: String| Error::format("checkpoint", d);
    if bytes.len() < 12 || &bytes[..6] != MAGIC {
        return Err(bad("missing FBUNET magic at offset 0".into()));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    let mut net = UNet::<f32>::new(header.config, header.seed)?;
    let mut offset = 12 + hlen;
    let names: Vec<(String, usize)> = net.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    if names != header.tensors {
        return Err(bad("tensor list does not match the configured topology".into()));
    }
    for t in net.tensors_mut() {
        let n = t.len() * 4;
        let raw = bytes
            .get(offset..offset + n)
            .ok_or_else(|| bad(format!("truncated tensor data at offset {offset}")))?;
        for (v, c) in t.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        offset += n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(Reconstructor {
        net,
        seed: header.seed,
        trained_on: header.trained_on,
    })
}

pub fn save_checkpoint(model: &Reconstructor, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Reconstructor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
