//! Binary model checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "CMDAECKP"
//! version        u32      1
//! arch_hash      32 bytes SHA-256 of the canonical architecture JSON
//! latent_dim     u32
//! signal_length  u32
//! arch_json      u32 length + UTF-8 bytes
//! meta_json      u32 length + UTF-8 bytes (run config echo, code hash)
//! block_count    u32
//! per block:     u16 name length, name, u8 rank, rank x u32 dims,
//!                u64 value count, values as f64
//! ```

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{init_model, ArchConfig, ModelError, MultiModalAE};

const MAGIC: &[u8; 8] = b"CMDAECKP";
const VERSION: u32 = 1;

/// Free-form provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub code_hash: String,
    pub config: serde_json::Value,
    pub class_names: Vec<String>,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    model: &MultiModalAE,
    meta: &CheckpointMeta,
    mut w: W,
) -> Result<(), ModelError> {
    let arch = serde_json::to_vec(model.arch()).map_err(|e| err(e.to_string()))?;
    let meta = serde_json::to_vec(meta).map_err(|e| err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&model.arch().hash())?;
    w.write_all(&(model.latent_dim() as u32).to_le_bytes())?;
    w.write_all(&(model.signal_length() as u32).to_le_bytes())?;
    for blob in [&arch, &meta] {
        w.write_all(&(blob.len() as u32).to_le_bytes())?;
        w.write_all(blob)?;
    }
    let params = model.store().params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.shape().len() as u8])?;
        for d in p.shape() {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&(p.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(p.len() * 8);
        for x in p.value() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, ModelError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| err("truncated checkpoint"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(MultiModalAE, CheckpointMeta), ModelError> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != MAGIC {
        return Err(err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let hash = r.bytes(32)?;
    let latent_dim = r.u32()? as usize;
    let signal_length = r.u32()? as usize;
    let arch_len = r.u32()? as usize;
    let arch: ArchConfig =
        serde_json::from_slice(&r.bytes(arch_len)?).map_err(|e| err(format!("architecture: {e}")))?;
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(&r.bytes(meta_len)?).map_err(|e| err(format!("metadata: {e}")))?;
    if arch.hash().as_slice() != hash.as_slice() {
        return Err(err("architecture hash mismatch"));
    }
    if arch.latent_dim != latent_dim || arch.signal_length != signal_length {
        return Err(err("header disagrees with architecture"));
    }
    let mut model = init_model(&arch, 0)?;
    let count = r.u32()? as usize;
    if count != model.store().len() {
        return Err(err(format!(
            "expected {} parameter blocks, found {count}",
            model.store().len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| err("non-UTF-8 block name"))?;
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n = r.u64()? as usize;
        let slot = model
            .store()
            .find(&name)
            .ok_or_else(|| err(format!("unknown block `{name}`")))?;
        if model.store().get(slot).shape() != dims.as_slice() || n != model.store().get(slot).len() {
            return Err(err(format!("block `{name}` has shape {dims:?}")));
        }
        let raw = r.bytes(n * 8)?;
        let values = model.store_mut().value_mut(slot);
        for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        seen[slot] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(err("missing parameter blocks"));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &MultiModalAE, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(model, meta, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(MultiModalAE, CheckpointMeta), ModelError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
