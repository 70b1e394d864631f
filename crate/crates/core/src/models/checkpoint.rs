//! Model checkpoints: one binary file holding the config record and named
//! parameter blobs.
//!
//! Layout: magic "SLCKPT01" | u32 config length + UTF-8 key=value lines |
//! u32 blob count | blobs | u64 FNV-1a checksum over everything after the
//! magic. Each blob: u32 name length, name bytes, u8 rank, u32 dims,
//! 32-bit LE floats. Round trips are byte-exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::nn::tensor::Tensor;
use crate::util::fnv1a64;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLCKPT01";

/// Write config plus named tensors (model parameters and any extra blobs
/// such as feature-normalization statistics).
pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    blobs: &[(String, Tensor<f32>)],
) -> Result<()> {
    let mut body = Vec::new();
    let cfg = config.to_kv();
    body.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    body.extend_from_slice(cfg.as_bytes());
    body.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (name, tensor) in blobs {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&body);
    let mut bytes = Vec::with_capacity(8 + body.len() + 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&body);
    bytes.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read and validate a checkpoint; corruption yields typed errors.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, HashMap<String, Tensor<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 8 + 8 {
        return Err(Error::format(path, "too short to be a checkpoint"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let body = &bytes[8..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("checksum mismatch: stored {stored:016x}, computed {computed:016x}"),
        ));
    }
    let mut r = Reader { body, pos: 0, path };
    let cfg_len = r.u32()? as usize;
    let cfg_bytes = r.take(cfg_len)?;
    let cfg_text = std::str::from_utf8(cfg_bytes)
        .map_err(|_| Error::format(path, "config record is not UTF-8"))?;
    let config = ModelConfig::from_kv(cfg_text)?;
    let count = r.u32()? as usize;
    let mut blobs = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "blob name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data_bytes = r.take(numel.checked_mul(4).ok_or_else(|| {
            Error::format(path, "blob dimension overflow")
        })?)?;
        let data: Vec<f32> = data_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::format(path, format!("blob '{name}': {e}")))?;
        if blobs.insert(name.clone(), tensor).is_some() {
            return Err(Error::format(path, format!("duplicate blob '{name}'")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after last blob"));
    }
    Ok((config, blobs))
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.body.len() {
            return Err(Error::format(self.path, "truncated checkpoint body"));
        }
        let out = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}
