//! Checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SMLM"            magic
//! version           currently 1
//! hidden_size, num_layers, num_heads, ffn_multiplier, slot_count
//! tensor_count
//! tensor_count × { name_len, name (UTF-8), rank, dims[rank], f32 LE data }
//! ```
//!
//! Tensors are stored in the canonical parameter order.

use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, Weights};
use crate::io::write_atomic;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"SMLM";
pub const VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ModelError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            ))),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<(), ModelError> {
        if self.take(4)? != magic {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        Ok(())
    }

    pub(crate) fn tensor(&mut self) -> Result<(String, Tensor<f32>), ModelError> {
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&dims, data)
            .map_err(|e| ModelError::Checkpoint(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }

    pub(crate) fn finish(&self) -> Result<(), ModelError> {
        if self.pos != self.bytes.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_config(out: &mut Vec<u8>, c: &ModelConfig) {
    for v in [c.hidden_size, c.num_layers, c.num_heads, c.ffn_multiplier, c.slot_count] {
        put_u32(out, v as u32);
    }
}

pub(crate) fn read_config(r: &mut Reader<'_>) -> Result<ModelConfig, ModelError> {
    let c = ModelConfig {
        hidden_size: r.u32()? as usize,
        num_layers: r.u32()? as usize,
        num_heads: r.u32()? as usize,
        ffn_multiplier: r.u32()? as usize,
        slot_count: r.u32()? as usize,
    };
    c.validate().map_err(ModelError::Checkpoint)?;
    Ok(c)
}

/// Reads a canonical-order tensor table and checks names and shapes.
pub(crate) fn read_weights(
    r: &mut Reader<'_>,
    config: ModelConfig,
) -> Result<ModelParams<f32>, ModelError> {
    let count = r.u32()? as usize;
    let shapes = ModelParams::<f32>::shapes(&config);
    if count != shapes.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {count}",
            shapes.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    let params = Weights::<()>::from_sequence(config, tensors.iter().map(|(_, t)| t.clone()).collect())
        .ok_or_else(|| ModelError::Checkpoint("tensor table layout".into()))?;
    for (((name, t), expected_name), shape) in tensors.iter().zip(params.names()).zip(&shapes) {
        if *name != expected_name || t.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} {:?} does not match {expected_name} {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(params)
}

pub(crate) fn put_weights(out: &mut Vec<u8>, params: &ModelParams<f32>) {
    let tensors = params.iter();
    put_u32(out, tensors.len() as u32);
    for (name, t) in params.names().iter().zip(tensors) {
        put_tensor(out, name, t);
    }
}

pub fn encode_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_config(&mut out, &params.config);
    put_weights(&mut out, params);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>, ModelError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let params = read_weights(&mut r, config)?;
    r.finish()?;
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f32>) -> Result<(), ModelError> {
    write_atomic(path, &encode_checkpoint(params)).map_err(|e| ModelError::Io(e.to_string()))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams<f32>, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
