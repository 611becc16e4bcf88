//! Checkpoint files: a flat list of named tensors plus a JSON metadata blob.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "HOICKPT\n"
//! version u32      currently 1
//! meta    u64 length + that many bytes of UTF-8 JSON
//! count   u64      number of tensors
//! tensor  repeated: name (u16 length + bytes), dtype u8 (0 = f32, 1 = f64),
//!         ndim u8, dims (u64 each), raw element bytes
//! hash    u64      FNV-1a of everything before it
//! ```
//!
//! Save/load round-trips are bit-exact; the trailing hash catches truncation
//! and corruption.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Params;
use crate::rng::fnv1a;
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"HOICKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint hash mismatch (corrupt or truncated file)")]
    HashMismatch,
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model wants tensor {0} but the checkpoint does not contain it")]
    Missing(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize all parameters of `model` plus a metadata JSON string.
pub fn save_named_tensors<S: Scalar, M: Params<S>>(
    model: &mut M,
    meta_json: &str,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    model.visit("", &mut |name, p| {
        let mut bytes = Vec::with_capacity(p.len() * 4);
        for v in &p.data.data {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        entries.push((name.to_string(), p.data.shape.clone(), bytes));
    });

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta = meta_json.as_bytes();
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, shape, bytes) in &entries {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(0u8); // f32 payload
        buf.push(shape.len() as u8);
        for d in shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        buf.extend_from_slice(bytes);
    }
    let h = fnv1a(&buf);
    buf.extend_from_slice(&h.to_le_bytes());

    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a checkpoint into (metadata JSON, name -> tensor map).
pub fn read_checkpoint(path: &Path) -> Result<(String, BTreeMap<String, Tensor<f64>>), CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut buf)
        .map_err(|e| io_err(path, e))?;
    if buf.len() < 8 + 4 + 8 + 8 || &buf[0..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body_len = buf.len() - 8;
    let stored = u64::from_le_bytes(buf[body_len..].try_into().unwrap());
    if fnv1a(&buf[..body_len]) != stored {
        return Err(CheckpointError::HashMismatch);
    }
    let mut off = 8usize;
    let rd_u32 = |b: &[u8], o: &mut usize| {
        let v = u32::from_le_bytes(b[*o..*o + 4].try_into().unwrap());
        *o += 4;
        v
    };
    let rd_u64 = |b: &[u8], o: &mut usize| {
        let v = u64::from_le_bytes(b[*o..*o + 8].try_into().unwrap());
        *o += 8;
        v
    };
    let version = rd_u32(&buf, &mut off);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let meta_len = rd_u64(&buf, &mut off) as usize;
    let meta = String::from_utf8(buf[off..off + meta_len].to_vec())
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    off += meta_len;
    let count = rd_u64(&buf, &mut off) as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(buf[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        let name = String::from_utf8(buf[off..off + name_len].to_vec())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        off += name_len;
        let dtype = buf[off];
        off += 1;
        if dtype != 0 {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name}: unsupported dtype {dtype}"
            )));
        }
        let ndim = buf[off] as usize;
        off += 1;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(rd_u64(&buf, &mut off) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
            off += 4;
            data.push(v as f64);
        }
        map.insert(name, Tensor::from_vec(&shape, data));
    }
    Ok((meta, map))
}

/// Load tensors into `model`, matching on visited names; every model
/// parameter must be present with the right shape.
pub fn load_named_tensors<S: Scalar, M: Params<S>>(
    model: &mut M,
    path: &Path,
) -> Result<String, CheckpointError> {
    let (meta, map) = read_checkpoint(path)?;
    let mut err: Option<CheckpointError> = None;
    model.visit("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            None => err = Some(CheckpointError::Missing(name.to_string())),
            Some(t) => {
                if t.shape != p.data.shape {
                    err = Some(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        expected: p.data.shape.clone(),
                        found: t.shape.clone(),
                    });
                } else {
                    for (dst, src) in p.data.data.iter_mut().zip(&t.data) {
                        *dst = S::from_f64(*src);
                    }
                }
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(meta),
    }
}
