//! Single-file parameter container.
//!
//! Layout: magic `EDKP`, `u16` format version, `u32` header length, a JSON
//! header, then every tensor as little-endian `f32` in declaration order.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EDKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload truncated")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    meta: &serde_json::Value,
    tensors: &[(&str, &Tensor<T>)],
) -> Result<(), CheckpointError> {
    let header = Header {
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

/// Returns the JSON metadata and the named tensors in stored order.
pub fn read_checkpoint<R: Read>(
    mut r: R,
) -> Result<(serde_json::Value, Vec<(String, Tensor<f32>)>), CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let mut b2 = [0u8; 2];
    read_exact_or_truncated(&mut r, &mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut b4 = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut b4)?;
    let mut json = vec![0u8; u32::from_le_bytes(b4) as usize];
    read_exact_or_truncated(&mut r, &mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact_or_truncated(&mut r, &mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&entry.shape, data).map_err(|_| CheckpointError::Truncated)?;
        out.push((entry.name, t));
    }
    Ok((header.meta, out))
}
