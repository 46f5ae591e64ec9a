use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"NGF1";

/// Encodes `t` as `NGF1`, u32 rank, u32 dims, then little-endian f32 values.
/// Dimensions are written as the full `(B, C, H, W)` shape.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dims = t.shape().0;
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_tensor`]. Ranks below four are right-aligned, so a
/// `(C, H, W)` file loads as `(1, C, H, W)`.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |detail: String| Error::Malformed {
        what: "tensor file",
        path: path.into(),
        detail,
    };
    if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing NGF1 header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let rank = word(4);
    if rank == 0 || rank > 4 {
        return Err(bad(format!("unsupported rank {rank}")));
    }
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let mut dims = [1usize; 4];
    for i in 0..rank {
        dims[4 - rank + i] = word(8 + 4 * i);
    }
    let shape = Shape(dims);
    let payload = &bytes[header..];
    if payload.len() != 4 * shape.numel() {
        return Err(bad(format!(
            "expected {} values for shape {:?}, found {} bytes",
            shape.numel(),
            dims,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.into()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
