//! The "IVT1" tensor record: ASCII magic `IVT1`, little-endian `u32` rank,
//! `rank` little-endian `u32` extents, then the row-major payload as
//! little-endian `f32`. A rank-2 record therefore has a 16-byte header.

use std::io::{Read, Write};

use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"IVT1";

/// Rank cap so a corrupt header cannot request an absurd allocation.
const MAX_RANK: u32 = 16;

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated record".into())
    } else {
        Error::Format(e.to_string())
    }
}

pub fn write_tensor<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        let v = v.to_f32().unwrap_or(f32::NAN);
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::Format(e.to_string()))
}

/// Read a record header, leaving `r` at the start of the payload.
pub fn read_shape(r: &mut impl Read) -> Result<Vec<usize>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(r).map_err(truncated)?;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u32(r).map_err(truncated)? as usize);
    }
    Ok(shape)
}

pub fn read_tensor<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    let shape = read_shape(r)?;
    let n = numel(&shape);
    let mut bytes = Vec::new();
    r.take(4 * n as u64)
        .read_to_end(&mut bytes)
        .map_err(truncated)?;
    if bytes.len() != 4 * n {
        return Err(Error::Format(format!(
            "truncated payload: expected {} bytes, found {}",
            4 * n,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::of_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(shape, data)
}
