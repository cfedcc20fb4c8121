//! The `TNSR` raw tensor format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TNSR"            4 bytes magic
//! version           u32 (currently 1)
//! rank              u32
//! extents           rank × u64
//! payload           numel × f64 (IEEE-754, LE), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const TNSR_VERSION: u32 = 1;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "TNSR block",
        detail: detail.into(),
    }
}

pub fn write_tnsr<W: Write>(tensor: &Tensor, mut w: W) -> Result<()> {
    w.write_all(TNSR_MAGIC)?;
    w.write_all(&TNSR_VERSION.to_le_bytes())?;
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(tensor.numel() * 8);
    for v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_tnsr<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TNSR_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != TNSR_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank == 0 || rank > 16 {
        return Err(format_err(format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = read_u64(&mut r)?;
        dims.push(usize::try_from(d).map_err(|_| format_err("extent overflows usize"))?);
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("element count overflows"))?;
    let mut payload = vec![0u8; numel * 8];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(dims, data)
}

impl Tensor {
    pub fn to_tnsr_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * self.rank() + 8 * self.numel());
        write_tnsr(self, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_tnsr_bytes(bytes: &[u8]) -> Result<Tensor> {
        read_tnsr(bytes)
    }

    pub fn save_tnsr(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tnsr_bytes())?;
        Ok(())
    }

    pub fn load_tnsr(path: impl AsRef<Path>) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        Tensor::from_tnsr_bytes(&bytes)
    }
}
