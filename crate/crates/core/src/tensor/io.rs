//! `.ten` binary tensor files.
//!
//! Layout: `b"VTEN"`, `u32` version, `u32` order, `u32` extents, then the
//! entries as little-endian `f64` in row-major order.

use std::path::Path;

use super::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TEN_MAGIC: &[u8; 4] = b"VTEN";
pub const TEN_VERSION: u32 = 1;

pub fn ten_bytes<T: Scalar>(x: &DenseTensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * x.order() + 8 * x.len());
    out.extend_from_slice(TEN_MAGIC);
    out.extend_from_slice(&TEN_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.order() as u32).to_le_bytes());
    for &d in x.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in x.data() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("truncated .ten payload".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn take_u32(buf: &mut &[u8]) -> Result<u32> {
    let b = take(buf, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_ten_bytes<T: Scalar>(bytes: &[u8]) -> Result<DenseTensor<T>> {
    let mut buf = bytes;
    if take(&mut buf, 4)? != TEN_MAGIC {
        return Err(Error::Format("bad .ten magic".into()));
    }
    let version = take_u32(&mut buf)?;
    if version != TEN_VERSION {
        return Err(Error::Format(format!("unsupported .ten version {version}")));
    }
    let order = take_u32(&mut buf)? as usize;
    let dims = (0..order)
        .map(|_| take_u32(&mut buf).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len: usize = dims.iter().product();
    if buf.len() != 8 * len {
        return Err(Error::Format(format!(
            ".ten dims {dims:?} need {} payload bytes, found {}",
            8 * len,
            buf.len()
        )));
    }
    let data = buf
        .chunks_exact(8)
        .map(|c| {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            T::from_f64(v).ok_or_else(|| Error::Format(format!("value {v} not representable")))
        })
        .collect::<Result<Vec<T>>>()?;
    DenseTensor::new(dims, data)
}

pub fn write_ten<T: Scalar>(path: impl AsRef<Path>, x: &DenseTensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ten_bytes(x)).map_err(|e| Error::io(path, e))
}

pub fn read_ten<T: Scalar>(path: impl AsRef<Path>) -> Result<DenseTensor<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ten_bytes(&bytes)
}
