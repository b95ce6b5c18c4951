//! Binary layer serialization (the checkpoint building block).
//!
//! Layout, little-endian: magic `SPW1`, u64 rows, u64 cols, u64 nnz,
//! row_ptr (u64 × rows+1), col_idx (u32 × nnz), values (f32 × nnz).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sparse::SparseWeights;

const MAGIC: &[u8; 4] = b"SPW1";

pub(crate) fn write_u32_le<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64_le<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32_le<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32_le<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64_le<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f32_le<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// Writes one layer. Values are stored as f32 regardless of the working
/// precision.
pub fn write_spw1<T: Real, W: Write>(w: &SparseWeights<T>, out: &mut W) -> Result<()> {
    out.write_all(MAGIC)?;
    write_u64_le(out, w.rows() as u64)?;
    write_u64_le(out, w.cols() as u64)?;
    write_u64_le(out, w.nnz() as u64)?;
    for &p in w.row_ptr() {
        write_u64_le(out, p as u64)?;
    }
    for &c in w.col_idx() {
        write_u32_le(out, c)?;
    }
    for &v in w.values() {
        write_f32_le(out, v.to_f64() as f32)?;
    }
    Ok(())
}

pub fn read_spw1<T: Real, R: Read>(input: &mut R) -> Result<SparseWeights<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { context: "SPW1", reason: format!("bad magic {magic:?}") });
    }
    let rows = read_u64_le(input)? as usize;
    let cols = read_u64_le(input)? as usize;
    let nnz = read_u64_le(input)? as usize;
    let mut row_ptr = Vec::with_capacity(rows + 1);
    for _ in 0..=rows {
        row_ptr.push(read_u64_le(input)? as usize);
    }
    let mut col_idx = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        col_idx.push(read_u32_le(input)?);
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        values.push(T::from_f64(read_f32_le(input)? as f64));
    }
    SparseWeights::from_csr(rows, cols, row_ptr, col_idx, values)
        .map_err(|e| Error::Format { context: "SPW1", reason: e.to_string() })
}
