//! Binary dataset container.
//!
//! Layout, little-endian: magic `SDS1`, u64 N, u64 d, u32 C, features
//! (f32, row-major), labels (u32).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::RawData;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::{read_u32_le, read_u64_le, write_f32_le, write_u32_le, write_u64_le};

const MAGIC: &[u8; 4] = b"SDS1";

pub fn write_sds1(path: impl AsRef<Path>, data: &RawData) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    write_u64_le(&mut out, data.features.rows() as u64)?;
    write_u64_le(&mut out, data.features.cols() as u64)?;
    write_u32_le(&mut out, data.class_count as u32)?;
    for &v in data.features.as_slice() {
        write_f32_le(&mut out, v as f32)?;
    }
    for &y in &data.labels {
        write_u32_le(&mut out, y)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sds1(path: impl AsRef<Path>) -> Result<RawData> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { context: "SDS1", reason: format!("bad magic {magic:?}") });
    }
    let n = read_u64_le(&mut input)? as usize;
    let d = read_u64_le(&mut input)? as usize;
    let c = read_u32_le(&mut input)? as usize;
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        features.push(crate::sparse::read_f32_le(&mut input)? as f64);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = read_u32_le(&mut input)?;
        if y as usize >= c {
            return Err(Error::Format { context: "SDS1", reason: format!("label {y} out of range [0, {c})") });
        }
        labels.push(y);
    }
    Ok(RawData {
        features: DenseMatrix::from_vec(n, d, features),
        labels,
        class_count: c,
        label_names: (0..c).map(|i| i.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let raw = RawData {
            features: DenseMatrix::from_rows(&[vec![1.0, 2.5], vec![-3.0, 0.0]]),
            labels: vec![1, 0],
            class_count: 2,
            label_names: vec!["0".into(), "1".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sds");
        write_sds1(&path, &raw).unwrap();
        let back = read_sds1(&path).unwrap();
        assert_eq!(back.features.as_slice(), raw.features.as_slice());
        assert_eq!(back.labels, raw.labels);
        assert_eq!(back.class_count, 2);
        // byte-identical on rewrite
        let path2 = dir.path().join("t2.sds");
        write_sds1(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
