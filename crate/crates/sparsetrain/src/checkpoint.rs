//! Self-describing checkpoint container.
//!
//! Layout, little-endian: magic `SNET`, u32 format version, u64 config
//! length + the serialized run config text, u32 layer count, then per
//! layer an `SPW1` block followed by u64 bias length and f32 bias values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::SparseNetwork;
use crate::real::Real;
use crate::sparse::{read_f32_le, read_spw1, read_u32_le, read_u64_le, write_f32_le, write_spw1, write_u32_le, write_u64_le};

const MAGIC: &[u8; 4] = b"SNET";
const VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    network: &SparseNetwork<T>,
    config_text: &str,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    write_u32_le(&mut out, VERSION)?;
    write_u64_le(&mut out, config_text.len() as u64)?;
    out.write_all(config_text.as_bytes())?;
    write_u32_le(&mut out, network.layers().len() as u32)?;
    for (layer, bias) in network.layers().iter().zip(network.biases()) {
        write_spw1(layer, &mut out)?;
        write_u64_le(&mut out, bias.len() as u64)?;
        for &b in bias {
            write_f32_le(&mut out, b.to_f64() as f32)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub config: RunConfig,
    /// The exact config text stored in the file; re-saving writes it
    /// verbatim so save → load → save is byte-identical.
    pub config_text: String,
    pub network: SparseNetwork<f32>,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format { context: "SNET", reason: format!("bad magic {magic:?}") });
    }
    let version = read_u32_le(&mut input)?;
    if version != VERSION {
        return Err(Error::Format { context: "SNET", reason: format!("unsupported version {version}") });
    }
    let config_len = read_u64_le(&mut input)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    input.read_exact(&mut config_bytes)?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| Error::Format { context: "SNET", reason: "config blob is not UTF-8".into() })?;
    let config = RunConfig::from_ini_str(&config_text)?;
    let layer_count = read_u32_le(&mut input)? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    let mut biases = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer = read_spw1::<f32, _>(&mut input)?;
        let bias_len = read_u64_le(&mut input)? as usize;
        if bias_len != layer.cols() {
            return Err(Error::Format {
                context: "SNET",
                reason: format!("bias length {bias_len} != layer cols {}", layer.cols()),
            });
        }
        let mut bias = Vec::with_capacity(bias_len);
        for _ in 0..bias_len {
            bias.push(read_f32_le(&mut input)?);
        }
        layers.push(layer);
        biases.push(bias);
    }
    let network = SparseNetwork::from_parts(config.network_config()?, layers, biases)?;
    Ok(Checkpoint { config, config_text, network })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let config = RunConfig::default();
        let net = SparseNetwork::<f32>::init(config.network_config().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.snet");
        let b = dir.path().join("b.snet");
        save_checkpoint(&a, &net, &config.to_ini_string()).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        save_checkpoint(&b, &loaded.network, &loaded.config_text).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.network.total_nnz(), net.total_nnz());
    }

    #[test]
    fn corrupt_magic_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snet");
        std::fs::write(&path, b"XXXX123").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let config = RunConfig::default();
        let net = SparseNetwork::<f32>::init(config.network_config().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.snet");
        save_checkpoint(&path, &net, &config.to_ini_string()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
