//! Checkpoint file format: a little-endian u64 header length, a JSON header
//! (format version, model config, parameter names and shapes), then the
//! parameter data as row-major little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::ParameterSet;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    config: serde_json::Value,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save(path: &Path, params: &ParameterSet, config: serde_json::Value) -> Result<()> {
    let metas: Vec<ParamMeta> = params
        .iter()
        .map(|(name, m)| ParamMeta {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect();
    let header = Header {
        format: "mosa-checkpoint".to_string(),
        format_version: CHECKPOINT_FORMAT_VERSION,
        config,
        params: metas,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, m) in params.iter() {
        for &v in m.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint; returns the parameters and the stored config document.
pub fn load(path: &Path) -> Result<(ParameterSet, serde_json::Value)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::data("checkpoint truncated before header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 64 * 1024 * 1024 {
        return Err(Error::data(format!(
            "unreasonable checkpoint header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::data("checkpoint truncated inside header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::data(format!("bad checkpoint header: {e}")))?;
    if header.format != "mosa-checkpoint" {
        return Err(Error::data(format!(
            "not a checkpoint file (format '{}')",
            header.format
        )));
    }
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }

    let mut params = ParameterSet::new();
    for meta in &header.params {
        let count = meta.rows * meta.cols;
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf).map_err(|_| {
            Error::data(format!("checkpoint truncated inside parameter '{}'", meta.name))
        })?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.insert(&meta.name, Matrix::from_vec(meta.rows, meta.cols, data)?)?;
    }
    Ok((params, header.config))
}
