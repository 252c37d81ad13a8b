//! Feature file formats consumed by the metrics module.
//!
//! Two matrix carriers are supported:
//!
//! - **CSV**: one sample per line, comma-separated decimal values, no
//!   header. All lines must have the same field count.
//! - **Binary `PLNF`**: a 16-byte header — bytes 0..4 the magic `PLNF`,
//!   bytes 4..8 the row count as little-endian `u32`, bytes 8..12 the
//!   column count, bytes 12..16 reserved (written as zero, ignored on
//!   read) — followed by `rows * cols` little-endian `f32` values in
//!   row-major order.
//!
//! Layer-feature files (`PLNL`) add a per-layer index block: a 16-byte
//! header — magic `PLNL`, little-endian `u32` layer count, 8 reserved
//! bytes — then one 16-byte index entry per layer (`u32` channels, `u32`
//! spatial size, `f32` layer weight, 4 reserved bytes), then each layer's
//! `channels * spatial` little-endian `f32` values, channel-major, in
//! layer order.
//!
//! `load_matrix` sniffs the `PLNF` magic and otherwise parses CSV.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::metrics::{FeatureMap, LayerFeatures, Matrix};

const MATRIX_MAGIC: &[u8; 4] = b"PLNF";
const LAYERS_MAGIC: &[u8; 4] = b"PLNL";

#[derive(Debug, Error)]
pub enum FeatFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed feature file: {0}")]
    Malformed(String),
}

impl FeatFileError {
    pub fn code(&self) -> &'static str {
        match self {
            FeatFileError::Io(_) => "IoError",
            FeatFileError::Malformed(_) => "MalformedFeatureFile",
        }
    }
}

fn malformed(msg: impl Into<String>) -> FeatFileError {
    FeatFileError::Malformed(msg.into())
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|c| m.get(r, c).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix, FeatFileError> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(malformed(format!(
                    "line {}: {} fields, expected {c}",
                    lineno + 1,
                    fields.len()
                )))
            }
            _ => {}
        }
        for f in fields {
            data.push(f.trim().parse::<f64>().map_err(|_| {
                malformed(format!("line {}: bad value {f:?}", lineno + 1))
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| malformed("empty csv"))?;
    Ok(Matrix { rows, cols, data })
}

pub fn matrix_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.data.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for v in &m.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Matrix, FeatFileError> {
    if bytes.len() < 16 {
        return Err(malformed("shorter than the 16-byte header"));
    }
    if &bytes[0..4] != MATRIX_MAGIC {
        return Err(malformed("bad magic, expected PLNF"));
    }
    let rows = read_u32(bytes, 4) as usize;
    let cols = read_u32(bytes, 8) as usize;
    let expected = 16 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "expected {expected} bytes for {rows}x{cols}, found {}",
            bytes.len()
        )));
    }
    let data = (0..rows * cols)
        .map(|i| read_f32(bytes, 16 + 4 * i) as f64)
        .collect();
    Ok(Matrix { rows, cols, data })
}

/// Loads a matrix, sniffing the binary magic and falling back to CSV.
pub fn load_matrix(path: &Path) -> Result<Matrix, FeatFileError> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && &bytes[0..4] == MATRIX_MAGIC {
        matrix_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| malformed("neither PLNF binary nor UTF-8 csv"))?;
        matrix_from_csv(&text)
    }
}

pub fn save_matrix_binary(path: &Path, m: &Matrix) -> Result<(), FeatFileError> {
    fs::write(path, matrix_to_bytes(m))?;
    Ok(())
}

pub fn save_matrix_csv(path: &Path, m: &Matrix) -> Result<(), FeatFileError> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn layers_to_bytes(features: &LayerFeatures) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LAYERS_MAGIC);
    out.extend_from_slice(&(features.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for layer in &features.layers {
        out.extend_from_slice(&(layer.channels as u32).to_le_bytes());
        out.extend_from_slice(&(layer.spatial as u32).to_le_bytes());
        out.extend_from_slice(&(layer.weight as f32).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
    }
    for layer in &features.layers {
        for v in &layer.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn layers_from_bytes(bytes: &[u8]) -> Result<LayerFeatures, FeatFileError> {
    if bytes.len() < 16 {
        return Err(malformed("shorter than the 16-byte header"));
    }
    if &bytes[0..4] != LAYERS_MAGIC {
        return Err(malformed("bad magic, expected PLNL"));
    }
    let layer_count = read_u32(bytes, 4) as usize;
    let index_end = 16 + 16 * layer_count;
    if bytes.len() < index_end {
        return Err(malformed("truncated layer index block"));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    let mut total = 0usize;
    for l in 0..layer_count {
        let at = 16 + 16 * l;
        let channels = read_u32(bytes, at) as usize;
        let spatial = read_u32(bytes, at + 4) as usize;
        let weight = read_f32(bytes, at + 8) as f64;
        shapes.push((channels, spatial, weight));
        total += channels * spatial;
    }
    if bytes.len() != index_end + 4 * total {
        return Err(malformed(format!(
            "expected {} data bytes, found {}",
            4 * total,
            bytes.len() - index_end
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    let mut offset = index_end;
    for (channels, spatial, weight) in shapes {
        let n = channels * spatial;
        let data = (0..n).map(|i| read_f32(bytes, offset + 4 * i) as f64).collect();
        offset += 4 * n;
        let map = FeatureMap::new(weight, channels, spatial, data)
            .map_err(|e| malformed(e.to_string()))?;
        layers.push(map);
    }
    Ok(LayerFeatures { layers })
}

pub fn load_layers(path: &Path) -> Result<LayerFeatures, FeatFileError> {
    let bytes = fs::read(path)?;
    layers_from_bytes(&bytes)
}

pub fn save_layers(path: &Path, features: &LayerFeatures) -> Result<(), FeatFileError> {
    fs::write(path, layers_to_bytes(features))?;
    Ok(())
}
