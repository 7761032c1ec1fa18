//! Shared helpers for on-disk artifacts: JSON metadata next to raw
//! little-endian float32 blocks.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn f32_bytes<'a>(blocks: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Vec<u8> {
    let mut out = Vec::new();
    for block in blocks {
        for v in block.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Splits a float32 blob into consecutive `rows x cols` blocks.
pub fn read_f32_blocks(path: &Path, shapes: &[(usize, usize)]) -> Result<Vec<Array2<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} float32 values, found {} bytes",
            path.display(),
            total,
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut out = Vec::with_capacity(shapes.len());
    for &(r, c) in shapes {
        let data: Vec<f64> = values.by_ref().take(r * c).collect();
        out.push(Array2::from_shape_vec((r, c), data).expect("block size checked"));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
