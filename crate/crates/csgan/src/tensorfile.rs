//! Flat named-tensor archives.
//!
//! One file holds a JSON manifest followed by a raw little-endian payload:
//!
//! ```text
//! [u64 LE: manifest length] [manifest JSON] [payload scalars, LE, C-order]
//! ```
//!
//! The manifest lists tensor names and shapes in payload order. Round-trips
//! are bit-exact; the same layout is used for `params.f32` network
//! checkpoints and `bank.f64` spatial-filter banks.

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("dtype mismatch: file holds {found}, expected {expected}")]
    Dtype { found: String, expected: String },
    #[error("payload length {found} does not match manifest total {expected}")]
    Payload { found: usize, expected: usize },
    #[error("tensor {0} not found in archive")]
    Missing(String),
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Scalar types the archive can hold.
pub trait Element: Copy + Default {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn write_le(self, buf: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
    const SIZE: usize = 8;
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

/// Write named tensors to `path` in manifest order.
pub fn write<E: Element, P: AsRef<Path>>(
    path: P,
    tensors: &[(String, ArrayViewD<'_, E>)],
) -> Result<(), TensorFileError> {
    let manifest = Manifest {
        dtype: E::DTYPE.to_string(),
        tensors: tensors
            .iter()
            .map(|(name, view)| TensorEntry {
                name: name.clone(),
                shape: view.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&manifest)?;

    let mut payload = Vec::new();
    for (_, view) in tensors {
        for &v in view.iter() {
            v.write_le(&mut payload);
        }
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

/// Read every tensor from `path`, in manifest order.
pub fn read<E: Element, P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(String, ArrayD<E>)>, TensorFileError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;

    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let manifest: Manifest = serde_json::from_slice(&header)?;
    if manifest.dtype != E::DTYPE {
        return Err(TensorFileError::Dtype {
            found: manifest.dtype,
            expected: E::DTYPE.to_string(),
        });
    }

    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let total: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * E::SIZE {
        return Err(TensorFileError::Payload {
            found: payload.len(),
            expected: total * E::SIZE,
        });
    }

    let mut out = Vec::with_capacity(manifest.tensors.len());
    let mut offset = 0usize;
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data: Vec<E> = (0..n)
            .map(|i| E::read_le(&payload[offset + i * E::SIZE..offset + (i + 1) * E::SIZE]))
            .collect();
        offset += n * E::SIZE;
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("shape matches data");
        out.push((entry.name, arr));
    }
    Ok(out)
}

/// Pull one tensor out of an archive read.
pub fn take<E: Element>(
    tensors: &mut Vec<(String, ArrayD<E>)>,
    name: &str,
) -> Result<ArrayD<E>, TensorFileError> {
    let idx = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| TensorFileError::Missing(name.to_string()))?;
    Ok(tensors.swap_remove(idx).1)
}
