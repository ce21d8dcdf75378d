//! `CKVT` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "CKVT"
//! version u32      1
//! ndims   u32
//! dims    u64 x ndims
//! payload f32 x prod(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"CKVT";
pub const VERSION: u32 = 1;

/// Shape plus 32-bit payload, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_matrix(m: &Matrix) -> Tensor {
        Tensor {
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: m.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_matrix(self) -> std::result::Result<Matrix, FormatError> {
        if self.dims.len() != 2 {
            return Err(FormatError::Rank {
                expected: 2,
                found: self.dims.len(),
            });
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        let data = self.data.into_iter().map(f64::from).collect();
        Ok(
            Matrix::new(self.dims[0] as usize, self.dims[1] as usize, data)
                .expect("payload length validated against dims"),
        )
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, FormatError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(FormatError::ShortRead {
                needed: n,
                got: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(4)?;
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    need(12)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let ndims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + 8 * ndims;
    need(header)?;
    let dims: Vec<u64> = bytes[12..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let payload = &bytes[header..];
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?));
    if expected != Some(payload.len()) {
        return Err(FormatError::SizeMismatch {
            dims,
            expected: expected.unwrap_or(usize::MAX),
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn save_tensor(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(&Tensor::from_matrix(m))).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor(&bytes)
        .and_then(Tensor::into_matrix)
        .map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })
}
