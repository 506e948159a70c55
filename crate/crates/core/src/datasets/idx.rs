//! IDX tensors (the MNIST distribution format).
//!
//! Layout: magic `00 00 <type> <ndims>`, then `ndims` big-endian `u32`
//! dimension sizes, then the row-major payload. Only unsigned bytes
//! (`type = 0x08`) are supported.

use std::path::Path;

use super::{read_maybe_gzip, DatasetError};

const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Number of items along the first axis.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, TYPE_U8, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, DatasetError> {
    if bytes.len() < 4 {
        return Err(DatasetError::IdxLength {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 || bytes[3] == 0 {
        return Err(DatasetError::BadMagic(magic));
    }
    if bytes[2] != TYPE_U8 {
        return Err(DatasetError::UnsupportedIdxType(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(DatasetError::IdxLength {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    if bytes.len() - header != payload {
        return Err(DatasetError::IdxLength {
            expected: header + payload,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Reads an IDX file, gzip-compressed or not.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor, DatasetError> {
    parse_idx(&read_maybe_gzip(path.as_ref())?)
}
