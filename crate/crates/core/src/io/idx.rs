//! IDX files as distributed for MNIST, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Batch;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const UNSIGNED_BYTE: u8 = 0x08;
/// Refuse payloads larger than this many elements.
const MAX_ELEMENTS: usize = 1 << 32;

/// A parsed IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses raw (already decompressed) IDX bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    if magic >> 16 != 0 || (magic >> 8) as u8 != UNSIGNED_BYTE || magic & 0xff == 0 {
        return Err(Error::BadMagic { offset: 0, found: magic });
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * i)? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c <= MAX_ELEMENTS)
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
    let header = 4 + 4 * ndims;
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() < count {
        return Err(Error::Truncated {
            expected: count,
            found: payload.len(),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: payload[..count].to_vec(),
    })
}

/// Reads an IDX file, transparently decompressing gzip.
pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}

/// Images as `(n, [1, rows, cols])` with pixels scaled to `[0, 1]`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Batch> {
    let arr = read_idx(path)?;
    if arr.magic != IMAGES_MAGIC {
        return Err(Error::BadMagic { offset: 0, found: arr.magic });
    }
    let (n, h, w) = (arr.dims[0], arr.dims[1], arr.dims[2]);
    let data = arr.data.iter().map(|&b| b as f64 / 255.0).collect();
    Batch::new(n, vec![1, h, w], data)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let arr = read_idx(path)?;
    if arr.magic != LABELS_MAGIC {
        return Err(Error::BadMagic { offset: 0, found: arr.magic });
    }
    Ok(arr.data)
}

/// Uncompressed IDX bytes for an unsigned-byte array.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    if count != data.len() || dims.is_empty() || dims.len() > 255 {
        return Err(Error::InvalidArgument(format!(
            "{} bytes do not fill dims {dims:?}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&[0, 0, UNSIGNED_BYTE, dims.len() as u8]);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow(format!("{d}")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

pub fn write_idx(path: impl AsRef<Path>, dims: &[usize], data: &[u8]) -> Result<()> {
    fs::write(path, encode_idx(dims, data)?)?;
    Ok(())
}
