//! Dense f64 arrays with a small JSON header, used for sample outputs.
//!
//! ```text
//! b"PWAEARR1" | u64 len | header JSON | product(shape) x f64 (LE)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::idx;
use crate::tensor::Batch;

pub const MAGIC: &[u8; 8] = b"PWAEARR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub header: ArrayHeader,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, config_hash: &str, seed: u64) -> Result<Self> {
        let len: usize = shape.iter().product();
        crate::error::ensure_dim("array size", len, data.len())?;
        Ok(Self {
            header: ArrayHeader {
                dtype: "f64le".into(),
                shape,
                config_hash: config_hash.into(),
                seed,
            },
            data,
        })
    }

    /// A batch stored with shape `(n, sample shape...)`.
    pub fn from_batch(b: &Batch, config_hash: &str, seed: u64) -> Result<Self> {
        let mut shape = vec![b.n()];
        shape.extend_from_slice(b.shape());
        Self::new(shape, b.data().to_vec(), config_hash, seed)
    }

    /// The leading axis becomes the batch axis.
    pub fn to_batch(&self) -> Result<Batch> {
        let (n, rest) = self.header.shape.split_first().ok_or(Error::Empty("array shape"))?;
        Batch::new(*n, rest.to_vec(), self.data.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            let found = bytes.get(..4).map_or(0, |b| u32::from_be_bytes(b.try_into().unwrap()));
            return Err(Error::BadMagic { offset: 0, found });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(Error::Truncated {
            expected: 16usize.saturating_add(len),
            found: bytes.len(),
        })?;
        let header: ArrayHeader =
            serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Corrupt(format!("array header: {e}")))?;
        if header.dtype != "f64le" {
            return Err(Error::Corrupt(format!("unsupported dtype `{}`", header.dtype)));
        }
        let count = header
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::DimensionOverflow(format!("{:?}", header.shape)))?;
        let payload = &bytes[body..];
        if payload.len() != count {
            return Err(Error::Truncated { expected: count, found: payload.len() });
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { header, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Reads conditioning inputs from a sample array, an IDX image file
/// (optionally gzipped) or a text file with one comma- or
/// whitespace-separated vector per line.
pub fn load_conditions(path: impl AsRef<Path>) -> Result<Batch> {
    let bytes = fs::read(&path)?;
    if bytes.starts_with(MAGIC) {
        return Array::decode(&bytes)?.to_batch();
    }
    if bytes.starts_with(&[0x1f, 0x8b]) || bytes.starts_with(&[0, 0, 0x08]) {
        return idx::load_idx(path);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Corrupt("conditions are neither binary nor text".into()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| Error::Corrupt(format!("not a number: `{s}`"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    Batch::from_rows(&rows)
}
