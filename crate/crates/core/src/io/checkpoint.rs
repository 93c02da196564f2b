//! Single-file checkpoint archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PWAECKPT" | u32 version | u64 len | manifest JSON (len bytes)
//! u64 n_params  | n_params  x f64
//! u64 n_buffers | n_buffers x f64
//! 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::LatentSplit;
use crate::model::{ArchitectureSpec, PairedMaps, PairedModel};

pub const MAGIC: &[u8; 8] = b"PWAECKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub architecture: ArchitectureSpec,
    pub split: LatentSplit,
    /// `denoising`, `inpainting` or `translation`.
    pub task: String,
    pub config_hash: String,
    pub seed: u64,
    /// Optimization steps taken; zero means untrained.
    pub steps: usize,
    pub n_params: usize,
    pub n_buffers: usize,
    /// Canonical config text the run was started from.
    pub config: String,
}

/// Run information stored next to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStamp {
    pub task: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub config: String,
}

impl Manifest {
    pub fn describe(model: &PairedModel, stamp: &RunStamp) -> Self {
        Self {
            architecture: model.architecture().clone(),
            split: model.split(),
            task: stamp.task.clone(),
            config_hash: stamp.config_hash.clone(),
            seed: stamp.seed,
            steps: stamp.steps,
            n_params: model.theta().len(),
            n_buffers: model.buffers().len(),
            config: stamp.config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub theta: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl Checkpoint {
    /// Rebuilds the model described by the manifest.
    pub fn into_model(self) -> Result<PairedModel> {
        let mut model = PairedModel::uninitialized(self.manifest.architecture, self.manifest.split)?;
        model.set_state(self.theta, self.buffers)?;
        Ok(model)
    }
}

fn push_floats(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(manifest: &Manifest, theta: &[f64], buffers: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * (theta.len() + buffers.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_floats(&mut out, theta);
    push_floats(&mut out, buffers);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, expected: usize, field: &'static str) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::ManifestMismatch {
                field,
                expected: expected.to_string(),
                found: n.to_string(),
            });
        }
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::DimensionOverflow(field.into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn mismatch<T: Serialize>(field: &'static str, expected: &T, found: &T) -> Error {
    let show = |v: &T| serde_json::to_string(v).unwrap_or_default();
    Error::ManifestMismatch {
        field,
        expected: show(expected),
        found: show(found),
    }
}

/// Parses an archive. When `expect` is given, the manifest's architecture
/// and split must equal it; this is checked before anything else so an
/// edited manifest is reported as such rather than as a bad digest.
pub fn decode_checkpoint(bytes: &[u8], expect: Option<(&ArchitectureSpec, LatentSplit)>) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(8)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            found: u32::from_be_bytes(magic[..4].try_into().unwrap()),
        });
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u64()? as usize;
    let manifest: Manifest =
        serde_json::from_slice(c.take(len)?).map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
    if let Some((arch, split)) = expect {
        if manifest.split != split {
            return Err(mismatch("split", &split, &manifest.split));
        }
        if &manifest.architecture != arch {
            return Err(mismatch("architecture", arch, &manifest.architecture));
        }
    }
    let shape = PairedModel::uninitialized(manifest.architecture.clone(), manifest.split)?;
    if shape.theta().len() != manifest.n_params {
        return Err(mismatch("n_params", &shape.theta().len(), &manifest.n_params));
    }
    if shape.buffers().len() != manifest.n_buffers {
        return Err(mismatch("n_buffers", &shape.buffers().len(), &manifest.n_buffers));
    }
    let theta = c.floats(manifest.n_params, "n_params")?;
    let buffers = c.floats(manifest.n_buffers, "n_buffers")?;
    let body_end = c.pos;
    let digest = c.take(DIGEST_LEN)?;
    if c.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(Error::Corrupt("checksum does not match contents".into()));
    }
    Ok(Checkpoint { manifest, theta, buffers })
}

pub fn save_checkpoint(model: &PairedModel, stamp: &RunStamp, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(&Manifest::describe(model, stamp), model.theta(), model.buffers())?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint whose manifest describes its own model.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, None)
}

/// Loads weights into `model`, which must have the archived architecture
/// and split.
pub fn load_checkpoint(model: &mut PairedModel, path: impl AsRef<Path>) -> Result<Manifest> {
    let arch = model.architecture().clone();
    let ckpt = decode_checkpoint(&fs::read(path)?, Some((&arch, model.split())))?;
    model.set_state(ckpt.theta, ckpt.buffers)?;
    Ok(ckpt.manifest)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
