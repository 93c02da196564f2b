//! The split latent space `Z = Z1 x Z2 x Z3` with a standard normal prior.
//!
//! Serialized codes always use the block order `(z1, z2, z3)`. Encoder 1
//! emits `(z1, z2)`, encoder 2 emits `(z2, z3)`; `z2` is the shared block.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentSplit {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl LatentSplit {
    pub fn new(d1: usize, d2: usize, d3: usize) -> Result<Self> {
        let s = Self { d1, d2, d3 };
        s.validate()?;
        Ok(s)
    }

    /// Only the shared block, as used for translation.
    pub fn shared_only(d2: usize) -> Result<Self> {
        Self::new(0, d2, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::InvalidArgument("latent split has no dimensions".into()));
        }
        if self.d1 + self.d2 == 0 || self.d2 + self.d3 == 0 {
            return Err(Error::InvalidArgument(format!(
                "split {self} leaves an encoder without outputs"
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.d1 + self.d2 + self.d3
    }

    pub fn is_translation(&self) -> bool {
        self.d1 == 0 && self.d3 == 0
    }

    pub fn z1_range(&self) -> Range<usize> {
        0..self.d1
    }

    pub fn z2_range(&self) -> Range<usize> {
        self.d1..self.d1 + self.d2
    }

    pub fn z3_range(&self) -> Range<usize> {
        self.d1 + self.d2..self.total()
    }

    /// Width of `E1`'s output `(z1, z2)`.
    pub fn first_width(&self) -> usize {
        self.d1 + self.d2
    }

    /// Width of `E2`'s output `(z2, z3)`.
    pub fn second_width(&self) -> usize {
        self.d2 + self.d3
    }

    /// Splits a concatenated `(z1, z2, z3)` vector.
    pub fn split(&self, flat: &[f64]) -> Result<LatentCode> {
        ensure_dim("latent code", self.total(), flat.len())?;
        Ok(LatentCode {
            z1: flat[self.z1_range()].to_vec(),
            z2: flat[self.z2_range()].to_vec(),
            z3: flat[self.z3_range()].to_vec(),
        })
    }
}

impl std::fmt::Display for LatentSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.d1, self.d2, self.d3)
    }
}

/// A concrete point of the latent space, partitioned into blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

impl LatentCode {
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.z1.len() + self.z2.len() + self.z3.len());
        out.extend_from_slice(&self.z1);
        out.extend_from_slice(&self.z2);
        out.extend_from_slice(&self.z3);
        out
    }

    pub fn matches(&self, split: &LatentSplit) -> bool {
        self.z1.len() == split.d1 && self.z2.len() == split.d2 && self.z3.len() == split.d3
    }
}

/// `rows * dim` i.i.d. standard normal values drawn from `rng`.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, dim: usize) -> Vec<f64> {
    (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` i.i.d. draws from `N(0, I)` on the full latent space.
pub fn sample_prior(split: &LatentSplit, n: usize, seed: u64) -> Result<Vec<LatentCode>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = standard_normal(&mut rng, n, split.total());
    flat.chunks(split.total().max(1))
        .map(|row| split.split(row))
        .collect()
}

/// `sigma * e_axis` in `Z1`.
pub fn perturbation_code(split: &LatentSplit, sigma: f64, axis_index: usize) -> Result<Vec<f64>> {
    if axis_index >= split.d1 {
        return Err(Error::IndexOutOfRange {
            index: axis_index,
            len: split.d1,
        });
    }
    let mut v = vec![0.0; split.d1];
    v[axis_index] = sigma;
    Ok(v)
}

/// A seeded uniformly random axis of `Z1`.
pub fn random_axis(split: &LatentSplit, seed: u64) -> Result<usize> {
    if split.d1 == 0 {
        return Err(Error::IndexOutOfRange { index: 0, len: 0 });
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).gen_range(0..split.d1))
}
