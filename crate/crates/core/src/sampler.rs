//! Conditional sampling by resampling the private latent block.
//!
//! For `X1 | X2 = x2` the shared block `z2 = E2(x2)_z2` is computed once and
//! `D1(z1, z2)` is evaluated for prior draws of `z1`; the reverse direction
//! resamples `z3` instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Violation};
use crate::latent::{perturbation_code, standard_normal};
use crate::model::PairedMaps;
use crate::tensor::Batch;

pub const DEFAULT_SIGMAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Largest output change below which the private block counts as dead.
pub const DEAD_BLOCK_THRESHOLD: f64 = 1e-6;

fn single(x: &Batch) -> Result<()> {
    if x.n() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected one conditioning sample, got {}",
            x.n()
        )));
    }
    Ok(())
}

/// `n` rows of `n * dim` prior draws; row `i` only depends on `(seed, i)`,
/// so a longer run extends a shorter one.
fn prior_block(n: usize, dim: usize, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::new(n, vec![dim], standard_normal(&mut rng, n, dim))
}

/// `D1(0, E2(x2)_z2)` for every row of `x2`.
pub fn point_estimate<M: PairedMaps + ?Sized>(maps: &M, x2: &Batch) -> Result<Batch> {
    let z1 = Batch::zeros(x2.n(), vec![maps.split().d1]);
    maps.cross_reconstruct_x1(&z1, x2)
}

/// `n` draws of `D1(Z1, z2)` for a single conditioning sample.
pub fn sample_conditional<M: PairedMaps + ?Sized>(maps: &M, x2: &Batch, n: usize, seed: u64) -> Result<Batch> {
    single(x2)?;
    let (z2, _) = maps.encode2_blocks(x2)?;
    let z1 = prior_block(n, maps.split().d1, seed)?;
    maps.decode1_blocks(&z1, &z2.repeat_first(n)?)
}

/// `n` draws of `D2(z2, Z3)` with `z2 = E1(x1)_z2`.
pub fn sample_conditional_reverse<M: PairedMaps + ?Sized>(maps: &M, x1: &Batch, n: usize, seed: u64) -> Result<Batch> {
    single(x1)?;
    let (_, z2) = maps.encode1_blocks(x1)?;
    let z3 = prior_block(n, maps.split().d3, seed)?;
    maps.decode2_blocks(&z2.repeat_first(n)?, &z3)
}

/// `D1(sigma * e_axis, z2)` for each sigma, one image per entry.
pub fn perturbed_estimates<M: PairedMaps + ?Sized>(
    maps: &M,
    x2: &Batch,
    sigmas: &[f64],
    axis_index: usize,
) -> Result<Vec<Batch>> {
    single(x2)?;
    let split = maps.split();
    let (z2, _) = maps.encode2_blocks(x2)?;
    let mut codes = Vec::with_capacity(sigmas.len() * split.d1);
    for &s in sigmas {
        codes.extend(perturbation_code(&split, s, axis_index)?);
    }
    let z1 = Batch::new(sigmas.len(), vec![split.d1], codes)?;
    let out = maps.decode1_blocks(&z1, &z2.repeat_first(sigmas.len())?)?;
    (0..sigmas.len()).map(|i| out.single(i)).collect()
}

/// Per-element Monte-Carlo mean and standard deviation (with `n - 1`
/// normalization) of `n` conditional samples.
pub fn conditional_moments<M: PairedMaps + ?Sized>(
    maps: &M,
    x2: &Batch,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidArgument("conditional_moments needs n >= 2".into()));
    }
    let samples = sample_conditional(maps, x2, n, seed)?;
    Ok(moments(&samples))
}

/// Moments are accumulated relative to the first sample so that identical
/// samples give exactly zero spread.
pub fn moments(samples: &Batch) -> (Vec<f64>, Vec<f64>) {
    let len = samples.sample_len();
    let n = samples.n() as f64;
    let base = samples.sample(0).to_vec();
    let mut shift = vec![0.0; len];
    for row in samples.rows() {
        for ((m, v), b) in shift.iter_mut().zip(row).zip(&base) {
            *m += v - b;
        }
    }
    shift.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for row in samples.rows() {
        for (((s, v), m), b) in var.iter_mut().zip(row).zip(&shift).zip(&base) {
            *s += (v - b - m).powi(2);
        }
    }
    let mean = base.iter().zip(&shift).map(|(b, m)| b + m).collect();
    let std = var.into_iter().map(|s| (s / (n - 1.0).max(1.0)).sqrt()).collect();
    (mean, std)
}

fn translation_only<M: PairedMaps + ?Sized>(maps: &M) -> Result<()> {
    let s = maps.split();
    if !s.is_translation() {
        return Err(Error::Config(vec![Violation::new(
            "model.split",
            format!("translation maps need a split of the form (0, d2, 0), got {s}"),
        )]));
    }
    Ok(())
}

/// `T(x1) = D2(E1(x1))`.
pub fn translate<M: PairedMaps + ?Sized>(maps: &M, x1: &Batch) -> Result<Batch> {
    translation_only(maps)?;
    maps.decode2(&maps.encode1(x1)?)
}

/// `T^-1(x2) = D1(E2(x2))`.
pub fn translate_inverse<M: PairedMaps + ?Sized>(maps: &M, x2: &Batch) -> Result<Batch> {
    translation_only(maps)?;
    maps.decode1(&maps.encode2(x2)?)
}

/// Largest output change over all axes of `Z1` and all `sigmas` relative
/// to the point estimate. Values below [`DEAD_BLOCK_THRESHOLD`] mean the
/// decoder ignores `z1`.
pub fn private_block_sensitivity<M: PairedMaps + ?Sized>(maps: &M, x2: &Batch, sigmas: &[f64]) -> Result<f64> {
    let base = point_estimate(maps, x2)?;
    let mut worst: f64 = 0.0;
    for axis in 0..maps.split().d1 {
        for img in perturbed_estimates(maps, x2, sigmas, axis)? {
            for (a, b) in img.data().iter().zip(base.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentSplit;
    use crate::model::{ArchitectureSpec, PairedModel};

    fn model(split: LatentSplit) -> PairedModel {
        PairedModel::new(ArchitectureSpec::dense(2, 2, vec![6]), split, 2).unwrap()
    }

    fn x() -> Batch {
        Batch::from_rows(&[vec![0.3, -0.7]]).unwrap()
    }

    #[test]
    fn zero_perturbation_is_point_estimate() {
        let m = model(LatentSplit::new(2, 1, 1).unwrap());
        let p = perturbed_estimates(&m, &x(), &DEFAULT_SIGMAS, 1).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p[2], point_estimate(&m, &x()).unwrap());
        assert!(perturbed_estimates(&m, &x(), &DEFAULT_SIGMAS, 2).is_err());
    }

    #[test]
    fn prefix_property_and_determinism() {
        let m = model(LatentSplit::new(2, 1, 1).unwrap());
        let a = sample_conditional(&m, &x(), 3, 9).unwrap();
        let b = sample_conditional(&m, &x(), 7, 9).unwrap();
        assert_eq!(a.data(), &b.data()[..a.data().len()]);
        assert_eq!(a, sample_conditional(&m, &x(), 3, 9).unwrap());
        let r = sample_conditional_reverse(&m, &x(), 4, 1).unwrap();
        assert_eq!(r.n(), 4);
    }

    #[test]
    fn empty_private_block_is_deterministic() {
        let m = model(LatentSplit::shared_only(2).unwrap());
        let s = sample_conditional(&m, &x(), 5, 0).unwrap();
        assert!(s.rows().all(|r| r == s.sample(0)));
        let (_, std) = conditional_moments(&m, &x(), 5, 0).unwrap();
        assert!(std.iter().all(|v| *v == 0.0));
        assert_eq!(private_block_sensitivity(&m, &x(), &DEFAULT_SIGMAS).unwrap(), 0.0);
        assert_eq!(translate(&m, &x()).unwrap(), m.decode2(&m.encode1(&x()).unwrap()).unwrap());
    }

    #[test]
    fn translation_requires_shared_only_split() {
        let m = model(LatentSplit::new(1, 1, 1).unwrap());
        assert_eq!(translate(&m, &x()).unwrap_err().kind(), "config");
        assert!(conditional_moments(&m, &x(), 1, 0).is_err());
    }
}
