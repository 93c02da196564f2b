//! Metrics against oracles and data.

use serde::Serialize;

use crate::error::{ensure_dim, Error, Result};
use crate::measures::{exact_wasserstein, sinkhorn_divergence_with, SinkhornOptions};
use crate::model::PairedMaps;
use crate::objective::PriorDraw;
use crate::sampler::{point_estimate, sample_conditional, translate, translate_inverse};
use crate::tasks::{AffineMap, LinearGaussianOracle};
use crate::tensor::Batch;

/// `W2` (not squared) between two equal-size uniform samples.
pub fn w2(a: &Batch, b: &Batch) -> Result<f64> {
    Ok(exact_wasserstein(&a.to_measure()?, &b.to_measure()?, 2.0)?.sqrt())
}

/// For each row of `conditions`, `W2` between `n` model samples of
/// `X1 | X2 = x2` and `n` draws of the analytic posterior.
pub fn w2_to_posterior<M: PairedMaps + ?Sized>(
    maps: &M,
    oracle: &LinearGaussianOracle,
    conditions: &Batch,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..conditions.n())
        .map(|i| {
            let x2 = conditions.single(i)?;
            let s = seed.wrapping_add(2 * i as u64);
            let model = sample_conditional(maps, &x2, n, s)?;
            let truth = oracle.posterior_samples(x2.data(), n, s.wrapping_add(1))?;
            w2(&model, &truth)
        })
        .collect()
}

/// Peak signal-to-noise ratio in dB for values with peak 1.
pub fn psnr(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    ensure_dim("psnr image", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("psnr image"));
    }
    let mse = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(-10.0 * mse.log10())
}

/// Mean over samples of per-sample PSNR.
pub fn mean_psnr(estimate: &Batch, truth: &Batch) -> Result<f64> {
    estimate.same_layout(truth)?;
    let mut total = 0.0;
    for i in 0..truth.n() {
        total += psnr(estimate.sample(i), truth.sample(i))?;
    }
    Ok(total / truth.n() as f64)
}

/// Mean over samples of `mean(|mask * (x2 - mask * x1hat)|)` restricted to
/// the observed elements (`mask > 0`), with `x1hat` the point estimate.
pub fn observed_residual<M: PairedMaps + ?Sized>(maps: &M, x2: &Batch, mask: &[f64]) -> Result<f64> {
    ensure_dim("mask size", x2.sample_len(), mask.len())?;
    let observed = mask.iter().filter(|m| **m > 0.0).count();
    if observed == 0 {
        return Err(Error::InvalidArgument("mask observes nothing".into()));
    }
    let est = point_estimate(maps, x2)?;
    let mut total = 0.0;
    for (e, o) in est.rows().zip(x2.rows()) {
        let r: f64 = e.iter().zip(o).zip(mask).map(|((e, o), m)| (m * (o - m * e)).abs()).sum();
        total += r / observed as f64;
    }
    Ok(total / x2.n() as f64)
}

/// Mean of `S_eps` between two independent prior samples of `n` points in
/// `dim` dimensions, over `trials` seeds.
pub fn same_distribution_floor(dim: usize, n: usize, trials: usize, opts: &SinkhornOptions) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..trials as u64 {
        let split = crate::latent::LatentSplit::new(0, dim, 0)?;
        let a = PriorDraw::sample(split, n, 1000 + 2 * t)?.first()?;
        let b = PriorDraw::sample(split, n, 1001 + 2 * t)?.first()?;
        total += sinkhorn_divergence_with(&a.to_measure()?, &b.to_measure()?, opts, false)?.0.value;
    }
    Ok(total / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentDiagnostics {
    /// `S_eps(E1(x1), (Z1, Z2))`.
    pub div_first: f64,
    /// `S_eps(E2(x2), (Z2, Z3))`.
    pub div_second: f64,
    /// Same-distribution floors at the respective widths.
    pub floor_first: f64,
    pub floor_second: f64,
    /// Mean absolute Pearson correlation between coordinates of different
    /// blocks: `(z1, z2)` of `E1`, `(z2, z3)` of `E2` and `z1` of `E1`
    /// against `z3` of `E2`.
    pub cross_block_correlation: f64,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

fn column(b: &Batch, j: usize) -> Vec<f64> {
    b.rows().map(|r| r[j]).collect()
}

/// Mean absolute correlation over all coordinate pairs of two blocks.
pub fn mean_abs_cross_correlation(a: &Batch, b: &Batch) -> Result<Option<f64>> {
    ensure_dim("correlated sample count", a.n(), b.n())?;
    let (wa, wb) = (a.sample_len(), b.sample_len());
    if wa == 0 || wb == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 0..wa {
        let ci = column(a, i);
        for j in 0..wb {
            total += correlation(&ci, &column(b, j)).abs();
        }
    }
    Ok(Some(total / (wa * wb) as f64))
}

/// Latent matching and independence on `n` paired samples.
pub fn latent_diagnostics<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    x2: &Batch,
    opts: &SinkhornOptions,
    seed: u64,
) -> Result<LatentDiagnostics> {
    let split = maps.split();
    let n = x1.n();
    let prior = PriorDraw::sample(split, n, seed)?;
    let c1 = maps.encode1(x1)?;
    let c2 = maps.encode2(x2)?;
    let div = |c: &Batch, r: Batch| -> Result<f64> {
        Ok(sinkhorn_divergence_with(&c.to_measure()?, &r.to_measure()?, opts, false)?.0.value)
    };
    let (z1, z2a) = maps.encode1_blocks(x1)?;
    let (z2b, z3) = maps.encode2_blocks(x2)?;
    let pairs = [
        mean_abs_cross_correlation(&z1, &z2a)?,
        mean_abs_cross_correlation(&z2b, &z3)?,
        mean_abs_cross_correlation(&z1, &z3)?,
    ];
    let present: Vec<f64> = pairs.iter().flatten().copied().collect();
    let cross = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(LatentDiagnostics {
        div_first: div(&c1, prior.first()?)?,
        div_second: div(&c2, prior.second()?)?,
        floor_first: same_distribution_floor(split.first_width(), n, 10, opts)?,
        floor_second: same_distribution_floor(split.second_width(), n, 10, opts)?,
        cross_block_correlation: cross,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationMetrics {
    /// `E|x1 - T(x1)|^2` of the learned map.
    pub transport_cost: f64,
    /// Closed-form `W2^2` between the two Gaussians.
    pub oracle_cost: f64,
    /// `|transport_cost / oracle_cost - 1|`.
    pub cost_relative_error: f64,
    /// Angle in degrees between the mean displacements of the learned map
    /// and the oracle map.
    pub mean_direction_error_deg: f64,
    /// Mean over points of the angle between the two displacements.
    pub pointwise_direction_error_deg: f64,
    /// `E|T^-1(T(x1)) - D1(E1(x1))|`.
    pub cycle_error: f64,
    /// `E|x1|`.
    pub mean_norm: f64,
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn translation_metrics<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    oracle: &AffineMap,
    oracle_cost: f64,
) -> Result<TranslationMetrics> {
    let t = translate(maps, x1)?;
    let t_star = oracle.apply_batch(x1)?;
    x1.same_layout(&t)?;
    let n = x1.n() as f64;
    let d = x1.sample_len();
    let mut cost = 0.0;
    let mut mean_disp = vec![0.0; d];
    let mut mean_disp_star = vec![0.0; d];
    let mut pointwise = 0.0;
    let mut norm = 0.0;
    for i in 0..x1.n() {
        let (x, y, ys) = (x1.sample(i), t.sample(i), t_star.sample(i));
        let disp: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let disp_star: Vec<f64> = ys.iter().zip(x).map(|(a, b)| a - b).collect();
        cost += disp.iter().map(|v| v * v).sum::<f64>();
        for k in 0..d {
            mean_disp[k] += disp[k] / n;
            mean_disp_star[k] += disp_star[k] / n;
        }
        pointwise += angle_deg(&disp, &disp_star);
        norm += x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    cost /= n;
    let back = translate_inverse(maps, &t)?;
    let recon = maps.decode1(&maps.encode1(x1)?)?;
    let cycle = back
        .rows()
        .zip(recon.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    Ok(TranslationMetrics {
        transport_cost: cost,
        oracle_cost,
        cost_relative_error: (cost / oracle_cost - 1.0).abs(),
        mean_direction_error_deg: angle_deg(&mean_disp, &mean_disp_star),
        pointwise_direction_error_deg: pointwise / n,
        cycle_error: cycle,
        mean_norm: norm / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_error() {
        let truth = vec![0.0; 4];
        let est = vec![0.1; 4];
        assert!((psnr(&est, &truth).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&[], &[]).is_err());
    }

    #[test]
    fn correlation_extremes() {
        let a = Batch::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let b = Batch::from_rows(&[vec![-2.0], vec![-4.0], vec![-6.0]]).unwrap();
        assert!((mean_abs_cross_correlation(&a, &b).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let empty = a.columns(0..0).unwrap();
        assert_eq!(mean_abs_cross_correlation(&a, &empty).unwrap(), None);
    }

    #[test]
    fn angles() {
        assert!((angle_deg(&[1.0, 0.0], &[0.0, 2.0]) - 90.0).abs() < 1e-12);
        assert!(angle_deg(&[1.0, 1.0], &[2.0, 2.0]) < 1e-5);
    }
}
