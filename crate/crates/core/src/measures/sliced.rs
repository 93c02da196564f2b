use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{wasserstein_1d, EmpiricalMeasure};
use crate::error::{ensure_dim, Error, Result};

fn directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project(m: &EmpiricalMeasure, theta: &[f64]) -> Vec<f64> {
    (0..m.len())
        .map(|i| m.point(i).iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect()
}

fn check(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, n_projections: usize) -> Result<()> {
    ensure_dim("measure dimension", mu.dim(), nu.dim())?;
    ensure_dim("sample count", mu.len(), nu.len())?;
    if n_projections == 0 {
        return Err(Error::InvalidArgument("n_projections must be >= 1".into()));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::InvalidArgument(
            "sliced wasserstein needs uniform weights".into(),
        ));
    }
    Ok(())
}

/// Mean of `W_p^p` over `n_projections` uniformly random unit directions.
pub fn sliced_wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    p: f64,
    seed: u64,
) -> Result<f64> {
    check(mu, nu, n_projections)?;
    let mut total = 0.0;
    for theta in directions(mu.dim(), n_projections, seed) {
        total += wasserstein_1d(&project(mu, &theta), &project(nu, &theta), p)?;
    }
    Ok(total / n_projections as f64)
}

/// Value and gradient with respect to the points of `mu`.
pub fn sliced_wasserstein_with_grad(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    n_projections: usize,
    p: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    check(mu, nu, n_projections)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let (n, d) = (mu.len(), mu.dim());
    let mut grad = vec![0.0; n * d];
    let mut total = 0.0;
    let scale = 1.0 / (n as f64 * n_projections as f64);
    for theta in directions(d, n_projections, seed) {
        let px = project(mu, &theta);
        let mut py = project(nu, &theta);
        py.sort_by(f64::total_cmp);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| px[a].total_cmp(&px[b]));
        for (rank, &i) in order.iter().enumerate() {
            let r = px[i] - py[rank];
            total += r.abs().powf(p);
            let dr = p * r.abs().powf(p - 1.0) * r.signum();
            for k in 0..d {
                grad[i * d + k] += scale * dr * theta[k];
            }
        }
    }
    Ok((total * scale, grad))
}
