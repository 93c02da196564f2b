//! Discrepancies between finite point clouds.
//!
//! Every routine here works on [`EmpiricalMeasure`], a weighted point set in
//! `R^d` stored row-major. They double as the latent regularizer of the
//! training loss and as evaluation metrics against analytic references:
//!
//! | routine | what it computes |
//! |---------|------------------|
//! | [`exact_wasserstein`] | `W_p^p` by assignment (uniform, equal size) or LP |
//! | [`wasserstein_1d`] | `W_p^p` on the line by sorting |
//! | [`sinkhorn_divergence`] | debiased entropic OT with squared Euclidean cost |
//! | [`sliced_wasserstein`] | mean 1-D `W_p^p` over random directions |
//! | [`mmd`] | Gaussian-kernel squared MMD |

mod divergence;
mod exact;
mod mmd;
mod sinkhorn;
mod sliced;

pub use divergence::{Divergence, DivergenceOutcome};
pub use exact::{exact_wasserstein, hungarian, wasserstein_1d};
pub use mmd::{median_heuristic, mmd, mmd_biased, mmd_with_grad, MmdOutcome};
pub use sinkhorn::{
    entropic_ot, sinkhorn_divergence, sinkhorn_divergence_with, Epsilon, EntropicOt,
    SinkhornDivergence, SinkhornOptions,
};
pub use sliced::{sliced_wasserstein, sliced_wasserstein_with_grad};

use crate::error::{ensure_dim, Error, Result};

const WEIGHT_TOL: f64 = 1e-9;

/// A finite weighted point set `sum_i w_i delta_{x_i}` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    /// Uniform weights over `points.len() / dim` rows of a row-major buffer.
    pub fn from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("point dimension must be >= 1".into()));
        }
        if points.is_empty() {
            return Err(Error::Empty("empirical measure"));
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "flat point buffer",
                expected: dim * (points.len() / dim + 1),
                got: points.len(),
            });
        }
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
            uniform: true,
        })
    }

    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("empirical measure"))?;
        let dim = first.len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            ensure_dim("point dimension", dim, p.len())?;
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat)
    }

    /// Points on the real line.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::from_flat(1, xs.to_vec())
    }

    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::from_flat(dim, points)?;
        ensure_dim("weights", m.len(), weights.len())?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let n = weights.len() as f64;
        m.uniform = weights.iter().all(|w| (w - 1.0 / n).abs() <= WEIGHT_TOL);
        m.weights = weights;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies `f` to every point, keeping the weights.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut flat = Vec::with_capacity(self.points.len());
        let mut dim = None;
        for i in 0..self.len() {
            let q = f(self.point(i));
            match dim {
                None => dim = Some(q.len()),
                Some(d) => ensure_dim("mapped point dimension", d, q.len())?,
            }
            flat.extend(q);
        }
        let dim = dim.unwrap_or(self.dim);
        let mut out = Self::from_flat(dim, flat)?;
        out.weights = self.weights.clone();
        out.uniform = self.uniform;
        Ok(out)
    }
}

/// Pairwise transport costs `||x_i - y_j||_p^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<Self> {
        ensure_dim("measure dimension", mu.dim(), nu.dim())?;
        if !(p >= 1.0) {
            return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
        }
        let (n, m) = (mu.len(), nu.len());
        let mut entries = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = mu.point(i);
            for j in 0..m {
                entries.push(lp_cost(x, nu.point(j), p));
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            entries,
        })
    }

    /// Squared Euclidean costs, the ground cost of the entropic solver.
    pub fn squared_euclidean(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Self> {
        Self::new(mu, nu, 2.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().sum::<f64>() / self.entries.len() as f64
    }
}

pub(crate) fn lp_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    } else if p == 1.0 {
        x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
    } else {
        x.iter().zip(y).map(|(a, b)| (a - b).abs().powf(p)).sum()
    }
}
