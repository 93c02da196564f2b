//! Forward models, synthetic datasets and closed-form oracles.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result, Violation};
use crate::latent::standard_normal;
use crate::objective::Fidelity;
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Denoising,
    Inpainting,
    Translation,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Denoising => "denoising",
            TaskKind::Inpainting => "inpainting",
            TaskKind::Translation => "translation",
        }
    }
}

/// Inpainting masks over a `(channels, height, width)` or vector sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum MaskSpec {
    /// Zeros on columns `0..width/2`, ones elsewhere.
    LeftHalf,
    Ones,
    Explicit(Vec<f64>),
}

impl MaskSpec {
    pub fn build(&self, shape: &[usize]) -> Result<Vec<f64>> {
        let len: usize = shape.iter().product();
        match self {
            MaskSpec::Ones => Ok(vec![1.0; len]),
            MaskSpec::LeftHalf => {
                let width = *shape.last().ok_or(Error::Empty("mask shape"))?;
                Ok((0..len).map(|i| if i % width < width / 2 { 0.0 } else { 1.0 }).collect())
            }
            MaskSpec::Explicit(v) => {
                ensure_dim("mask size", len, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

/// Where the training and test samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    /// IDX files in `dir`; the first `train`/`test` images are used.
    Mnist { dir: String, train: usize, test: usize },
    /// `X1 ~ N(0, prior_std^2 I)`, `X2 = X1 + noise`, in `dim` dimensions.
    LinearGaussian { dim: usize, prior_std: f64, train: usize, test: usize },
    /// Unpaired samples of two Gaussians.
    GaussianPair(GaussianPairSpec),
    /// Unpaired MNIST digits: `X1` from classes `labels1`, `X2` from
    /// `labels2`.
    MnistClasses { dir: String, labels1: Vec<u8>, labels2: Vec<u8>, train: usize, test: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Standard deviation of the additive Gaussian observation noise.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    pub dataset: DatasetSource,
}

impl TaskSpec {
    /// MNIST with `X2 = X1 + N(0, I)`.
    pub fn mnist_denoising(dir: &str) -> Self {
        Self {
            kind: TaskKind::Denoising,
            noise_std: 1.0,
            mask: None,
            dataset: DatasetSource::Mnist { dir: dir.into(), train: 60000, test: 10000 },
        }
    }

    /// MNIST with the left half removed and `N(0, 0.1^2 I)` noise.
    pub fn mnist_inpainting(dir: &str) -> Self {
        Self {
            kind: TaskKind::Inpainting,
            noise_std: 0.1,
            mask: Some(MaskSpec::LeftHalf),
            dataset: DatasetSource::Mnist { dir: dir.into(), train: 60000, test: 10000 },
        }
    }

    /// Two-dimensional `X1 ~ N(0, I)`, `X2 = X1 + N(0, 0.5^2 I)`.
    pub fn linear_gaussian() -> Self {
        Self {
            kind: TaskKind::Denoising,
            noise_std: 0.5,
            mask: None,
            dataset: DatasetSource::LinearGaussian { dim: 2, prior_std: 1.0, train: 4096, test: 10 },
        }
    }

    pub fn gaussian_translation() -> Self {
        Self {
            kind: TaskKind::Translation,
            noise_std: 0.0,
            mask: None,
            dataset: DatasetSource::GaussianPair(GaussianPairSpec::default()),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let noisy = self.kind != TaskKind::Translation;
        if noisy && !(self.noise_std > 0.0) {
            v.push(Violation::new("task.noise_std", "must be > 0 for denoising and inpainting"));
        }
        if !noisy && matches!(self.dataset, DatasetSource::Mnist { .. } | DatasetSource::LinearGaussian { .. }) {
            v.push(Violation::new("task.dataset", "translation needs an unpaired dataset"));
        }
        if noisy && matches!(self.dataset, DatasetSource::MnistClasses { .. }) {
            v.push(Violation::new("task.dataset", "mnist_classes is only for translation"));
        }
        if noisy && matches!(self.dataset, DatasetSource::GaussianPair(_)) {
            v.push(Violation::new("task.dataset", "gaussian_pair is only for translation"));
        }
        if let Some(MaskSpec::Explicit(m)) = &self.mask {
            if m.iter().any(|x| !(0.0..=1.0).contains(x)) {
                v.push(Violation::new("task.mask", "entries must lie in [0, 1]"));
            }
        }
        if self.kind == TaskKind::Inpainting && self.mask.is_none() {
            v.push(Violation::new("task.mask", "inpainting needs a mask"));
        }
        v
    }

    pub fn fidelity(&self, sample_shape: &[usize]) -> Result<Fidelity> {
        Ok(match self.kind {
            TaskKind::Denoising => Fidelity::Denoising,
            TaskKind::Translation => Fidelity::Translation,
            TaskKind::Inpainting => Fidelity::Inpainting {
                mask: self.mask.as_ref().unwrap_or(&MaskSpec::LeftHalf).build(sample_shape)?,
            },
        })
    }

    /// The observation model `x1 -> x2`.
    pub fn observe(&self, x1: &Batch, seed: u64) -> Result<Batch> {
        match self.kind {
            TaskKind::Denoising => make_denoising_pair(x1, self.noise_std, seed),
            TaskKind::Inpainting => {
                let mask = self.mask.as_ref().unwrap_or(&MaskSpec::LeftHalf).build(x1.shape())?;
                make_inpainting_pair(x1, &mask, self.noise_std, seed)
            }
            TaskKind::Translation => Err(Error::InvalidArgument("translation has no observation model".into())),
        }
    }
}

fn add_noise(x: &mut Batch, noise_std: f64, seed: u64) {
    if noise_std == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = standard_normal(&mut rng, 1, x.data().len());
    for (v, e) in x.data_mut().iter_mut().zip(noise) {
        *v += noise_std * e;
    }
}

/// `x2 = x1 + N(0, noise_std^2)` per element, unclipped.
pub fn make_denoising_pair(x1: &Batch, noise_std: f64, seed: u64) -> Result<Batch> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let mut x2 = x1.clone();
    add_noise(&mut x2, noise_std, seed);
    Ok(x2)
}

/// `x2 = mask * x1 + N(0, noise_std^2)` per element.
pub fn make_inpainting_pair(x1: &Batch, mask: &[f64], noise_std: f64, seed: u64) -> Result<Batch> {
    ensure_dim("mask size", x1.sample_len(), mask.len())?;
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let mut x2 = x1.clone();
    let len = mask.len();
    for (k, v) in x2.data_mut().iter_mut().enumerate() {
        *v *= mask[k % len];
    }
    add_noise(&mut x2, noise_std, seed);
    Ok(x2)
}

/// Symmetric square root and inverse square root via the eigendecomposition.
fn sym_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();
    Ok((sqrt, inv))
}

fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    Ok(chol.inverse())
}

fn check_square(m: &DMatrix<f64>, dim: usize, what: &'static str) -> Result<()> {
    ensure_dim(what, dim, m.nrows())?;
    ensure_dim(what, dim, m.ncols())
}

/// `n` draws of `N(mean, cov)` as rows.
pub fn sample_gaussian(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Batch> {
    let d = mean.len();
    check_square(cov, d, "covariance")?;
    let l = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite("covariance"))?.unpack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normal(&mut rng, n, d);
    let mut data = Vec::with_capacity(n * d);
    for row in z.chunks(d.max(1)).take(n) {
        let x = mean + &l * DVector::from_column_slice(row);
        data.extend(x.iter());
    }
    Batch::new(n, vec![d], data)
}

/// `X1 ~ N(m0, S0)`, `X2 = A X1 + e`, `e ~ N(0, Se)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianOracle {
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub forward: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    /// `S_post A^T Se^-1`, the gain applied to `x2`.
    gain: DMatrix<f64>,
    /// `S_post S0^-1 m0`.
    offset: DVector<f64>,
}

impl LinearGaussianOracle {
    pub fn new(
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
        forward: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d1 = prior_mean.len();
        let d2 = forward.nrows();
        check_square(&prior_cov, d1, "prior covariance")?;
        ensure_dim("forward matrix columns", d1, forward.ncols())?;
        check_square(&noise_cov, d2, "noise covariance")?;
        let p0 = spd_inverse(&prior_cov, "prior covariance")?;
        let pe = spd_inverse(&noise_cov, "noise covariance")?;
        let precision = &p0 + forward.transpose() * &pe * &forward;
        let posterior_cov = spd_inverse(&precision, "posterior precision")?;
        let posterior_cov = (&posterior_cov + posterior_cov.transpose()) * 0.5;
        let gain = &posterior_cov * forward.transpose() * &pe;
        let offset = &posterior_cov * &p0 * &prior_mean;
        Ok(Self { prior_mean, prior_cov, forward, noise_cov, posterior_cov, gain, offset })
    }

    /// Identity forward map with isotropic prior and noise.
    pub fn isotropic(dim: usize, prior_std: f64, noise_std: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(dim),
            DMatrix::identity(dim, dim) * prior_std.powi(2),
            DMatrix::identity(dim, dim),
            DMatrix::identity(dim, dim) * noise_std.powi(2),
        )
    }

    pub fn x1_dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn x2_dim(&self) -> usize {
        self.forward.nrows()
    }

    /// Posterior mean and covariance of `X1 | X2 = x2`.
    pub fn posterior(&self, x2: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        ensure_dim("observation", self.x2_dim(), x2.len())?;
        let mean = &self.offset + &self.gain * DVector::from_column_slice(x2);
        Ok((mean, self.posterior_cov.clone()))
    }

    pub fn posterior_samples(&self, x2: &[f64], n: usize, seed: u64) -> Result<Batch> {
        let (m, s) = self.posterior(x2)?;
        sample_gaussian(&m, &s, n, seed)
    }

    /// `n` joint draws `(x1, x2)`.
    pub fn sample_pairs(&self, n: usize, seed: u64) -> Result<(Batch, Batch)> {
        let x1 = sample_gaussian(&self.prior_mean, &self.prior_cov, n, seed)?;
        let zero = DVector::zeros(self.x2_dim());
        let e = sample_gaussian(&zero, &self.noise_cov, n, seed.wrapping_add(0x5eed))?;
        let mut data = Vec::with_capacity(n * self.x2_dim());
        for (a, b) in x1.rows().zip(e.rows()) {
            let y = &self.forward * DVector::from_column_slice(a) + DVector::from_column_slice(b);
            data.extend(y.iter());
        }
        Ok((x1, Batch::new(n, vec![self.x2_dim()], data)?))
    }
}

/// Free-function form of [`LinearGaussianOracle::posterior`].
pub fn linear_gaussian_posterior(oracle: &LinearGaussianOracle, x2: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    oracle.posterior(x2)
}

/// `x -> T x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("affine map input", self.matrix.ncols(), x.len())?;
        Ok((&self.matrix * DVector::from_column_slice(x) + &self.offset).iter().copied().collect())
    }

    pub fn apply_batch(&self, x: &Batch) -> Result<Batch> {
        let mut data = Vec::with_capacity(x.n() * self.matrix.nrows());
        for row in x.rows() {
            data.extend(self.apply(row)?);
        }
        Batch::new(x.n(), vec![self.matrix.nrows()], data)
    }

    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            matrix: &self.matrix * &inner.matrix,
            offset: &self.matrix * &inner.offset + &self.offset,
        }
    }
}

/// The optimal transport map from `N(m1, s1)` to `N(m2, s2)` under squared
/// Euclidean cost.
pub fn gaussian_monge_map(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<AffineMap> {
    let d = m1.len();
    ensure_dim("mean dimension", d, m2.len())?;
    check_square(s1, d, "first covariance")?;
    check_square(s2, d, "second covariance")?;
    let (r1, r1_inv) = sym_sqrt(s1, "first covariance")?;
    sym_sqrt(s2, "second covariance")?;
    let (mid, _) = sym_sqrt(&(&r1 * s2 * &r1), "covariance product")?;
    let t = &r1_inv * mid * &r1_inv;
    let t = (&t + t.transpose()) * 0.5;
    let offset = m2 - &t * m1;
    Ok(AffineMap { matrix: t, offset })
}

/// `W2^2(N(m1, s1), N(m2, s2)) = |m1 - m2|^2 + tr(s1 + s2 - 2 (s2^1/2 s1 s2^1/2)^1/2)`.
pub fn gaussian_w2_squared(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    let d = m1.len();
    ensure_dim("mean dimension", d, m2.len())?;
    check_square(s1, d, "first covariance")?;
    check_square(s2, d, "second covariance")?;
    let (r2, _) = sym_sqrt(s2, "second covariance")?;
    sym_sqrt(s1, "first covariance")?;
    let (cross, _) = sym_sqrt(&(&r2 * s1 * &r2), "covariance product")?;
    Ok((m1 - m2).norm_squared() + (s1 + s2 - cross * 2.0).trace())
}

/// Two Gaussians given by means and covariance matrices (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPairSpec {
    pub mean1: Vec<f64>,
    pub cov1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub cov2: Vec<f64>,
    pub train: usize,
    pub test: usize,
}

impl Default for GaussianPairSpec {
    fn default() -> Self {
        Self {
            mean1: vec![0.0, 0.0],
            cov1: vec![1.0, 0.0, 0.0, 0.25],
            mean2: vec![2.0, 1.0],
            cov2: vec![0.5, 0.3, 0.3, 1.0],
            train: 4096,
            test: 1024,
        }
    }
}

impl GaussianPairSpec {
    pub fn dim(&self) -> usize {
        self.mean1.len()
    }

    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        ensure_dim("second mean", d, self.mean2.len())?;
        ensure_dim("first covariance", d * d, self.cov1.len())?;
        ensure_dim("second covariance", d * d, self.cov2.len())?;
        Ok((
            DVector::from_column_slice(&self.mean1),
            DMatrix::from_row_slice(d, d, &self.cov1),
            DVector::from_column_slice(&self.mean2),
            DMatrix::from_row_slice(d, d, &self.cov2),
        ))
    }

    pub fn monge_map(&self) -> Result<AffineMap> {
        let (m1, s1, m2, s2) = self.moments()?;
        gaussian_monge_map(&m1, &s1, &m2, &s2)
    }

    pub fn w2_squared(&self) -> Result<f64> {
        let (m1, s1, m2, s2) = self.moments()?;
        gaussian_w2_squared(&m1, &s1, &m2, &s2)
    }
}

/// Unpaired samples `(x1 ~ mu1, x2 ~ mu2)` of `n` points each, each set
/// shuffled independently.
pub fn make_translation_datasets(spec: &GaussianPairSpec, n: usize, seed: u64) -> Result<(Batch, Batch)> {
    let (m1, s1, m2, s2) = spec.moments()?;
    let a = sample_gaussian(&m1, &s1, n, seed)?;
    let b = sample_gaussian(&m2, &s2, n, seed.wrapping_add(0x7a11))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1e995);
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    ia.shuffle(&mut rng);
    ib.shuffle(&mut rng);
    Ok((a.select(&ia)?, b.select(&ib)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denoising_pair_noise_level() {
        let x1 = Batch::new(100, vec![100], vec![0.5; 10_000]).unwrap();
        assert_eq!(make_denoising_pair(&x1, 0.0, 1).unwrap(), x1);
        let x2 = make_denoising_pair(&x1, 1.0, 1).unwrap();
        let diffs: Vec<f64> = x2.data().iter().zip(x1.data()).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 1.0).abs() < 0.03, "{std}");
        assert_eq!(x2, make_denoising_pair(&x1, 1.0, 1).unwrap());
    }

    #[test]
    fn left_half_mask() {
        let m = MaskSpec::LeftHalf.build(&[1, 28, 28]).unwrap();
        for r in 0..28 {
            for c in 0..28 {
                assert_eq!(m[r * 28 + c], if c < 14 { 0.0 } else { 1.0 });
            }
        }
        let x1 = Batch::new(1, vec![1, 28, 28], vec![1.0; 784]).unwrap();
        let x2 = make_inpainting_pair(&x1, &m, 0.0, 0).unwrap();
        assert_eq!(x2.data().iter().sum::<f64>(), 392.0);
        let ones = MaskSpec::Ones.build(&[1, 28, 28]).unwrap();
        assert_eq!(make_inpainting_pair(&x1, &ones, 0.0, 0).unwrap(), x1);
    }

    #[test]
    fn posterior_hand_example() {
        let o = LinearGaussianOracle::isotropic(2, 1.0, 1.0).unwrap();
        let (m, s) = o.posterior(&[2.0, 0.0]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12 && m[1].abs() < 1e-12);
        assert!((s[(0, 0)] - 0.5).abs() < 1e-12 && s[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn posterior_limits() {
        let loud = LinearGaussianOracle::isotropic(2, 1.0, 1e3).unwrap();
        let (m, s) = loud.posterior(&[3.0, -1.0]).unwrap();
        assert!(m.norm() < 1e-3 * 4.0 && (s[(0, 0)] - 1.0).abs() < 1e-3);
        let quiet = LinearGaussianOracle::isotropic(2, 1.0, 1e-4).unwrap();
        let (m, _) = quiet.posterior(&[3.0, -1.0]).unwrap();
        assert!((m[0] - 3.0).abs() < 1e-6 && (m[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn monge_map_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let four = DMatrix::from_element(1, 1, 4.0);
        let t = gaussian_monge_map(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 3.0), &four).unwrap();
        assert!((t.matrix[(0, 0)] - 2.0).abs() < 1e-12 && (t.offset[0] - 3.0).abs() < 1e-12);
        let spec = GaussianPairSpec::default();
        let (m1, s1, _, _) = spec.moments().unwrap();
        let id = gaussian_monge_map(&m1, &s1, &m1, &s1).unwrap();
        assert!((id.matrix - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn singular_covariances_are_rejected() {
        let z = DMatrix::zeros(2, 2);
        let m = DVector::zeros(2);
        assert!(matches!(
            gaussian_monge_map(&m, &z, &m, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(LinearGaussianOracle::isotropic(2, 0.0, 1.0).is_err());
    }

    #[test]
    fn invalid_specs_report_every_violation() {
        let mut t = TaskSpec::mnist_inpainting("data/mnist");
        t.noise_std = 0.0;
        t.mask = Some(MaskSpec::Explicit(vec![2.0]));
        assert_eq!(t.violations().len(), 2);
        assert!(TaskSpec::linear_gaussian().violations().is_empty());
        assert!(TaskSpec::gaussian_translation().violations().is_empty());
    }
}
