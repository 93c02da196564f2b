//! End-to-end runs: data from a [`RunConfig`], training with artifacts,
//! and evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{latent_diagnostics, mean_psnr, observed_residual, translation_metrics, w2_to_posterior};
use crate::eval::{LatentDiagnostics, TranslationMetrics};
use crate::io::checkpoint::{file_sha256, save_checkpoint, RunStamp};
use crate::io::config::RunConfig;
use crate::io::idx::{load_idx, load_idx_labels};
use crate::io::metrics::{append_checkpoint_hash, MetricsWriter};
use crate::measures::SinkhornOptions;
use crate::model::{PairedMaps, PairedModel};
use crate::objective::Fidelity;
use crate::sampler::{conditional_moments, point_estimate};
use crate::tasks::{make_translation_datasets, AffineMap, DatasetSource, LinearGaussianOracle, TaskKind};
use crate::tensor::Batch;
use crate::train::{train, TrainReport, TrainingData};

/// Points used for the latent diagnostics.
pub const DIAGNOSTIC_POINTS: usize = 256;
/// Pixels whose conditional std exceeds this count as uncertain.
pub const STD_FLOOR: f64 = 1e-3;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "eval.json";

/// An independent seed for `purpose` under the run seed.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 62 | purpose);
    rng.gen()
}

#[derive(Debug, Clone)]
pub enum Oracle {
    None,
    Posterior(LinearGaussianOracle),
    Transport { map: AffineMap, cost: f64 },
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: TrainingData,
    pub test_x1: Batch,
    pub test_x2: Batch,
    pub fidelity: Fidelity,
    pub oracle: Oracle,
}

fn mnist_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{stem}[.gz] not found in {}", dir.display()),
    )))
}

/// Images and labels of the train (`t10k` when `test`) set.
pub fn load_mnist(dir: impl AsRef<Path>, test: bool) -> Result<(Batch, Vec<u8>)> {
    let dir = dir.as_ref();
    let prefix = if test { "t10k" } else { "train" };
    let images = load_idx(mnist_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = load_idx_labels(mnist_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    crate::error::ensure_dim("mnist labels", images.n(), labels.len())?;
    Ok((images, labels))
}

fn first(b: &Batch, n: usize) -> Result<Batch> {
    b.select(&(0..n.min(b.n())).collect::<Vec<_>>())
}

fn with_labels(b: &Batch, labels: &[u8], keep: &[u8], n: usize) -> Result<Batch> {
    let idx: Vec<usize> = (0..b.n()).filter(|&i| keep.contains(&labels[i])).take(n).collect();
    if idx.is_empty() {
        return Err(Error::Empty("digits with the requested labels"));
    }
    b.select(&idx)
}

/// Builds training and test data. MNIST counts are upper bounds: the first
/// `train`/`test` images of the respective files are used.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let task = &config.task;
    let seed = config.train.seed;
    let sample_shape = config.model.architecture.x1_shape.clone();
    let fidelity = task.fidelity(&sample_shape)?;
    let (train_data, test_x1, test_x2, oracle) = match &task.dataset {
        DatasetSource::Mnist { dir, train: n_train, test: n_test } => {
            let (tr, _) = load_mnist(dir, false)?;
            let (te, _) = load_mnist(dir, true)?;
            let x1 = first(&tr, *n_train)?;
            let x2 = task.observe(&x1, derive_seed(seed, 1))?;
            let t1 = first(&te, *n_test)?;
            let t2 = task.observe(&t1, derive_seed(seed, 2))?;
            (TrainingData::paired(x1, x2)?, t1, t2, Oracle::None)
        }
        DatasetSource::MnistClasses { dir, labels1, labels2, train: n_train, test: n_test } => {
            let (tr, ltr) = load_mnist(dir, false)?;
            let (te, lte) = load_mnist(dir, true)?;
            let x1 = with_labels(&tr, &ltr, labels1, *n_train)?;
            let x2 = with_labels(&tr, &ltr, labels2, *n_train)?;
            let t1 = with_labels(&te, &lte, labels1, *n_test)?;
            let t2 = with_labels(&te, &lte, labels2, *n_test)?;
            (TrainingData::unpaired(x1, x2), t1, t2, Oracle::None)
        }
        DatasetSource::LinearGaussian { dim, prior_std, train: n_train, test: n_test } => {
            let oracle = LinearGaussianOracle::isotropic(*dim, *prior_std, task.noise_std)?;
            let (x1, x2) = oracle.sample_pairs(*n_train, derive_seed(seed, 1))?;
            let (t1, t2) = oracle.sample_pairs(*n_test, derive_seed(seed, 2))?;
            (TrainingData::paired(x1, x2)?, t1, t2, Oracle::Posterior(oracle))
        }
        DatasetSource::GaussianPair(spec) => {
            let (x1, x2) = make_translation_datasets(spec, spec.train, derive_seed(seed, 1))?;
            let (t1, t2) = make_translation_datasets(spec, spec.test, derive_seed(seed, 2))?;
            let oracle = Oracle::Transport { map: spec.monge_map()?, cost: spec.w2_squared()? };
            (TrainingData::unpaired(x1, x2), t1, t2, oracle)
        }
    };
    Ok(Prepared { train: train_data, test_x1, test_x2, fidelity, oracle })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PairedModel,
    pub report: TrainReport,
    pub dir: PathBuf,
    pub checkpoint_sha256: String,
}

/// Trains `config` and writes `config.toml`, `metrics.csv` and
/// `model.ckpt` into `dir`.
pub fn run_training(config: &RunConfig, data: &Prepared, dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let dir = dir.as_ref().to_path_buf();
    fs::create_dir_all(&dir)?;
    let hash = config.hash()?;
    config.save(dir.join(CONFIG_FILE))?;
    let mut model = PairedModel::new(
        config.model.architecture.clone(),
        config.model.split,
        derive_seed(config.train.seed, 0),
    )?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics_path, &hash)?;
    let mut write_error = None;
    let report = train(&mut model, &data.train, &data.fidelity, &config.train, |m| {
        if let Err(e) = writer.append(m) {
            write_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    writer.finish()?;
    let stamp = RunStamp {
        task: config.task.kind.name().into(),
        config_hash: hash,
        seed: config.train.seed,
        steps: report.history.len(),
        config: config.identity_text()?,
    };
    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &stamp, &ckpt)?;
    let checkpoint_sha256 = file_sha256(&ckpt)?;
    append_checkpoint_hash(&metrics_path, &checkpoint_sha256)?;
    Ok(TrainOutcome { model, report, dir, checkpoint_sha256 })
}

/// Posterior comparison on the linear-Gaussian task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorMetrics {
    pub w2: Vec<f64>,
    pub w2_mean: f64,
    pub w2_max: f64,
    /// Largest `|point estimate - posterior mean|` over the conditions.
    pub point_estimate_error: f64,
}

/// Reconstruction quality on image tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub psnr_estimate: f64,
    pub psnr_input: f64,
    /// Fraction of pixels with conditional std `> 0`.
    pub std_positive_fraction: f64,
    /// Fraction of pixels with conditional std `> STD_FLOOR`.
    pub std_above_floor_fraction: f64,
    /// Inpainting only.
    pub observed_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub task: String,
    pub conditions: usize,
    pub posterior: Option<PosteriorMetrics>,
    pub images: Option<ImageMetrics>,
    pub translation: Option<TranslationMetrics>,
    pub latent: LatentDiagnostics,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn posterior_metrics<M: PairedMaps>(
    model: &M,
    oracle: &LinearGaussianOracle,
    conditions: &Batch,
    n: usize,
    seed: u64,
) -> Result<PosteriorMetrics> {
    let w2 = w2_to_posterior(model, oracle, conditions, n, seed)?;
    let est = point_estimate(model, conditions)?;
    let mut err: f64 = 0.0;
    for (i, row) in est.rows().enumerate() {
        let (m, _) = oracle.posterior(conditions.sample(i))?;
        err = err.max(row.iter().zip(m.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    Ok(PosteriorMetrics {
        w2_mean: w2.iter().sum::<f64>() / w2.len() as f64,
        w2_max: w2.iter().cloned().fold(0.0, f64::max),
        w2,
        point_estimate_error: err,
    })
}

fn image_metrics<M: PairedMaps>(
    model: &M,
    x1: &Batch,
    x2: &Batch,
    fidelity: &Fidelity,
    n: usize,
    seed: u64,
) -> Result<ImageMetrics> {
    let est = point_estimate(model, x2)?;
    let (mut positive, mut above, mut total) = (0usize, 0usize, 0usize);
    for i in 0..x2.n() {
        let (_, std) = conditional_moments(model, &x2.single(i)?, n, seed.wrapping_add(i as u64))?;
        positive += std.iter().filter(|s| **s > 0.0).count();
        above += std.iter().filter(|s| **s > STD_FLOOR).count();
        total += std.len();
    }
    let observed_residual = match fidelity {
        Fidelity::Inpainting { mask } => Some(observed_residual(model, x2, mask)?),
        _ => None,
    };
    Ok(ImageMetrics {
        psnr_estimate: mean_psnr(&est, x1)?,
        psnr_input: mean_psnr(x2, x1)?,
        std_positive_fraction: positive as f64 / total as f64,
        std_above_floor_fraction: above as f64 / total as f64,
        observed_residual,
    })
}

/// Evaluates `model` on the held-out data of `config`.
pub fn evaluate<M: PairedMaps>(model: &M, config: &RunConfig, data: &Prepared, use_oracle: bool) -> Result<EvalReport> {
    let ev = &config.eval;
    let seed = ev.seed;
    let k = ev.conditions.min(data.test_x2.n());
    let cond1 = first(&data.test_x1, k)?;
    let cond2 = first(&data.test_x2, k)?;
    let mut report = EvalReport {
        config_hash: config.hash()?,
        task: config.task.kind.name().into(),
        conditions: k,
        posterior: None,
        images: None,
        translation: None,
        latent: LatentDiagnostics {
            div_first: 0.0,
            div_second: 0.0,
            floor_first: 0.0,
            floor_second: 0.0,
            cross_block_correlation: 0.0,
        },
    };
    let (d1, d2) = match (&data.oracle, use_oracle) {
        (Oracle::Posterior(oracle), true) => {
            report.posterior = Some(posterior_metrics(model, oracle, &cond2, ev.n_samples, seed)?);
            oracle.sample_pairs(DIAGNOSTIC_POINTS, derive_seed(seed, 3))?
        }
        (Oracle::Transport { map, cost }, true) => {
            report.translation = Some(translation_metrics(model, &data.test_x1, map, *cost)?);
            (first(&data.test_x1, DIAGNOSTIC_POINTS)?, first(&data.test_x2, DIAGNOSTIC_POINTS)?)
        }
        _ => (first(&data.test_x1, DIAGNOSTIC_POINTS)?, first(&data.test_x2, DIAGNOSTIC_POINTS)?),
    };
    if config.task.kind != TaskKind::Translation && config.model.architecture.x1_shape.len() == 3 {
        report.images = Some(image_metrics(model, &cond1, &cond2, &data.fidelity, ev.n_samples, seed)?);
    }
    report.latent = latent_diagnostics(model, &d1, &d2, &SinkhornOptions::default(), derive_seed(seed, 4))?;
    Ok(report)
}
