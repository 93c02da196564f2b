//! The `pwae` command line: `train`, `sample`, `evaluate` and `plot`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::experiment::{self, prepare, run_training, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, REPORT_FILE};
use crate::io::array::{load_conditions, Array};
use crate::io::checkpoint::{file_sha256, read_checkpoint};
use crate::io::config::RunConfig;
use crate::io::grid::{sample_grid, save_grid, save_scatter};
use crate::io::metrics::read_metrics;
use crate::latent::random_axis;
use crate::model::{PairedMaps, PairedModel};
use crate::sampler::{moments, perturbed_estimates, point_estimate, sample_conditional, DEFAULT_SIGMAS};
use crate::tensor::Batch;

#[derive(Debug, Parser)]
#[command(name = "pwae", version, about = "Paired Wasserstein autoencoders for conditional sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Denoise,
    Inpaint,
    Translate,
    LinearGaussian,
    TranslateDigits,
}

impl TaskArg {
    fn preset(self) -> &'static str {
        match self {
            TaskArg::Denoise => "denoise",
            TaskArg::Inpaint => "inpaint",
            TaskArg::Translate => "translate",
            TaskArg::LinearGaussian => "linear-gaussian",
            TaskArg::TranslateDigits => "translate-digits",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write config, metrics CSV and checkpoint.
    Train {
        /// Preset to start from; ignored when --config is given.
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "data/mnist")]
        data_dir: String,
        /// Overrides `train.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Draw conditional samples, the sigma ladder, mean and std.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conditioning inputs (sample array, IDX file or text rows);
        /// defaults to the held-out test observations.
        #[arg(long)]
        condition_input: Option<PathBuf>,
        /// Ground truth for the conditions, shown as the first grid column.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `samples/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a metrics report for a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Compare with the closed-form oracle (default: the config's setting).
        #[arg(long)]
        oracle: bool,
        /// Defaults to `eval.json` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the figures for a directory written by `sample`.
    Plot {
        #[arg(long)]
        samples_dir: PathBuf,
    },
}

/// Metadata written by `sample` next to the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub n: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
    /// Axis of `Z1` perturbed for the ladder; `None` when `d1 = 0`.
    pub axis: Option<usize>,
}

/// Loads a checkpoint and the config stored in it.
pub fn open_checkpoint(path: &Path) -> Result<(PairedModel, RunConfig, String)> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.manifest.steps == 0 {
        return Err(Error::InvalidArgument(format!("{} is an untrained checkpoint", path.display())));
    }
    let config = RunConfig::from_toml(&ckpt.manifest.config)?;
    let hash = config.hash()?;
    if hash != ckpt.manifest.config_hash {
        return Err(Error::HashMismatch(ckpt.manifest.config_hash, hash));
    }
    Ok((ckpt.into_model()?, config, hash))
}

fn train_cmd(
    task: Option<TaskArg>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    data_dir: &str,
    iterations: Option<usize>,
) -> Result<String> {
    let mut c = match (&config, task) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(t)) => RunConfig::preset(t.preset(), data_dir)?,
        (None, None) => {
            return Err(Error::Config(vec![Violation::new("task", "pass --task or --config")]));
        }
    };
    if let Some(s) = seed {
        c.train.seed = s;
    }
    if let Some(i) = iterations {
        c.train.iterations = i;
    }
    if let Some(o) = &out {
        c.output_dir = o.display().to_string();
    }
    c.validate()?;
    let data = prepare(&c)?;
    let result = run_training(&c, &data, &c.output_dir)?;
    let ckpt = result.dir.join(CHECKPOINT_FILE);
    Ok(format!(
        "trained {} steps (final loss {:.6})\nconfig_hash={}\ncheckpoint={} sha256={}\nmetrics={}",
        result.report.history.len(),
        result.report.history.last().map_or(f64::NAN, |m| m.loss.total),
        c.hash()?,
        ckpt.display(),
        result.checkpoint_sha256,
        result.dir.join(METRICS_FILE).display()
    ))
}

fn as_inputs(b: Batch, shape: &[usize], what: &'static str) -> Result<Batch> {
    crate::error::ensure_dim(what, shape.iter().product(), b.sample_len())?;
    b.reshape(shape.to_vec())
}

struct SampleArgs {
    checkpoint: PathBuf,
    condition_input: Option<PathBuf>,
    truth: Option<PathBuf>,
    n: usize,
    sigmas: Vec<f64>,
    seed: u64,
    out: Option<PathBuf>,
}

fn stack(parts: &[Batch], shape: &[usize]) -> Result<Batch> {
    let data: Vec<f64> = parts.iter().flat_map(|b| b.data().iter().copied()).collect();
    Batch::new(parts.len(), shape.to_vec(), data)
}

fn sample_cmd(a: SampleArgs) -> Result<String> {
    if a.n < 2 {
        return Err(Error::InvalidArgument("--n must be >= 2".into()));
    }
    let (model, config, hash) = open_checkpoint(&a.checkpoint)?;
    let ckpt_sha = file_sha256(&a.checkpoint)?;
    let arch = model.architecture().clone();
    let (conditions, truth) = match &a.condition_input {
        Some(p) => {
            let c = as_inputs(load_conditions(p)?, &arch.x2_shape, "condition size")?;
            let t = a.truth.as_ref().map(|t| as_inputs(load_conditions(t)?, &arch.x1_shape, "truth size")).transpose()?;
            (c, t)
        }
        None => {
            let data = prepare(&config)?;
            let k = config.eval.conditions.min(data.test_x2.n()).min(16);
            let idx: Vec<usize> = (0..k).collect();
            let paired = config.task.kind != crate::tasks::TaskKind::Translation;
            (data.test_x2.select(&idx)?, if paired { Some(data.test_x1.select(&idx)?) } else { None })
        }
    };
    if let Some(t) = &truth {
        crate::error::ensure_dim("truth count", conditions.n(), t.n())?;
    }
    let split = model.split();
    let axis = if split.d1 > 0 { Some(random_axis(&split, a.seed)?) } else { None };
    let (mut samples, mut ladder, mut means, mut stds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..conditions.n() {
        let x2 = conditions.single(i)?;
        let s = sample_conditional(&model, &x2, a.n, a.seed.wrapping_add(i as u64))?;
        let (m, sd) = moments(&s);
        means.push(Batch::new(1, arch.x1_shape.clone(), m)?);
        stds.push(Batch::new(1, arch.x1_shape.clone(), sd)?);
        samples.push(s);
        ladder.push(match axis {
            Some(ax) => perturbed_estimates(&model, &x2, &a.sigmas, ax)?,
            None => vec![point_estimate(&model, &x2)?; a.sigmas.len()],
        });
    }
    let dir = a.out.unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).join("samples"));
    fs::create_dir_all(&dir)?;
    let m = conditions.n();
    let img = &arch.x1_shape;
    let with = |lead: &[usize]| -> Vec<usize> { lead.iter().chain(img.iter()).copied().collect() };
    let flat = |parts: &[Batch]| parts.iter().flat_map(|b| b.data().iter().copied()).collect::<Vec<_>>();
    Array::from_batch(&conditions, &hash, a.seed)?.save(dir.join("conditions.arr"))?;
    if let Some(t) = &truth {
        Array::from_batch(t, &hash, a.seed)?.save(dir.join("truth.arr"))?;
    }
    Array::new(with(&[m, a.n]), flat(&samples), &hash, a.seed)?.save(dir.join("samples.arr"))?;
    let ladder_flat: Vec<Batch> = ladder.iter().flatten().cloned().collect();
    Array::new(with(&[m, a.sigmas.len()]), flat(&ladder_flat), &hash, a.seed)?.save(dir.join("ladder.arr"))?;
    Array::from_batch(&stack(&means, img)?, &hash, a.seed)?.save(dir.join("mean.arr"))?;
    Array::from_batch(&stack(&stds, img)?, &hash, a.seed)?.save(dir.join("std.arr"))?;
    let info = SampleInfo {
        config_hash: hash,
        checkpoint_sha256: ckpt_sha,
        n: a.n,
        sigmas: a.sigmas,
        seed: a.seed,
        axis,
    };
    fs::write(dir.join("sample.json"), serde_json::to_string_pretty(&info).map_err(|e| Error::Serialization(e.to_string()))?)?;
    let figure = plot_cmd(&dir)?;
    Ok(format!("wrote {m} conditions x {} samples to {}\n{figure}", info.n, dir.display()))
}

/// Refuses a directory whose files disagree on the config hash.
fn check_run_dir(checkpoint: &Path, hash: &str) -> Result<()> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let cfg = dir.join(CONFIG_FILE);
    if cfg.is_file() {
        let found = RunConfig::load(&cfg)?.hash()?;
        if found != hash {
            return Err(Error::HashMismatch(hash.into(), found));
        }
    }
    let metrics = dir.join(METRICS_FILE);
    if metrics.is_file() {
        let m = read_metrics(&metrics)?;
        if m.config_hash != hash {
            return Err(Error::HashMismatch(hash.into(), m.config_hash));
        }
        if let Some(recorded) = m.checkpoint_sha256 {
            let actual = file_sha256(checkpoint)?;
            if recorded != actual {
                return Err(Error::HashMismatch(recorded, actual));
            }
        }
    }
    Ok(())
}

fn evaluate_cmd(checkpoint: &Path, oracle: bool, out: Option<PathBuf>) -> Result<String> {
    let (model, config, hash) = open_checkpoint(checkpoint)?;
    check_run_dir(checkpoint, &hash)?;
    let data = prepare(&config)?;
    let report = experiment::evaluate(&model, &config, &data, oracle || config.eval.oracle)?;
    let json = report.to_json()?;
    let path = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join(REPORT_FILE));
    fs::write(&path, &json)?;
    Ok(format!("{json}\nreport={}", path.display()))
}

fn load_array(dir: &Path, name: &str, hash: &mut Option<String>) -> Result<Option<Array>> {
    let p = dir.join(name);
    if !p.is_file() {
        return Ok(None);
    }
    let a = Array::load(&p)?;
    match hash {
        Some(h) if *h != a.header.config_hash => {
            return Err(Error::HashMismatch(h.clone(), a.header.config_hash));
        }
        _ => *hash = Some(a.header.config_hash.clone()),
    }
    Ok(Some(a))
}

fn plot_cmd(dir: &Path) -> Result<String> {
    let mut hash = None;
    let need = |a: Option<Array>, name: &str| {
        a.ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{name} missing in {}", dir.display()))))
    };
    let conditions = need(load_array(dir, "conditions.arr", &mut hash)?, "conditions.arr")?.to_batch()?;
    let truth = load_array(dir, "truth.arr", &mut hash)?.map(|a| a.to_batch()).transpose()?;
    let samples = need(load_array(dir, "samples.arr", &mut hash)?, "samples.arr")?;
    let ladder = need(load_array(dir, "ladder.arr", &mut hash)?, "ladder.arr")?;
    let mean = need(load_array(dir, "mean.arr", &mut hash)?, "mean.arr")?.to_batch()?;
    let std = need(load_array(dir, "std.arr", &mut hash)?, "std.arr")?.to_batch()?;
    let hash = hash.unwrap_or_default();
    let m = mean.n();
    let img = mean.shape().to_vec();
    if img.len() == 3 {
        let k = ladder.header.shape[1];
        let len: usize = img.iter().product();
        let columns: Vec<Batch> = (0..k)
            .map(|j| {
                let data: Vec<f64> = (0..m).flat_map(|i| ladder.data[(i * k + j) * len..][..len].iter().copied()).collect();
                Batch::new(m, img.clone(), data)
            })
            .collect::<Result<_>>()?;
        let grid = sample_grid(truth.as_ref(), &conditions.reshape(img.clone())?, &columns, &mean, &std)?;
        let p = dir.join("grid.png");
        save_grid(&grid, &p, &hash)?;
        Ok(format!("figure={}", p.display()))
    } else {
        let all = Batch::new(m * samples.header.shape[1], img.clone(), samples.data.clone())?;
        let mut groups: Vec<(&Batch, [u8; 3])> = vec![(&all, [150, 170, 220]), (&mean, [200, 40, 40])];
        if let Some(t) = &truth {
            groups.push((t, [30, 140, 60]));
        }
        let p = dir.join("scatter.png");
        save_scatter(&groups, 512, &p, &hash)?;
        Ok(format!("figure={}", p.display()))
    }
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train { task, config, seed, out, data_dir, iterations } => {
            train_cmd(task, config, seed, out, &data_dir, iterations)
        }
        Command::Sample { checkpoint, condition_input, truth, n, sigmas, seed, out } => sample_cmd(SampleArgs {
            checkpoint,
            condition_input,
            truth,
            n,
            sigmas: sigmas.unwrap_or_else(|| DEFAULT_SIGMAS.to_vec()),
            seed,
            out,
        }),
        Command::Evaluate { checkpoint, oracle, out } => evaluate_cmd(&checkpoint, oracle, out),
        Command::Plot { samples_dir } => plot_cmd(&samples_dir),
    }
}

/// Machine-readable error lines: one per violated field for config errors.
pub fn error_lines(e: &Error) -> Vec<String> {
    match e {
        Error::Config(v) => v
            .iter()
            .map(|v| format!("error: kind=config field={} message={:?}", v.field, v.message))
            .collect(),
        other => vec![format!("error: kind={} message={:?}", other.kind(), other.to_string())],
    }
}
