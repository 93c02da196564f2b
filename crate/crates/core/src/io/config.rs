//! Run configuration files.
//!
//! A [`RunConfig`] is written as TOML. Its canonical text is the TOML
//! re-serialization of the parsed value, and the config hash is the hex
//! SHA-256 of that text. Every artifact produced from the run carries the
//! hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Violation};
use crate::latent::LatentSplit;
use crate::model::ArchitectureSpec;
use crate::objective::TrainConfig;
use crate::sampler::DEFAULT_SIGMAS;
use crate::tasks::{DatasetSource, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub split: LatentSplit,
    pub architecture: ArchitectureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Conditional samples drawn per conditioning input.
    pub n_samples: usize,
    /// Number of held-out conditioning inputs.
    pub conditions: usize,
    /// Compare against the closed-form oracle when the task has one.
    pub oracle: bool,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            conditions: 8,
            oracle: true,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: String,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

pub const PRESETS: [&str; 5] = ["denoise", "inpaint", "translate", "linear-gaussian", "translate-digits"];

/// Latent weight for the MNIST presets. Reconstruction is a per-pixel mean
/// while the divergence acts on 32-D codes whose finite-batch floor is large,
/// so at weight 1 its gradient noise drowns the reconstruction signal.
pub const MNIST_LAMBDA1: f64 = 0.01;

impl RunConfig {
    /// Named starting points; `data_dir` is the MNIST directory.
    pub fn preset(name: &str, data_dir: &str) -> Result<Self> {
        let mnist_train = TrainConfig {
            lambda1: MNIST_LAMBDA1,
            batch_size: 64,
            iterations: 3000,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mnist_eval = EvalConfig { n_samples: 64, conditions: 100, ..EvalConfig::default() };
        let c = match name {
            "denoise" => Self {
                name: name.into(),
                output_dir: "runs/denoise".into(),
                task: TaskSpec::mnist_denoising(data_dir),
                model: ModelConfig {
                    split: LatentSplit::new(16, 16, 16)?,
                    architecture: ArchitectureSpec {
                        output2: crate::model::OutputSquashing::Linear,
                        ..ArchitectureSpec::mnist()
                    },
                },
                train: mnist_train,
                eval: mnist_eval,
            },
            "inpaint" => Self {
                name: name.into(),
                output_dir: "runs/inpaint".into(),
                task: TaskSpec::mnist_inpainting(data_dir),
                model: ModelConfig {
                    split: LatentSplit::new(16, 16, 16)?,
                    architecture: ArchitectureSpec {
                        output2: crate::model::OutputSquashing::Linear,
                        ..ArchitectureSpec::mnist()
                    },
                },
                train: mnist_train,
                eval: mnist_eval,
            },
            "translate" => Self {
                name: name.into(),
                output_dir: "runs/translate".into(),
                task: TaskSpec::gaussian_translation(),
                model: ModelConfig {
                    split: LatentSplit::shared_only(2)?,
                    architecture: ArchitectureSpec::dense(2, 2, vec![64, 64]),
                },
                train: TrainConfig {
                    lambda2: crate::objective::TRANSLATION_LAMBDA2,
                    batch_size: 128,
                    iterations: 2000,
                    ..TrainConfig::default()
                },
                eval: EvalConfig { conditions: 1024, ..EvalConfig::default() },
            },
            "linear-gaussian" => Self {
                name: name.into(),
                output_dir: "runs/linear-gaussian".into(),
                task: TaskSpec::linear_gaussian(),
                model: ModelConfig {
                    split: LatentSplit::new(2, 2, 0)?,
                    architecture: ArchitectureSpec::dense(2, 2, vec![64, 64]),
                },
                train: TrainConfig { batch_size: 128, iterations: 2000, ..TrainConfig::default() },
                eval: EvalConfig { n_samples: 512, conditions: 10, ..EvalConfig::default() },
            },
            "translate-digits" => Self {
                name: name.into(),
                output_dir: "runs/translate-digits".into(),
                task: TaskSpec {
                    kind: TaskKind::Translation,
                    noise_std: 0.0,
                    mask: None,
                    dataset: DatasetSource::MnistClasses {
                        dir: data_dir.into(),
                        labels1: vec![3],
                        labels2: vec![8],
                        train: 60000,
                        test: 10000,
                    },
                },
                model: ModelConfig {
                    split: LatentSplit::shared_only(64)?,
                    architecture: ArchitectureSpec::translation_images(vec![1, 28, 28]),
                },
                train: TrainConfig { lambda2: crate::objective::TRANSLATION_LAMBDA2, ..mnist_train },
                eval: mnist_eval,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn canonical_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Canonical text with `output_dir` blanked, so a run moved or repeated
    /// elsewhere keeps its identity.
    pub fn identity_text(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir.clear();
        c.canonical_text()
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.identity_text()?.as_bytes())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.canonical_text()?)?;
        Ok(())
    }

    /// Every violated field, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.task.violations();
        v.extend(self.train.violations());
        let split = self.model.split;
        if let Err(e) = split.validate() {
            v.push(Violation::new("model.split", e.to_string()));
        }
        let arch = &self.model.architecture;
        let expected: Option<Vec<usize>> = match &self.task.dataset {
            DatasetSource::Mnist { dir, train, test } | DatasetSource::MnistClasses { dir, train, test, .. } => {
                if !Path::new(dir).is_dir() {
                    v.push(Violation::new("task.dataset.dir", format!("`{dir}` is not a directory")));
                }
                if *train == 0 || *test == 0 {
                    v.push(Violation::new("task.dataset", "train and test counts must be positive"));
                }
                Some(vec![1, 28, 28])
            }
            DatasetSource::LinearGaussian { dim, prior_std, train, .. } => {
                if !(*prior_std > 0.0) {
                    v.push(Violation::new("task.dataset.prior_std", "must be > 0"));
                }
                if *train < self.train.batch_size {
                    v.push(Violation::new("task.dataset.train", "must be at least train.batch_size"));
                }
                Some(vec![*dim])
            }
            DatasetSource::GaussianPair(spec) => {
                if spec.moments().is_err() {
                    v.push(Violation::new("task.dataset", "means and covariances have inconsistent sizes"));
                } else if spec.monge_map().is_err() {
                    v.push(Violation::new("task.dataset", "covariances must be positive definite"));
                }
                Some(vec![spec.dim()])
            }
        };
        if let DatasetSource::MnistClasses { labels1, labels2, .. } = &self.task.dataset {
            if labels1.is_empty() || labels2.is_empty() || labels1.iter().chain(labels2).any(|l| *l > 9) {
                v.push(Violation::new("task.dataset.labels", "need nonempty digit classes in 0..=9"));
            }
        }
        if let Some(shape) = expected {
            if arch.x1_shape != shape {
                v.push(Violation::new("model.architecture.x1_shape", format!("must be {shape:?} for this dataset")));
            }
            if arch.x2_shape != shape {
                v.push(Violation::new("model.architecture.x2_shape", format!("must be {shape:?} for this dataset")));
            }
        }
        if self.task.kind == TaskKind::Translation && !split.is_translation() {
            v.push(Violation::new("model.split", "translation needs d1 = d3 = 0"));
        }
        if self.eval.n_samples < 2 {
            v.push(Violation::new("eval.n_samples", "must be >= 2"));
        }
        if self.eval.conditions == 0 {
            v.push(Violation::new("eval.conditions", "must be >= 1"));
        }
        let out = Path::new(&self.output_dir);
        if out.exists() && !out.is_dir() {
            v.push(Violation::new("output_dir", "exists and is not a directory"));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let c = RunConfig::preset(name, "data/mnist").unwrap();
            let text = c.canonical_text().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, c, "{name}");
            assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset("translate", "data/mnist").unwrap();
        let mut b = a.clone();
        b.train.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn every_violation_is_reported() {
        let mut c = RunConfig::preset("translate", "data/mnist").unwrap();
        c.train.batch_size = 1;
        c.train.lambda1 = -1.0;
        c.model.split = LatentSplit { d1: 1, d2: 2, d3: 0 };
        c.eval.n_samples = 1;
        let fields: Vec<String> = c.violations().into_iter().map(|v| v.field).collect();
        for f in ["train.batch_size", "train.lambda1", "model.split", "eval.n_samples"] {
            assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::preset("translate", "data/mnist").unwrap().canonical_text().unwrap();
        text = text.replace("[train]\n", "[train]\nwarmup = 3\n");
        assert_eq!(RunConfig::from_toml(&text).unwrap_err().kind(), "serialization");
    }
}
