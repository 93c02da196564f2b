//! Joint stochastic optimization of the loss with Adam.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::model::{PairedMaps, PairedModel};
use crate::nn::{Adam, Mode};
use crate::objective::{loss_and_gradient, Fidelity, LossBreakdown, PriorDraw, TrainConfig};
use crate::tensor::Batch;

/// Training samples. Paired data keeps `x1[i]` and `x2[i]` together in a
/// minibatch; unpaired data draws the two marginals independently.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub x1: Batch,
    pub x2: Batch,
    pub paired: bool,
}

impl TrainingData {
    pub fn paired(x1: Batch, x2: Batch) -> Result<Self> {
        ensure_dim("paired sample count", x1.n(), x2.n())?;
        Ok(Self { x1, x2, paired: true })
    }

    pub fn unpaired(x1: Batch, x2: Batch) -> Self {
        Self { x1, x2, paired: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Seconds since training started.
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<StepMetrics>,
    /// Steps whose Sinkhorn solves hit the iteration cap.
    pub unconverged_steps: usize,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.history.first().map(|m| m.loss.total)
    }

    /// Mean total loss over the last `k` steps.
    pub fn tail_loss(&self, k: usize) -> Option<f64> {
        let k = k.min(self.history.len());
        if k == 0 {
            return None;
        }
        let tail = &self.history[self.history.len() - k..];
        Some(tail.iter().map(|m| m.loss.total).sum::<f64>() / k as f64)
    }
}

/// A generator for step `step` of the run seeded with `seed`, on stream
/// `purpose`. Streams keep minibatch indices, prior draws and divergence
/// projections independent of one another.
pub fn step_rng(seed: u64, step: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step as u64) << 4 | purpose);
    rng
}

fn minibatch(data: &Batch, size: usize, rng: &mut ChaCha8Rng) -> Result<(Batch, Vec<usize>)> {
    let idx = index::sample(rng, data.n(), size).into_vec();
    Ok((data.select(&idx)?, idx))
}

/// Runs `config.iterations` Adam steps, reporting each step to `observer`.
pub fn train(
    model: &mut PairedModel,
    data: &TrainingData,
    fidelity: &Fidelity,
    config: &TrainConfig,
    mut observer: impl FnMut(&StepMetrics),
) -> Result<TrainReport> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let b = config.batch_size;
    if data.x1.n() < b || data.x2.n() < b {
        return Err(Error::InvalidArgument(format!(
            "batch size {b} exceeds the training set ({} / {} samples)",
            data.x1.n(),
            data.x2.n()
        )));
    }
    let mut adam = Adam::new(config.learning_rate);
    let mut history = Vec::with_capacity(config.iterations);
    let mut unconverged_steps = 0;
    let start = Instant::now();
    for step in 0..config.iterations {
        let mut rng = step_rng(config.seed, step, 0);
        let (x1, idx) = minibatch(&data.x1, b, &mut rng)?;
        let x2 = if data.paired {
            data.x2.select(&idx)?
        } else {
            minibatch(&data.x2, b, &mut rng)?.0
        };
        let prior_seed = step_rng(config.seed, step, 1).gen::<u64>();
        let div_seed = step_rng(config.seed, step, 2).gen::<u64>();
        let prior = PriorDraw::sample(model.split(), b, prior_seed)?;
        let out = loss_and_gradient(model, &x1, &x2, &prior, config, fidelity, div_seed, Mode::Train)?;
        if !out.loss.total.is_finite() {
            return Err(Error::InvalidArgument(format!("loss diverged at step {step}")));
        }
        if !out.loss.converged {
            unconverged_steps += 1;
        }
        for (part, tape) in &out.tapes {
            model.update_running_stats(*part, tape);
        }
        adam.step(model.theta_mut(), &out.grad);
        let metrics = StepMetrics {
            step,
            loss: out.loss,
            wall_clock: start.elapsed().as_secs_f64(),
        };
        observer(&metrics);
        history.push(metrics);
    }
    Ok(TrainReport { history, unconverged_steps })
}
