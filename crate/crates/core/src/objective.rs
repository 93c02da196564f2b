//! The training loss
//!
//! `L = recon + lambda1 * (Div(E1(x1), (Z1, Z2)) + Div(E2(x2), (Z2, Z3))) + lambda2 * R_d`
//!
//! with task-dependent data fidelity `R_d`. All norms are reduced as a mean
//! over elements within a sample, then a mean over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result, Violation};
use crate::latent::{sample_prior, LatentSplit};
use crate::measures::Divergence;
use crate::model::{PairedMaps, PairedModel, Part};
use crate::nn::{Mode, Tape};
use crate::tensor::Batch;

/// The data-fidelity regularizer `R_d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Fidelity {
    /// Squared error of both cross reconstructions.
    Denoising,
    /// L1 error of both cross reconstructions, restricted by a mask over
    /// one sample.
    Inpainting { mask: Vec<f64> },
    /// Squared displacement `|x1 - T(x1)|^2 + |x2 - T^-1(x2)|^2` of the
    /// translation maps; needs a shared-only split.
    Translation,
}

impl Fidelity {
    pub fn name(&self) -> &'static str {
        match self {
            Fidelity::Denoising => "denoising",
            Fidelity::Inpainting { .. } => "inpainting",
            Fidelity::Translation => "translation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub divergence: Divergence,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            divergence: Divergence::default(),
            batch_size: 64,
            learning_rate: 1e-3,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// Fidelity weight for translation. The squared-cost term must stay small
/// next to the latent divergence, otherwise the optimum shrinks towards the
/// identity map instead of pushing one marginal onto the other.
pub const TRANSLATION_LAMBDA2: f64 = 0.05;

impl TrainConfig {
    /// Defaults, with the translation fidelity weight for translation.
    pub fn for_fidelity(fidelity: &Fidelity) -> Self {
        let mut c = Self::default();
        if matches!(fidelity, Fidelity::Translation) {
            c.lambda2 = TRANSLATION_LAMBDA2;
        }
        c
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.lambda1 >= 0.0) {
            v.push(Violation::new("train.lambda1", "must be >= 0"));
        }
        if !(self.lambda2 >= 0.0) {
            v.push(Violation::new("train.lambda2", "must be >= 0"));
        }
        if self.batch_size < 2 {
            v.push(Violation::new("train.batch_size", "must be >= 2"));
        }
        if !(self.learning_rate > 0.0) {
            v.push(Violation::new("train.learning_rate", "must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    /// Unweighted sum of both latent divergences.
    pub div: f64,
    /// Unweighted `R_d`.
    pub fidelity: f64,
    /// False when a Sinkhorn solve hit its iteration cap.
    pub converged: bool,
}

/// One prior draw `Z = (Z1, Z2, Z3)` per batch element, reused for the
/// divergence references and for the free blocks of the cross
/// reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    split: LatentSplit,
    z: Batch,
}

impl PriorDraw {
    pub fn sample(split: LatentSplit, n: usize, seed: u64) -> Result<Self> {
        let codes = sample_prior(&split, n, seed)?;
        let data = codes.iter().flat_map(|c| c.concat()).collect();
        Self::from_batch(split, Batch::new(n, vec![split.total()], data)?)
    }

    pub fn from_batch(split: LatentSplit, z: Batch) -> Result<Self> {
        ensure_dim("prior draw width", split.total(), z.sample_len())?;
        Ok(Self { split, z })
    }

    pub fn n(&self) -> usize {
        self.z.n()
    }

    pub fn z1(&self) -> Result<Batch> {
        self.z.columns(self.split.z1_range())
    }

    pub fn z3(&self) -> Result<Batch> {
        self.z.columns(self.split.z3_range())
    }

    /// `(z1, z2)` rows.
    pub fn first(&self) -> Result<Batch> {
        self.z.columns(0..self.split.first_width())
    }

    /// `(z2, z3)` rows.
    pub fn second(&self) -> Result<Batch> {
        self.z.columns(self.split.d1..self.split.total())
    }
}

/// Mean absolute error, optionally weighted by a per-sample mask, with its
/// gradient in `pred`.
fn l1(pred: &Batch, target: &Batch, mask: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    pred.same_layout(target)?;
    let len = pred.sample_len();
    if let Some(m) = mask {
        ensure_dim("mask size", len, m.len())?;
    }
    let count = (pred.n() * len) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.data().len()];
    for (k, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let w = mask.map_or(1.0, |m| m[k % len]);
        let d = p - t;
        value += (w * d).abs();
        if d != 0.0 {
            grad[k] = w.abs() * d.signum() / count;
        }
    }
    Ok((value / count, grad))
}

/// Mean squared error and its gradient in `pred`.
fn squared(pred: &Batch, target: &Batch) -> Result<(f64, Vec<f64>)> {
    pred.same_layout(target)?;
    let count = pred.data().len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.data().len()];
    for (k, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        value += d * d;
        grad[k] = 2.0 * d / count;
    }
    Ok((value / count, grad))
}

/// Network evaluation inside the loss, with or without recording.
trait Forward {
    fn split(&self) -> LatentSplit;
    /// Evaluates `part` and returns its output with a handle for `backprop`.
    fn run(&mut self, part: Part, x: &Batch) -> Result<(Batch, usize)>;
    fn records(&self) -> bool;
    /// Pulls `grad` back through node `handle`; `None` when not recording.
    fn backprop(&mut self, handle: usize, grad: Batch) -> Result<Option<Batch>>;
}

struct ValueOnly<'a, M: PairedMaps + ?Sized>(&'a M);

impl<M: PairedMaps + ?Sized> Forward for ValueOnly<'_, M> {
    fn split(&self) -> LatentSplit {
        self.0.split()
    }

    fn run(&mut self, part: Part, x: &Batch) -> Result<(Batch, usize)> {
        let y = match part {
            Part::E1 => self.0.encode1(x)?,
            Part::E2 => self.0.encode2(x)?,
            Part::D1 => self.0.decode1(x)?,
            Part::D2 => self.0.decode2(x)?,
        };
        Ok((y, 0))
    }

    fn records(&self) -> bool {
        false
    }

    fn backprop(&mut self, _: usize, _: Batch) -> Result<Option<Batch>> {
        Ok(None)
    }
}

struct Recorder<'a> {
    model: &'a PairedModel,
    mode: Mode,
    tapes: Vec<(Part, Tape)>,
    grad: Vec<f64>,
}

impl Forward for Recorder<'_> {
    fn split(&self) -> LatentSplit {
        self.model.split()
    }

    fn run(&mut self, part: Part, x: &Batch) -> Result<(Batch, usize)> {
        let (y, tape) = self.model.forward(part, x, self.mode)?;
        self.tapes.push((part, tape));
        Ok((y, self.tapes.len() - 1))
    }

    fn records(&self) -> bool {
        true
    }

    fn backprop(&mut self, handle: usize, grad: Batch) -> Result<Option<Batch>> {
        let (part, tape) = &self.tapes[handle];
        let gx = self.model.backward(*part, tape, &grad, &mut self.grad)?;
        Ok(Some(gx))
    }
}

/// Adds `g` into columns `offset..` of each row of `acc`.
fn add_columns(acc: &mut Batch, g: &Batch, offset: usize) {
    let w = acc.sample_len();
    let gw = g.sample_len();
    for i in 0..acc.n() {
        let row = &mut acc.data_mut()[i * w + offset..i * w + offset + gw];
        for (a, b) in row.iter_mut().zip(g.sample(i)) {
            *a += b;
        }
    }
}

struct Inputs<'a> {
    x1: &'a Batch,
    x2: &'a Batch,
    prior: &'a PriorDraw,
    config: &'a TrainConfig,
    fidelity: &'a Fidelity,
    seed: u64,
}

fn check_fidelity(split: &LatentSplit, fidelity: &Fidelity) -> Result<()> {
    if matches!(fidelity, Fidelity::Translation) && !split.is_translation() {
        return Err(Error::Config(vec![Violation::new(
            "model.split",
            format!("translation needs a split of the form (0, d2, 0), got {split}"),
        )]));
    }
    Ok(())
}

/// Builds the loss once; gradients flow only when `f` records.
fn assemble<F: Forward>(f: &mut F, inp: &Inputs) -> Result<LossBreakdown> {
    let split = f.split();
    check_fidelity(&split, inp.fidelity)?;
    let cfg = inp.config;
    let (x1, x2) = (inp.x1, inp.x2);
    let want = f.records();

    let (c1, h_e1) = f.run(Part::E1, x1)?;
    let (c2, h_e2) = f.run(Part::E2, x2)?;
    let mut g_c1 = Batch::zeros(c1.n(), vec![split.first_width()]);
    let mut g_c2 = Batch::zeros(c2.n(), vec![split.second_width()]);

    let mut recon = 0.0;
    let (r1, h_d1) = f.run(Part::D1, &c1)?;
    let (v, g) = l1(&r1, x1, None)?;
    recon += v;
    if want {
        if let Some(gc) = f.backprop(h_d1, Batch::new(r1.n(), r1.shape().to_vec(), g)?)? {
            add_columns(&mut g_c1, &gc, 0);
        }
    }
    let (r2, h_d2) = f.run(Part::D2, &c2)?;
    let (v, g) = l1(&r2, x2, None)?;
    recon += v;
    if want {
        if let Some(gc) = f.backprop(h_d2, Batch::new(r2.n(), r2.shape().to_vec(), g)?)? {
            add_columns(&mut g_c2, &gc, 0);
        }
    }

    let mut div = 0.0;
    let mut converged = true;
    if cfg.lambda1 != 0.0 {
        for (k, (codes, reference, grad)) in [
            (&c1, inp.prior.first()?, &mut g_c1),
            (&c2, inp.prior.second()?, &mut g_c2),
        ]
        .into_iter()
        .enumerate()
        {
            let out = cfg
                .divergence
                .evaluate(&codes.to_measure()?, &reference.to_measure()?, inp.seed.wrapping_add(k as u64))?;
            div += out.value;
            converged &= out.converged;
            for (a, b) in grad.data_mut().iter_mut().zip(&out.grad) {
                *a += cfg.lambda1 * b;
            }
        }
    }

    let fidelity = if cfg.lambda2 != 0.0 {
        let d1 = split.d1;
        let d2 = split.d2;
        // Cross inputs: D1 reads (z1, shared block of E2), D2 reads (shared block of E1, z3).
        let (in1, in2) = match inp.fidelity {
            Fidelity::Translation => (c2.clone(), c1.clone()),
            _ => (
                Batch::hconcat(&[&inp.prior.z1()?, &c2.columns(0..d2)?])?,
                Batch::hconcat(&[&c1.columns(d1..d1 + d2)?, &inp.prior.z3()?])?,
            ),
        };
        let (y1, h1) = f.run(Part::D1, &in1)?;
        let (y2, h2) = f.run(Part::D2, &in2)?;
        // Targets: x1 for D1 and x2 for D2, except translation where each
        // map is compared with its own input.
        let ((v1, g1), (v2, g2)) = match inp.fidelity {
            Fidelity::Denoising => (squared(&y1, x1)?, squared(&y2, x2)?),
            Fidelity::Inpainting { mask } => (l1(&y1, x1, Some(mask))?, l1(&y2, x2, Some(mask))?),
            Fidelity::Translation => (squared(&y1, x2)?, squared(&y2, x1)?),
        };
        if want {
            let s = cfg.lambda2;
            let g1 = Batch::new(y1.n(), y1.shape().to_vec(), g1.into_iter().map(|v| v * s).collect())?;
            let g2 = Batch::new(y2.n(), y2.shape().to_vec(), g2.into_iter().map(|v| v * s).collect())?;
            let gi1 = f.backprop(h1, g1)?.expect("recording forward");
            let gi2 = f.backprop(h2, g2)?.expect("recording forward");
            match inp.fidelity {
                Fidelity::Translation => {
                    add_columns(&mut g_c2, &gi1, 0);
                    add_columns(&mut g_c1, &gi2, 0);
                }
                _ => {
                    add_columns(&mut g_c2, &gi1.columns(d1..d1 + d2)?, 0);
                    add_columns(&mut g_c1, &gi2.columns(0..d2)?, d1);
                }
            }
        }
        v1 + v2
    } else {
        0.0
    };

    if want {
        f.backprop(h_e1, g_c1)?;
        f.backprop(h_e2, g_c2)?;
    }

    Ok(LossBreakdown {
        total: recon + cfg.lambda1 * div + cfg.lambda2 * fidelity,
        recon,
        div,
        fidelity,
        converged,
    })
}

/// `L(theta)` and its breakdown for any set of maps.
pub fn total_loss<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    x2: &Batch,
    prior: &PriorDraw,
    config: &TrainConfig,
    fidelity: &Fidelity,
    seed: u64,
) -> Result<LossBreakdown> {
    let inp = Inputs { x1, x2, prior, config, fidelity, seed };
    assemble(&mut ValueOnly(maps), &inp)
}

/// Result of a recorded loss evaluation.
pub struct LossGradient {
    pub loss: LossBreakdown,
    /// Gradient in the model's `theta`.
    pub grad: Vec<f64>,
    /// Recorded network passes, in evaluation order, for updating batch-norm
    /// running statistics.
    pub tapes: Vec<(Part, Tape)>,
}

/// `L(theta)` with its gradient. `mode` selects batch statistics
/// (`Train`) or frozen running statistics (`Inference`).
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradient(
    model: &PairedModel,
    x1: &Batch,
    x2: &Batch,
    prior: &PriorDraw,
    config: &TrainConfig,
    fidelity: &Fidelity,
    seed: u64,
    mode: Mode,
) -> Result<LossGradient> {
    let inp = Inputs { x1, x2, prior, config, fidelity, seed };
    let mut rec = Recorder {
        model,
        mode,
        tapes: Vec::new(),
        grad: vec![0.0; model.theta().len()],
    };
    let loss = assemble(&mut rec, &inp)?;
    Ok(LossGradient { loss, grad: rec.grad, tapes: rec.tapes })
}

/// Mean over the batch of `|x1 - D1(E1(x1))|_1 + |x2 - D2(E2(x2))|_1`,
/// each norm averaged over elements.
pub fn reconstruction_term<M: PairedMaps + ?Sized>(maps: &M, x1: &Batch, x2: &Batch) -> Result<f64> {
    let r1 = maps.decode1(&maps.encode1(x1)?)?;
    let r2 = maps.decode2(&maps.encode2(x2)?)?;
    Ok(l1(&r1, x1, None)?.0 + l1(&r2, x2, None)?.0)
}

/// `Div(E1(x1), (Z1, Z2)) + Div(E2(x2), (Z2, Z3))` and whether every solve
/// converged.
pub fn latent_divergence_term<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    x2: &Batch,
    prior: &PriorDraw,
    divergence: &Divergence,
    seed: u64,
) -> Result<(f64, bool)> {
    let a = divergence.evaluate(
        &maps.encode1(x1)?.to_measure()?,
        &prior.first()?.to_measure()?,
        seed,
    )?;
    let b = divergence.evaluate(
        &maps.encode2(x2)?.to_measure()?,
        &prior.second()?.to_measure()?,
        seed.wrapping_add(1),
    )?;
    Ok((a.value + b.value, a.converged && b.converged))
}

/// Mean squared error of `D1(z1, E2(x2)_z2)` against `x1` plus that of
/// `D2(E1(x1)_z2, z3)` against `x2`.
pub fn data_fidelity_denoising<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    x2: &Batch,
    z1: &Batch,
    z3: &Batch,
) -> Result<f64> {
    let y1 = maps.cross_reconstruct_x1(z1, x2)?;
    let y2 = maps.cross_reconstruct_x2(x1, z3)?;
    Ok(squared(&y1, x1)?.0 + squared(&y2, x2)?.0)
}

/// Masked L1 analogue of [`data_fidelity_denoising`].
pub fn data_fidelity_inpainting<M: PairedMaps + ?Sized>(
    maps: &M,
    x1: &Batch,
    x2: &Batch,
    mask: &[f64],
    z1: &Batch,
    z3: &Batch,
) -> Result<f64> {
    let y1 = maps.cross_reconstruct_x1(z1, x2)?;
    let y2 = maps.cross_reconstruct_x2(x1, z3)?;
    Ok(l1(&y1, x1, Some(mask))?.0 + l1(&y2, x2, Some(mask))?.0)
}

/// `|x1 - D2(E1(x1))|^2 + |x2 - D1(E2(x2))|^2` on independent marginal
/// batches.
pub fn data_fidelity_translation<M: PairedMaps + ?Sized>(maps: &M, x1: &Batch, x2: &Batch) -> Result<f64> {
    check_fidelity(&maps.split(), &Fidelity::Translation)?;
    let t = maps.decode2(&maps.encode1(x1)?)?;
    let t_inv = maps.decode1(&maps.encode2(x2)?)?;
    Ok(squared(&t, x1)?.0 + squared(&t_inv, x2)?.0)
}
