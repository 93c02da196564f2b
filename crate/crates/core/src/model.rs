//! Paired encoder/decoder maps `E1: X1 -> (z1, z2)`, `E2: X2 -> (z2, z3)`,
//! `D1: (z1, z2) -> X1` and `D2: (z2, z3) -> X2`.
//!
//! The wiring is structural: each network only ever receives the blocks it
//! is allowed to read.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::latent::LatentSplit;
use crate::nn::{Activation, Layer, Mode, Network, Tape};
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquashing {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backbone {
    /// Multilayer perceptron for vector-valued data.
    Dense { hidden: Vec<usize> },
    /// Stride-2 convolutions down, transposed convolutions up. The encoder
    /// has one layer per entry of `encoder_channels`; the decoder starts
    /// from a dense projection to `decoder_channels[0]` feature maps and
    /// upsamples once per entry.
    Conv {
        encoder_channels: Vec<usize>,
        decoder_channels: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Per-sample shape of `X1`: `[d]` for vectors, `[c, h, w]` for images.
    pub x1_shape: Vec<usize>,
    pub x2_shape: Vec<usize>,
    pub backbone: Backbone,
    pub activation: Activation,
    pub normalization: Normalization,
    pub output1: OutputSquashing,
    pub output2: OutputSquashing,
}

impl ArchitectureSpec {
    /// Four stride-2 convolutions with widths (32, 64, 128, 128), three
    /// upsampling layers, ReLU, batch norm and a sigmoid output for `X1`.
    pub fn mnist() -> Self {
        Self::mnist_with_widths(&[32, 64, 128, 128])
    }

    /// The MNIST layout with custom encoder widths; the decoder mirrors the
    /// last three.
    pub fn mnist_with_widths(widths: &[usize]) -> Self {
        let mut decoder: Vec<usize> = widths.iter().rev().take(3).copied().collect();
        decoder.resize(3, *widths.first().unwrap_or(&32));
        Self {
            x1_shape: vec![1, 28, 28],
            x2_shape: vec![1, 28, 28],
            backbone: Backbone::Conv {
                encoder_channels: widths.to_vec(),
                decoder_channels: decoder,
            },
            activation: Activation::Relu,
            normalization: Normalization::BatchNorm,
            output1: OutputSquashing::Sigmoid,
            output2: OutputSquashing::Sigmoid,
        }
    }

    /// Five down- and upsampling layers for image-to-image translation.
    pub fn translation_images(shape: Vec<usize>) -> Self {
        Self {
            x1_shape: shape.clone(),
            x2_shape: shape,
            backbone: Backbone::Conv {
                encoder_channels: vec![32, 64, 128, 256, 256],
                decoder_channels: vec![256, 256, 128, 64, 32],
            },
            activation: Activation::Relu,
            normalization: Normalization::BatchNorm,
            output1: OutputSquashing::Sigmoid,
            output2: OutputSquashing::Sigmoid,
        }
    }

    pub fn dense(x1_dim: usize, x2_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            x1_shape: vec![x1_dim],
            x2_shape: vec![x2_dim],
            backbone: Backbone::Dense { hidden },
            activation: Activation::Tanh,
            normalization: Normalization::None,
            output1: OutputSquashing::Linear,
            output2: OutputSquashing::Linear,
        }
    }

    pub fn encoder(&self, input: &[usize], code: usize) -> Result<Network> {
        let mut layers = Vec::new();
        match &self.backbone {
            Backbone::Dense { hidden } => {
                for &h in hidden {
                    layers.push(Layer::Dense { outputs: h });
                    self.push_norm_act(&mut layers);
                }
            }
            Backbone::Conv { encoder_channels, .. } => {
                if input.len() != 3 {
                    return Err(Error::InvalidArgument(format!(
                        "convolutional backbone needs image inputs, got shape {input:?}"
                    )));
                }
                for &c in encoder_channels {
                    layers.push(Layer::Conv2d { channels: c, kernel: 3, stride: 2, pad: 1 });
                    self.push_norm_act(&mut layers);
                }
                let probe = Network::new(input.to_vec(), layers.clone())?;
                layers.push(Layer::Reshape(vec![probe.output_shape().iter().product()]));
            }
        }
        layers.push(Layer::Dense { outputs: code });
        Network::new(input.to_vec(), layers)
    }

    pub fn decoder(&self, code: usize, output: &[usize], squash: OutputSquashing) -> Result<Network> {
        let mut layers = Vec::new();
        match &self.backbone {
            Backbone::Dense { hidden } => {
                for &h in hidden.iter().rev() {
                    layers.push(Layer::Dense { outputs: h });
                    self.push_norm_act(&mut layers);
                }
                layers.push(Layer::Dense { outputs: output.iter().product() });
            }
            Backbone::Conv { decoder_channels, .. } => {
                let &[channels, height, width] = output else {
                    return Err(Error::InvalidArgument(format!(
                        "convolutional backbone needs image outputs, got shape {output:?}"
                    )));
                };
                if decoder_channels.is_empty() {
                    return Err(Error::InvalidArgument("decoder needs at least one upsampling layer".into()));
                }
                let hs = upsample_sizes(height, decoder_channels.len());
                let ws = upsample_sizes(width, decoder_channels.len());
                layers.push(Layer::Dense { outputs: decoder_channels[0] * hs[0] * ws[0] });
                layers.push(Layer::Reshape(vec![decoder_channels[0], hs[0], ws[0]]));
                self.push_norm_act(&mut layers);
                for i in 0..decoder_channels.len() {
                    let last = i + 1 == decoder_channels.len();
                    let next = if last { channels } else { decoder_channels[i + 1] };
                    let (kernel, pad) = upsample_kernel(hs[i], hs[i + 1])?;
                    if upsample_kernel(ws[i], ws[i + 1])? != (kernel, pad) {
                        return Err(Error::InvalidArgument(format!(
                            "non-square upsampling for output {output:?}"
                        )));
                    }
                    layers.push(Layer::ConvTranspose2d { channels: next, kernel, stride: 2, pad });
                    if !last {
                        self.push_norm_act(&mut layers);
                    }
                }
            }
        }
        if squash == OutputSquashing::Sigmoid {
            layers.push(Layer::Act(Activation::Sigmoid));
        }
        let net = Network::new(vec![code], layers)?;
        ensure_dim(
            "decoder output size",
            output.iter().product(),
            net.output_shape().iter().product(),
        )?;
        Ok(net)
    }

    fn push_norm_act(&self, layers: &mut Vec<Layer>) {
        if self.normalization == Normalization::BatchNorm {
            layers.push(Layer::BatchNorm);
        }
        layers.push(Layer::Act(self.activation));
    }
}

/// Spatial sizes from the decoder seed up to `target`, halving (rounding
/// up) once per upsampling layer.
fn upsample_sizes(target: usize, layers: usize) -> Vec<usize> {
    let mut sizes = vec![target];
    for _ in 0..layers {
        let s = *sizes.last().unwrap();
        sizes.push(s.div_ceil(2));
    }
    sizes.reverse();
    sizes
}

/// Kernel and padding of a stride-2 transposed convolution taking `a` to `b`.
fn upsample_kernel(a: usize, b: usize) -> Result<(usize, usize)> {
    match b as isize - 2 * a as isize {
        -1 => Ok((3, 1)),
        0 => Ok((4, 1)),
        1 => Ok((3, 0)),
        _ => Err(Error::InvalidArgument(format!("cannot upsample {a} to {b} with stride 2"))),
    }
}

/// Forward-only access to the four maps. Implemented by [`PairedModel`]
/// and by hand-written stubs in tests.
pub trait PairedMaps {
    fn split(&self) -> LatentSplit;
    /// Returns `(z1, z2)` concatenated, one row per sample.
    fn encode1(&self, x1: &Batch) -> Result<Batch>;
    /// Returns `(z2, z3)` concatenated.
    fn encode2(&self, x2: &Batch) -> Result<Batch>;
    /// Decodes concatenated `(z1, z2)` rows.
    fn decode1(&self, code: &Batch) -> Result<Batch>;
    /// Decodes concatenated `(z2, z3)` rows.
    fn decode2(&self, code: &Batch) -> Result<Batch>;

    /// `(z1, z2)` as separate blocks.
    fn encode1_blocks(&self, x1: &Batch) -> Result<(Batch, Batch)> {
        let s = self.split();
        let c = self.encode1(x1)?;
        Ok((c.columns(0..s.d1)?, c.columns(s.d1..s.first_width())?))
    }

    /// `(z2, z3)` as separate blocks.
    fn encode2_blocks(&self, x2: &Batch) -> Result<(Batch, Batch)> {
        let s = self.split();
        let c = self.encode2(x2)?;
        Ok((c.columns(0..s.d2)?, c.columns(s.d2..s.second_width())?))
    }

    fn decode1_blocks(&self, z1: &Batch, z2: &Batch) -> Result<Batch> {
        let s = self.split();
        ensure_dim("z1 block", s.d1, z1.sample_len())?;
        ensure_dim("z2 block", s.d2, z2.sample_len())?;
        self.decode1(&Batch::hconcat(&[z1, z2])?)
    }

    fn decode2_blocks(&self, z2: &Batch, z3: &Batch) -> Result<Batch> {
        let s = self.split();
        ensure_dim("z2 block", s.d2, z2.sample_len())?;
        ensure_dim("z3 block", s.d3, z3.sample_len())?;
        self.decode2(&Batch::hconcat(&[z2, z3])?)
    }

    /// `D1(z1, E2(x2)_z2)`.
    fn cross_reconstruct_x1(&self, z1: &Batch, x2: &Batch) -> Result<Batch> {
        let (z2, _) = self.encode2_blocks(x2)?;
        self.decode1_blocks(z1, &z2)
    }

    /// `D2(E1(x1)_z2, z3)`.
    fn cross_reconstruct_x2(&self, x1: &Batch, z3: &Batch) -> Result<Batch> {
        let (_, z2) = self.encode1_blocks(x1)?;
        self.decode2_blocks(&z2, z3)
    }
}

/// Which of the four networks a slice of `theta` belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    E1,
    E2,
    D1,
    D2,
}

pub const PARTS: [Part; 4] = [Part::E1, Part::E2, Part::D1, Part::D2];

#[derive(Debug, Clone)]
pub struct PairedModel {
    arch: ArchitectureSpec,
    split: LatentSplit,
    nets: [Network; 4],
    param_offsets: [usize; 5],
    buffer_offsets: [usize; 5],
    theta: Vec<f64>,
    buffers: Vec<f64>,
}

impl PairedModel {
    /// Builds the networks and initializes `theta` from `seed`.
    pub fn new(arch: ArchitectureSpec, split: LatentSplit, seed: u64) -> Result<Self> {
        let mut model = Self::uninitialized(arch, split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for part in PARTS {
            let i = part as usize;
            let p = model.param_offsets[i]..model.param_offsets[i + 1];
            let b = model.buffer_offsets[i]..model.buffer_offsets[i + 1];
            model.nets[i].init(&mut model.theta[p], &mut model.buffers[b], &mut rng);
        }
        Ok(model)
    }

    /// Builds the networks with zeroed parameters, for loading.
    pub fn uninitialized(arch: ArchitectureSpec, split: LatentSplit) -> Result<Self> {
        split.validate()?;
        let nets = [
            arch.encoder(&arch.x1_shape, split.first_width())?,
            arch.encoder(&arch.x2_shape, split.second_width())?,
            arch.decoder(split.first_width(), &arch.x1_shape, arch.output1)?,
            arch.decoder(split.second_width(), &arch.x2_shape, arch.output2)?,
        ];
        let mut param_offsets = [0; 5];
        let mut buffer_offsets = [0; 5];
        for (i, net) in nets.iter().enumerate() {
            param_offsets[i + 1] = param_offsets[i] + net.n_params();
            buffer_offsets[i + 1] = buffer_offsets[i] + net.n_buffers();
        }
        Ok(Self {
            arch,
            split,
            nets,
            theta: vec![0.0; param_offsets[4]],
            buffers: vec![0.0; buffer_offsets[4]],
            param_offsets,
            buffer_offsets,
        })
    }

    pub fn architecture(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> &[f64] {
        &self.buffers
    }

    pub fn set_state(&mut self, theta: Vec<f64>, buffers: Vec<f64>) -> Result<()> {
        ensure_dim("theta length", self.theta.len(), theta.len())?;
        ensure_dim("buffer length", self.buffers.len(), buffers.len())?;
        self.theta = theta;
        self.buffers = buffers;
        Ok(())
    }

    pub fn network(&self, part: Part) -> &Network {
        &self.nets[part as usize]
    }

    pub fn param_range(&self, part: Part) -> std::ops::Range<usize> {
        let i = part as usize;
        self.param_offsets[i]..self.param_offsets[i + 1]
    }

    fn buffer_range(&self, part: Part) -> std::ops::Range<usize> {
        let i = part as usize;
        self.buffer_offsets[i]..self.buffer_offsets[i + 1]
    }

    fn input_shape(&self, part: Part) -> Vec<usize> {
        match part {
            Part::E1 => self.arch.x1_shape.clone(),
            Part::E2 => self.arch.x2_shape.clone(),
            Part::D1 => vec![self.split.first_width()],
            Part::D2 => vec![self.split.second_width()],
        }
    }

    fn output_shape(&self, part: Part) -> Vec<usize> {
        match part {
            Part::E1 => vec![self.split.first_width()],
            Part::E2 => vec![self.split.second_width()],
            Part::D1 => self.arch.x1_shape.clone(),
            Part::D2 => self.arch.x2_shape.clone(),
        }
    }

    fn check_input(&self, part: Part, x: &Batch) -> Result<()> {
        let expected = self.input_shape(part);
        if x.shape() != expected.as_slice() && x.sample_len() != expected.iter().product::<usize>() {
            return Err(Error::DimensionMismatch {
                what: "model input shape",
                expected: expected.iter().product(),
                got: x.sample_len(),
            });
        }
        if x.n() == 0 {
            return Err(Error::Empty("model input batch"));
        }
        Ok(())
    }

    /// Inference-mode evaluation of one network.
    pub fn apply(&self, part: Part, x: &Batch) -> Result<Batch> {
        self.check_input(part, x)?;
        let net = self.network(part);
        let y = net.infer(
            &self.theta[self.param_range(part)],
            &self.buffers[self.buffer_range(part)],
            x,
        )?;
        y.reshape(self.output_shape(part))
    }

    /// Recorded evaluation for backpropagation.
    pub fn forward(&self, part: Part, x: &Batch, mode: Mode) -> Result<(Batch, Tape)> {
        self.check_input(part, x)?;
        let (y, tape) = self.network(part).forward(
            &self.theta[self.param_range(part)],
            &self.buffers[self.buffer_range(part)],
            x,
            mode,
        )?;
        Ok((y.reshape(self.output_shape(part))?, tape))
    }

    /// Backpropagates through one recorded evaluation, accumulating into the
    /// matching slice of `grad` (a full-length theta gradient).
    pub fn backward(&self, part: Part, tape: &Tape, grad_out: &Batch, grad: &mut [f64]) -> Result<Batch> {
        let range = self.param_range(part);
        self.network(part)
            .backward(&self.theta[range.clone()], tape, grad_out, &mut grad[range])
    }

    pub fn update_running_stats(&mut self, part: Part, tape: &Tape) {
        let range = self.buffer_range(part);
        self.nets[part as usize].update_running_stats(&mut self.buffers[range], tape);
    }
}

impl PairedMaps for PairedModel {
    fn split(&self) -> LatentSplit {
        self.split
    }

    fn encode1(&self, x1: &Batch) -> Result<Batch> {
        self.apply(Part::E1, x1)
    }

    fn encode2(&self, x2: &Batch) -> Result<Batch> {
        self.apply(Part::E2, x2)
    }

    fn decode1(&self, code: &Batch) -> Result<Batch> {
        self.apply(Part::D1, code)
    }

    fn decode2(&self, code: &Batch) -> Result<Batch> {
        self.apply(Part::D2, code)
    }
}
