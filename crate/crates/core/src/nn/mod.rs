//! Minimal feed-forward networks with hand-written reverse mode.
//!
//! A [`Network`] is a layer list plus the shape bookkeeping; it owns no
//! numbers. Parameters and batch-norm running statistics live in flat
//! slices handed in by the caller, so a model can keep all of them in one
//! contiguous `theta`.

mod adam;
mod conv;
mod gemm;

pub use adam::Adam;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::Batch;
use conv::Geometry;
use gemm::gemm;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "layer")]
pub enum Layer {
    Dense { outputs: usize },
    Conv2d { channels: usize, kernel: usize, stride: usize, pad: usize },
    ConvTranspose2d { channels: usize, kernel: usize, stride: usize, pad: usize },
    BatchNorm,
    Act(Activation),
    Reshape(Vec<usize>),
}

/// Batch norm uses batch statistics in `Train` and running ones in `Inference`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Batch),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        count: usize,
        train: bool,
    },
    Output(Batch),
    Nothing,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
    param_offsets: Vec<usize>,
    buffer_offsets: Vec<usize>,
    n_params: usize,
    n_buffers: usize,
}

fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::InvalidArgument(format!(
            "{what} needs a (channels, height, width) input, got {shape:?}"
        ))),
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut param_offsets = Vec::with_capacity(layers.len());
        let mut buffer_offsets = Vec::with_capacity(layers.len());
        let (mut n_params, mut n_buffers) = (0, 0);
        for layer in &layers {
            let shape = shapes.last().unwrap().clone();
            let len: usize = shape.iter().product();
            param_offsets.push(n_params);
            buffer_offsets.push(n_buffers);
            let out = match layer {
                Layer::Dense { outputs } => {
                    n_params += outputs * len + outputs;
                    vec![*outputs]
                }
                Layer::Conv2d { channels, kernel, stride, pad } => {
                    let (c, h, w) = image_dims(&shape, "conv2d")?;
                    if h + 2 * pad < *kernel || w + 2 * pad < *kernel || *stride == 0 {
                        return Err(Error::InvalidArgument("conv2d kernel larger than input".into()));
                    }
                    let g = Geometry { channels: c, height: h, width: w, kernel: *kernel, stride: *stride, pad: *pad };
                    n_params += channels * g.patch_len() + channels;
                    vec![*channels, g.out_height(), g.out_width()]
                }
                Layer::ConvTranspose2d { channels, kernel, stride, pad } => {
                    let (c, h, w) = image_dims(&shape, "conv_transpose2d")?;
                    let oh = ((h - 1) * stride + kernel).checked_sub(2 * pad);
                    let ow = ((w - 1) * stride + kernel).checked_sub(2 * pad);
                    let (oh, ow) = oh.zip(ow).filter(|(a, b)| *a > 0 && *b > 0).ok_or_else(|| {
                        Error::InvalidArgument("conv_transpose2d padding too large".into())
                    })?;
                    n_params += c * channels * kernel * kernel + channels;
                    vec![*channels, oh, ow]
                }
                Layer::BatchNorm => {
                    let c = shape[0];
                    n_params += 2 * c;
                    n_buffers += 2 * c;
                    shape
                }
                Layer::Act(_) => shape,
                Layer::Reshape(target) => {
                    ensure_dim("reshape", len, target.iter().product())?;
                    target.clone()
                }
            };
            shapes.push(out);
        }
        Ok(Self {
            layers,
            shapes,
            param_offsets,
            buffer_offsets,
            n_params,
            n_buffers,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_buffers(&self) -> usize {
        self.n_buffers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn param_range(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.param_offsets.get(i + 1).copied().unwrap_or(self.n_params);
        self.param_offsets[i]..end
    }

    fn buffer_range(&self, i: usize) -> std::ops::Range<usize> {
        let end = self.buffer_offsets.get(i + 1).copied().unwrap_or(self.n_buffers);
        self.buffer_offsets[i]..end
    }

    /// Uniform fan-in scaled weights, zero biases, unit batch-norm scales and
    /// running variances.
    pub fn init(&self, params: &mut [f64], buffers: &mut [f64], rng: &mut impl Rng) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &mut params[self.param_range(i)];
            let input = &self.shapes[i];
            let fan_in = match layer {
                Layer::Dense { .. } => input.iter().product::<usize>(),
                Layer::Conv2d { kernel, .. } => input[0] * kernel * kernel,
                Layer::ConvTranspose2d { kernel, stride, .. } => {
                    (input[0] * kernel * kernel / (stride * stride)).max(1)
                }
                Layer::BatchNorm => {
                    let c = input[0];
                    p[..c].fill(1.0);
                    p[c..].fill(0.0);
                    let b = &mut buffers[self.buffer_range(i)];
                    b[..c].fill(0.0);
                    b[c..].fill(1.0);
                    continue;
                }
                _ => continue,
            };
            let n_bias = self.shapes[i + 1][0];
            let n_weights = p.len() - n_bias;
            let bound = (3.0 / fan_in as f64).sqrt();
            for w in &mut p[..n_weights] {
                *w = rng.gen_range(-bound..bound);
            }
            p[n_weights..].fill(0.0);
        }
    }

    /// Forward pass without recording intermediates.
    pub fn infer(&self, params: &[f64], buffers: &[f64], x: &Batch) -> Result<Batch> {
        Ok(self.run(params, buffers, x, Mode::Inference, false)?.0)
    }

    pub fn forward(
        &self,
        params: &[f64],
        buffers: &[f64],
        x: &Batch,
        mode: Mode,
    ) -> Result<(Batch, Tape)> {
        self.run(params, buffers, x, mode, true)
    }

    fn run(
        &self,
        params: &[f64],
        buffers: &[f64],
        x: &Batch,
        mode: Mode,
        record: bool,
    ) -> Result<(Batch, Tape)> {
        ensure_dim("network param slice", self.n_params, params.len())?;
        ensure_dim("network buffer slice", self.n_buffers, buffers.len())?;
        ensure_dim(
            "network input size",
            self.shapes[0].iter().product(),
            x.sample_len(),
        )?;
        let mut h = x.clone().reshape(self.shapes[0].clone())?;
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &params[self.param_range(i)];
            let out_shape = self.shapes[i + 1].clone();
            let (out, cache) = match layer {
                Layer::Dense { outputs } => (dense_forward(p, &h, *outputs)?, Cache::Input(h)),
                Layer::Conv2d { channels, kernel, stride, pad } => {
                    let g = self.geometry(i, *kernel, *stride, *pad);
                    (conv_forward(p, &h, &g, *channels, out_shape)?, Cache::Input(h))
                }
                Layer::ConvTranspose2d { channels, kernel, stride, pad } => {
                    let g = self.transposed_geometry(i, *channels, *kernel, *stride, *pad);
                    (conv_t_forward(p, &h, &g, out_shape)?, Cache::Input(h))
                }
                Layer::BatchNorm => {
                    let b = &buffers[self.buffer_range(i)];
                    batch_norm_forward(p, b, &h, mode)?
                }
                Layer::Act(a) => {
                    let mut out = h;
                    for v in out.data_mut() {
                        *v = a.apply(*v);
                    }
                    let cache = if record { Cache::Output(out.clone()) } else { Cache::Nothing };
                    (out, cache)
                }
                Layer::Reshape(shape) => (h.reshape(shape.clone())?, Cache::Nothing),
            };
            if record {
                caches.push(cache);
            }
            h = out;
        }
        Ok((h, Tape { caches }))
    }

    fn geometry(&self, i: usize, kernel: usize, stride: usize, pad: usize) -> Geometry {
        let s = &self.shapes[i];
        Geometry { channels: s[0], height: s[1], width: s[2], kernel, stride, pad }
    }

    /// Geometry of the equivalent forward convolution, seen from the output.
    fn transposed_geometry(&self, i: usize, channels: usize, kernel: usize, stride: usize, pad: usize) -> Geometry {
        let s = &self.shapes[i + 1];
        debug_assert_eq!(s[0], channels);
        Geometry { channels, height: s[1], width: s[2], kernel, stride, pad }
    }

    /// Backpropagates `grad_out`, accumulating into `grad_params` and
    /// returning the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        grad_out: &Batch,
        grad_params: &mut [f64],
    ) -> Result<Batch> {
        ensure_dim("network grad slice", self.n_params, grad_params.len())?;
        ensure_dim("tape length", self.layers.len(), tape.caches.len())?;
        let mut g = grad_out.clone().reshape(self.output_shape().to_vec())?;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let range = self.param_range(i);
            let p = &params[range.clone()];
            let gp = &mut grad_params[range];
            let in_shape = self.shapes[i].clone();
            g = match (layer, &tape.caches[i]) {
                (Layer::Dense { outputs }, Cache::Input(x)) => dense_backward(p, x, &g, *outputs, gp)?,
                (Layer::Conv2d { channels, kernel, stride, pad }, Cache::Input(x)) => {
                    let geo = self.geometry(i, *kernel, *stride, *pad);
                    conv_backward(p, x, &g, &geo, *channels, gp)?
                }
                (Layer::ConvTranspose2d { channels, kernel, stride, pad }, Cache::Input(x)) => {
                    let geo = self.transposed_geometry(i, *channels, *kernel, *stride, *pad);
                    conv_t_backward(p, x, &g, &geo, gp)?
                }
                (Layer::BatchNorm, cache @ Cache::Norm { .. }) => batch_norm_backward(p, cache, &g, gp)?,
                (Layer::Act(a), Cache::Output(y)) => {
                    let mut out = g;
                    for (d, yv) in out.data_mut().iter_mut().zip(y.data()) {
                        *d *= a.derivative(*yv);
                    }
                    out
                }
                (Layer::Reshape(_), _) => g.reshape(in_shape.clone())?,
                _ => return Err(Error::InvalidArgument("tape does not match network".into())),
            };
            g = g.reshape(in_shape)?;
        }
        Ok(g)
    }

    /// Folds the batch statistics recorded in `tape` into the running ones.
    pub fn update_running_stats(&self, buffers: &mut [f64], tape: &Tape) {
        for (i, cache) in tape.caches.iter().enumerate() {
            if let Cache::Norm { batch_mean, batch_var, count, train: true, .. } = cache {
                let b = &mut buffers[self.buffer_range(i)];
                let c = batch_mean.len();
                let unbias = if *count > 1 { *count as f64 / (*count as f64 - 1.0) } else { 1.0 };
                for k in 0..c {
                    b[k] = (1.0 - BN_MOMENTUM) * b[k] + BN_MOMENTUM * batch_mean[k];
                    b[c + k] = (1.0 - BN_MOMENTUM) * b[c + k] + BN_MOMENTUM * batch_var[k] * unbias;
                }
            }
        }
    }
}

fn dense_forward(p: &[f64], x: &Batch, outputs: usize) -> Result<Batch> {
    let (n, d) = (x.n(), x.sample_len());
    let (w, b) = p.split_at(outputs * d);
    let mut y = Batch::zeros(n, vec![outputs]);
    for row in y.data_mut().chunks_mut(outputs.max(1)) {
        row.copy_from_slice(b);
    }
    // Y = X W^T + b
    gemm(n, d, outputs, 1.0, x.data(), (d, 1), w, (1, d), 1.0, y.data_mut(), (outputs, 1));
    Ok(y)
}

fn dense_backward(p: &[f64], x: &Batch, g: &Batch, outputs: usize, gp: &mut [f64]) -> Result<Batch> {
    let (n, d) = (x.n(), x.sample_len());
    let (w, _) = p.split_at(outputs * d);
    let (gw, gb) = gp.split_at_mut(outputs * d);
    gemm(outputs, n, d, 1.0, g.data(), (1, outputs), x.data(), (d, 1), 1.0, gw, (d, 1));
    for row in g.rows() {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut gx = Batch::zeros(n, x.shape().to_vec());
    gemm(n, outputs, d, 1.0, g.data(), (outputs, 1), w, (d, 1), 0.0, gx.data_mut(), (d, 1));
    Ok(gx)
}

fn conv_forward(p: &[f64], x: &Batch, geo: &Geometry, cout: usize, out_shape: Vec<usize>) -> Result<Batch> {
    let (k, pix) = (geo.patch_len(), geo.out_pixels());
    let (w, b) = p.split_at(cout * k);
    let mut y = Batch::zeros(x.n(), out_shape);
    let mut cols = vec![0.0; k * pix];
    for s in 0..x.n() {
        geo.im2col(x.sample(s), &mut cols);
        let ys = y.sample_mut(s);
        for (c, chunk) in ys.chunks_mut(pix).enumerate() {
            chunk.fill(b[c]);
        }
        gemm(cout, k, pix, 1.0, w, (k, 1), &cols, (pix, 1), 1.0, ys, (pix, 1));
    }
    Ok(y)
}

fn conv_backward(p: &[f64], x: &Batch, g: &Batch, geo: &Geometry, cout: usize, gp: &mut [f64]) -> Result<Batch> {
    let (k, pix) = (geo.patch_len(), geo.out_pixels());
    let (w, _) = p.split_at(cout * k);
    let (gw, gb) = gp.split_at_mut(cout * k);
    let mut gx = Batch::zeros(x.n(), x.shape().to_vec());
    let mut cols = vec![0.0; k * pix];
    let mut gcols = vec![0.0; k * pix];
    for s in 0..x.n() {
        let gs = g.sample(s);
        geo.im2col(x.sample(s), &mut cols);
        // dW += dY cols^T
        gemm(cout, pix, k, 1.0, gs, (pix, 1), &cols, (1, pix), 1.0, gw, (k, 1));
        for (c, chunk) in gs.chunks(pix).enumerate() {
            gb[c] += chunk.iter().sum::<f64>();
        }
        gemm(k, cout, pix, 1.0, w, (1, k), gs, (pix, 1), 0.0, &mut gcols, (pix, 1));
        geo.col2im(&gcols, gx.sample_mut(s));
    }
    Ok(gx)
}

/// `geo` describes the output image; the input has `pixels == geo.out_pixels()`.
fn conv_t_forward(p: &[f64], x: &Batch, geo: &Geometry, out_shape: Vec<usize>) -> Result<Batch> {
    let cin = x.shape()[0];
    let (k, pix) = (geo.patch_len(), geo.out_pixels());
    ensure_dim("transposed conv input pixels", pix, x.sample_len() / cin)?;
    let (w, b) = p.split_at(cin * k);
    let mut y = Batch::zeros(x.n(), out_shape);
    let mut cols = vec![0.0; k * pix];
    let plane = geo.height * geo.width;
    for s in 0..x.n() {
        // cols = W^T X with W stored as (cin, cout * k * k)
        gemm(k, cin, pix, 1.0, w, (1, k), x.sample(s), (pix, 1), 0.0, &mut cols, (pix, 1));
        let ys = y.sample_mut(s);
        geo.col2im(&cols, ys);
        for (c, chunk) in ys.chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += b[c];
            }
        }
    }
    Ok(y)
}

fn conv_t_backward(p: &[f64], x: &Batch, g: &Batch, geo: &Geometry, gp: &mut [f64]) -> Result<Batch> {
    let cin = x.shape()[0];
    let (k, pix) = (geo.patch_len(), geo.out_pixels());
    let (w, _) = p.split_at(cin * k);
    let (gw, gb) = gp.split_at_mut(cin * k);
    let plane = geo.height * geo.width;
    let mut gx = Batch::zeros(x.n(), x.shape().to_vec());
    let mut gcols = vec![0.0; k * pix];
    for s in 0..x.n() {
        let gs = g.sample(s);
        for (c, chunk) in gs.chunks(plane).enumerate() {
            gb[c] += chunk.iter().sum::<f64>();
        }
        geo.im2col(gs, &mut gcols);
        // dX = W gcols, dW += X gcols^T
        gemm(cin, k, pix, 1.0, w, (k, 1), &gcols, (pix, 1), 0.0, gx.sample_mut(s), (pix, 1));
        gemm(cin, pix, k, 1.0, x.sample(s), (pix, 1), &gcols, (1, pix), 1.0, gw, (k, 1));
    }
    Ok(gx)
}

fn batch_norm_forward(p: &[f64], buffers: &[f64], x: &Batch, mode: Mode) -> Result<(Batch, Cache)> {
    let c = x.shape()[0];
    let spatial = x.sample_len() / c;
    let n = x.n();
    let count = n * spatial;
    let (gamma, beta) = p.split_at(c);
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(
                    "batch norm in training mode needs more than one value per channel".into(),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for (ch, plane) in x.sample(s).chunks(spatial).enumerate() {
                    mean[ch] += plane.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for s in 0..n {
                for (ch, plane) in x.sample(s).chunks(spatial).enumerate() {
                    var[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            (mean, var)
        }
        Mode::Inference => (buffers[..c].to_vec(), buffers[c..].to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.data().to_vec();
    let mut y = Batch::zeros(n, x.shape().to_vec());
    for s in 0..n {
        let off = s * c * spatial;
        for ch in 0..c {
            for q in 0..spatial {
                let idx = off + ch * spatial + q;
                let h = (x.data()[idx] - mean[ch]) * inv_std[ch];
                xhat[idx] = h;
                y.data_mut()[idx] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok((
        y,
        Cache::Norm {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
            train: mode == Mode::Train,
        },
    ))
}

fn batch_norm_backward(p: &[f64], cache: &Cache, g: &Batch, gp: &mut [f64]) -> Result<Batch> {
    let Cache::Norm { xhat, inv_std, count, train, .. } = cache else {
        unreachable!()
    };
    let c = inv_std.len();
    let spatial = g.sample_len() / c;
    let n = g.n();
    let gamma = &p[..c];
    let (g_gamma, g_beta) = gp.split_at_mut(c);
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for s in 0..n {
        let off = s * c * spatial;
        for ch in 0..c {
            for q in 0..spatial {
                let idx = off + ch * spatial + q;
                sum_dy[ch] += g.data()[idx];
                sum_dy_xhat[ch] += g.data()[idx] * xhat[idx];
            }
        }
    }
    for ch in 0..c {
        g_beta[ch] += sum_dy[ch];
        g_gamma[ch] += sum_dy_xhat[ch];
    }
    let mut gx = Batch::zeros(n, g.shape().to_vec());
    let m = *count as f64;
    for s in 0..n {
        let off = s * c * spatial;
        for ch in 0..c {
            for q in 0..spatial {
                let idx = off + ch * spatial + q;
                let dy = g.data()[idx];
                gx.data_mut()[idx] = if *train {
                    gamma[ch] * inv_std[ch] / m
                        * (m * dy - sum_dy[ch] - xhat[idx] * sum_dy_xhat[ch])
                } else {
                    gamma[ch] * inv_std[ch] * dy
                };
            }
        }
    }
    Ok(gx)
}
