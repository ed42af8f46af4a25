//! Layer kinds with forward and backward kernels.
//!
//! A batch is a slice of per-sample tensors. Spatial layers take `[C, H, W]`
//! samples; samples in one batch may differ in width, which is what lets the
//! fully convolutional stream train on blocks of different lengths together.
//! Batch normalization pools its statistics over every position of every
//! sample in the batch.

use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Fraction of the previous running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        depth: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    BatchNorm,
    #[serde(rename = "relu")]
    ReLU,
    /// 2x2 window, stride 2.
    MaxPool,
    MaxOut {
        pieces: usize,
    },
    FullyConnected {
        outputs: usize,
    },
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch normalization uses batch statistics.
    Train,
    /// Batch normalization uses running statistics.
    Infer,
}

/// Trainable parameters and non-trainable buffers of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T> Default for LayerParams<T> {
    fn default() -> Self {
        LayerParams {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }
}

impl<T: Real> LayerParams<T> {
    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            params: self.params.iter().map(Tensor::cast).collect(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }
}

impl LayerSpec {
    /// `depth` output channels, 3x3 kernel, stride 1, "same" padding.
    pub fn conv3(depth: usize) -> Self {
        LayerSpec::Conv {
            depth,
            kernel: [3, 3],
            stride: [1, 1],
            padding: [1, 1],
        }
    }

    /// Unpadded, unit-stride convolution.
    pub fn conv_valid(depth: usize, kh: usize, kw: usize) -> Self {
        LayerSpec::Conv {
            depth,
            kernel: [kh, kw],
            stride: [1, 1],
            padding: [0, 0],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool => "max_pool",
            LayerSpec::MaxOut { .. } => "max_out",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv {
                depth,
                kernel,
                stride,
                ..
            } => {
                if depth == 0 || kernel[0] == 0 || kernel[1] == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "conv depth and kernel must be positive, got depth {depth} kernel {kernel:?}"
                    )));
                }
                if stride[0] == 0 || stride[1] == 0 {
                    return Err(Error::InvalidSpec(format!("conv stride {stride:?} must be >= 1")));
                }
            }
            LayerSpec::MaxOut { pieces } if pieces < 2 => {
                return Err(Error::InvalidSpec(format!(
                    "max-out needs at least 2 pieces, got {pieces}"
                )));
            }
            LayerSpec::FullyConnected { outputs: 0 } => {
                return Err(Error::InvalidSpec("fully connected layer with 0 outputs".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::LayerShape {
            index,
            kind: self.kind_name(),
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv {
                depth,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input).ok_or_else(|| mismatch(vec![0, kernel[0], kernel[1]]))?;
                let ph = h + 2 * padding[0];
                let pw = w + 2 * padding[1];
                if ph < kernel[0] || pw < kernel[1] {
                    return Err(mismatch(vec![c, kernel[0], kernel[1]]));
                }
                Ok(vec![
                    depth,
                    (ph - kernel[0]) / stride[0] + 1,
                    (pw - kernel[1]) / stride[1] + 1,
                ])
            }
            LayerSpec::BatchNorm => {
                spatial(input).ok_or_else(|| mismatch(vec![0, 0, 0]))?;
                Ok(input.to_vec())
            }
            LayerSpec::ReLU => Ok(input.to_vec()),
            LayerSpec::MaxPool => {
                let [c, h, w] = spatial(input).ok_or_else(|| mismatch(vec![0, 2, 2]))?;
                if h < 2 || w < 2 {
                    return Err(mismatch(vec![c, 2, 2]));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::MaxOut { pieces } => {
                let [c, h, w] = spatial(input).ok_or_else(|| mismatch(vec![pieces, 0, 0]))?;
                if c % pieces != 0 {
                    return Err(mismatch(vec![c.div_ceil(pieces) * pieces, h, w]));
                }
                Ok(vec![c / pieces, h, w])
            }
            LayerSpec::FullyConnected { outputs } => Ok(vec![outputs]),
            LayerSpec::Softmax => match input.len() {
                1 | 2 => Ok(input.to_vec()),
                _ => Err(mismatch(vec![0, 0])),
            },
        }
    }

    /// Named trainable parameter shapes for a per-sample input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { depth, kernel, .. } => vec![
                ("weight", vec![depth, input[0], kernel[0], kernel[1]]),
                ("bias", vec![depth]),
            ],
            LayerSpec::BatchNorm => vec![("gamma", vec![input[0]]), ("beta", vec![input[0]])],
            LayerSpec::FullyConnected { outputs } => vec![
                ("weight", vec![outputs, input.iter().product()]),
                ("bias", vec![outputs]),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffer_shapes(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            LayerSpec::BatchNorm => vec![
                ("running_mean", vec![input[0]]),
                ("running_var", vec![input[0]]),
            ],
            _ => Vec::new(),
        }
    }
}

fn spatial(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

fn sample_spatial(index: usize, layer: &LayerSpec, t: &Tensor<impl Real>) -> Result<[usize; 3]> {
    spatial(t.shape()).ok_or_else(|| Error::LayerShape {
        index,
        kind: layer.kind_name(),
        expected: vec![0, 0, 0],
        actual: t.shape().to_vec(),
    })
}

fn check_params<T>(index: usize, layer: &LayerSpec, p: &LayerParams<T>, n: usize, b: usize) -> Result<()> {
    if p.params.len() != n || p.buffers.len() != b {
        return Err(Error::InvalidSpec(format!(
            "layer {index} ({}): expected {n} parameter and {b} buffer tensors, got {} and {}",
            layer.kind_name(),
            p.params.len(),
            p.buffers.len()
        )));
    }
    Ok(())
}

/// Feeds the branch every nonsmooth unit takes on `input` (ReLU side, max-pool
/// and MaxOut winners, with the tie rules of [`backward_layer`]) into `h`.
/// Smooth layers feed nothing.
pub fn hash_branches<T: Real>(index: usize, layer: &LayerSpec, input: &[Tensor<T>], h: &mut impl Hasher) -> Result<()> {
    for x in input {
        let src = x.data();
        match *layer {
            LayerSpec::ReLU => src.iter().for_each(|v| h.write_u8(u8::from(*v > T::zero()))),
            LayerSpec::MaxPool => {
                let [c, hh, w] = sample_spatial(index, layer, x)?;
                for k in 0..c {
                    let base = k * hh * w;
                    for oy in 0..hh / 2 {
                        for ox in 0..w / 2 {
                            let cands = [
                                base + 2 * oy * w + 2 * ox,
                                base + 2 * oy * w + 2 * ox + 1,
                                base + (2 * oy + 1) * w + 2 * ox,
                                base + (2 * oy + 1) * w + 2 * ox + 1,
                            ];
                            let mut best = 0;
                            for (j, &i) in cands.iter().enumerate().skip(1) {
                                if src[i] > src[cands[best]] {
                                    best = j;
                                }
                            }
                            h.write_u8(best as u8);
                        }
                    }
                }
            }
            LayerSpec::MaxOut { pieces } => {
                let [c, hh, w] = sample_spatial(index, layer, x)?;
                let hw = hh * w;
                for g in 0..c / pieces {
                    let base = g * pieces * hw;
                    for i in 0..hw {
                        let mut best = 0;
                        for p in 1..pieces {
                            if src[base + p * hw + i] > src[base + best * hw + i] {
                                best = p;
                            }
                        }
                        h.write_usize(best);
                    }
                }
            }
            _ => return Ok(()),
        }
    }
    Ok(())
}

/// Forward pass of one layer over a batch.
pub fn forward_layer<T: Real>(
    index: usize,
    layer: &LayerSpec,
    params: &LayerParams<T>,
    input: &[Tensor<T>],
    mode: Mode,
) -> Result<Vec<Tensor<T>>> {
    match *layer {
        LayerSpec::Conv {
            kernel,
            stride,
            padding,
            ..
        } => {
            check_params(index, layer, params, 2, 0)?;
            let geom_for = |x: &Tensor<T>| -> Result<ConvGeom> {
                let [c, h, w] = sample_spatial(index, layer, x)?;
                let wshape = params.params[0].shape();
                let out = layer.output_shape(index, x.shape())?;
                if wshape[1] != c {
                    return Err(Error::LayerShape {
                        index,
                        kind: layer.kind_name(),
                        expected: vec![wshape[1], h, w],
                        actual: x.shape().to_vec(),
                    });
                }
                Ok(ConvGeom {
                    c,
                    h,
                    w,
                    d: wshape[0],
                    kh: kernel[0],
                    kw: kernel[1],
                    sh: stride[0],
                    sw: stride[1],
                    ph: padding[0],
                    pw: padding[1],
                    oh: out[1],
                    ow: out[2],
                })
            };
            let mut col = Vec::new();
            input
                .iter()
                .map(|x| {
                    let g = geom_for(x)?;
                    conv_forward(&g, x.data(), params.params[0].data(), params.params[1].data(), &mut col)
                })
                .collect()
        }
        LayerSpec::BatchNorm => {
            check_params(index, layer, params, 2, 2)?;
            let c = check_channels(index, layer, input, params.params[0].len())?;
            let (mean, var) = match mode {
                Mode::Train => batch_stats(input, c),
                Mode::Infer => (
                    params.buffers[0].data().iter().map(|v| v.as_f64()).collect(),
                    params.buffers[1].data().iter().map(|v| v.as_f64()).collect(),
                ),
            };
            let gamma = params.params[0].data();
            let beta = params.params[1].data();
            let scale: Vec<T> = (0..c)
                .map(|k| gamma[k] * T::from_f64(1.0 / (var[k] + BN_EPSILON).sqrt()))
                .collect();
            let shift: Vec<T> = (0..c)
                .map(|k| beta[k] - scale[k] * T::from_f64(mean[k]))
                .collect();
            Ok(input
                .iter()
                .map(|x| {
                    let mut y = x.clone();
                    let hw = x.shape()[1] * x.shape()[2];
                    for (k, chunk) in y.data_mut().chunks_mut(hw).enumerate() {
                        let (s, b) = (scale[k], shift[k]);
                        chunk.iter_mut().for_each(|v| *v = *v * s + b);
                    }
                    y
                })
                .collect())
        }
        LayerSpec::ReLU => Ok(input
            .iter()
            .map(|x| {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
                y
            })
            .collect()),
        LayerSpec::MaxPool => input
            .iter()
            .map(|x| {
                let out_shape = layer.output_shape(index, x.shape())?;
                let [c, h, w] = sample_spatial(index, layer, x)?;
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let src = x.data();
                let mut out = Vec::with_capacity(c * oh * ow);
                for k in 0..c {
                    let plane = &src[k * h * w..(k + 1) * h * w];
                    for oy in 0..oh {
                        let r0 = &plane[2 * oy * w..];
                        let r1 = &plane[(2 * oy + 1) * w..];
                        for ox in 0..ow {
                            let i = 2 * ox;
                            out.push(r0[i].max(r0[i + 1]).max(r1[i].max(r1[i + 1])));
                        }
                    }
                }
                Tensor::from_vec(&out_shape, out)
            })
            .collect(),
        LayerSpec::MaxOut { pieces } => input
            .iter()
            .map(|x| {
                let out_shape = layer.output_shape(index, x.shape())?;
                let hw = out_shape[1] * out_shape[2];
                let src = x.data();
                let mut out = Vec::with_capacity(out_shape[0] * hw);
                for g in 0..out_shape[0] {
                    let base = g * pieces * hw;
                    for i in 0..hw {
                        let mut m = src[base + i];
                        for p in 1..pieces {
                            m = m.max(src[base + p * hw + i]);
                        }
                        out.push(m);
                    }
                }
                Tensor::from_vec(&out_shape, out)
            })
            .collect(),
        LayerSpec::FullyConnected { outputs } => {
            check_params(index, layer, params, 2, 0)?;
            let features = params.params[0].shape()[1];
            let x = stack_flat(index, layer, input, features)?;
            let y = fc_forward(&x, input.len(), features, outputs, params.params[0].data(), params.params[1].data());
            y.chunks(outputs)
                .map(|row| Tensor::from_vec(&[outputs], row.to_vec()))
                .collect()
        }
        LayerSpec::Softmax => input
            .iter()
            .map(|x| {
                layer.output_shape(index, x.shape())?;
                let k = *x.shape().last().unwrap();
                let mut y = x.clone();
                y.data_mut().chunks_mut(k).for_each(softmax_in_place);
                Ok(y)
            })
            .collect(),
    }
}

/// Gradients produced by [`backward_layer`].
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    /// Gradient with respect to the layer input; `None` when not requested.
    pub input: Option<Vec<Tensor<T>>>,
    /// One gradient per trainable parameter tensor, in parameter order.
    pub params: Vec<Tensor<T>>,
}

/// Analytic backward pass of one layer.
///
/// `input` must be the batch the forward pass saw and `mode` the mode it ran
/// in. Setting `want_input` to false skips the input gradient, which saves the
/// most expensive product for a network's first convolution.
pub fn backward_layer<T: Real>(
    index: usize,
    layer: &LayerSpec,
    params: &LayerParams<T>,
    input: &[Tensor<T>],
    upstream: &[Tensor<T>],
    mode: Mode,
    want_input: bool,
) -> Result<LayerGrads<T>> {
    if upstream.len() != input.len() {
        return Err(Error::Shape(format!(
            "layer {index}: upstream batch of {} for input batch of {}",
            upstream.len(),
            input.len()
        )));
    }
    for (x, g) in input.iter().zip(upstream) {
        let expected = layer.output_shape(index, x.shape())?;
        if g.shape() != expected.as_slice() {
            return Err(Error::LayerShape {
                index,
                kind: layer.kind_name(),
                expected,
                actual: g.shape().to_vec(),
            });
        }
    }
    match *layer {
        LayerSpec::Conv {
            kernel,
            stride,
            padding,
            ..
        } => {
            check_params(index, layer, params, 2, 0)?;
            let weight = &params.params[0];
            let mut dw = Tensor::zeros(weight.shape());
            let mut db = Tensor::zeros(params.params[1].shape());
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            let mut dxs = Vec::new();
            for (x, g) in input.iter().zip(upstream) {
                let [c, h, w] = sample_spatial(index, layer, x)?;
                let geom = ConvGeom {
                    c,
                    h,
                    w,
                    d: weight.shape()[0],
                    kh: kernel[0],
                    kw: kernel[1],
                    sh: stride[0],
                    sw: stride[1],
                    ph: padding[0],
                    pw: padding[1],
                    oh: g.shape()[1],
                    ow: g.shape()[2],
                };
                let dx = conv_backward(
                    &geom,
                    x.data(),
                    g.data(),
                    weight.data(),
                    dw.data_mut(),
                    db.data_mut(),
                    want_input,
                    &mut col,
                    &mut dcol,
                );
                if let Some(dx) = dx {
                    dxs.push(Tensor::from_vec(x.shape(), dx)?);
                }
            }
            Ok(LayerGrads {
                input: want_input.then_some(dxs),
                params: vec![dw, db],
            })
        }
        LayerSpec::BatchNorm => {
            check_params(index, layer, params, 2, 2)?;
            let c = check_channels(index, layer, input, params.params[0].len())?;
            let gamma = params.params[0].data();
            let (mean, var) = match mode {
                Mode::Train => batch_stats(input, c),
                Mode::Infer => (
                    params.buffers[0].data().iter().map(|v| v.as_f64()).collect(),
                    params.buffers[1].data().iter().map(|v| v.as_f64()).collect(),
                ),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            // per-channel sums of dy and dy * xhat
            let mut sum_dy = vec![0.0f64; c];
            let mut sum_dy_xhat = vec![0.0f64; c];
            for (x, g) in input.iter().zip(upstream) {
                let hw = x.shape()[1] * x.shape()[2];
                for k in 0..c {
                    let xs = &x.data()[k * hw..(k + 1) * hw];
                    let gs = &g.data()[k * hw..(k + 1) * hw];
                    let (m, s) = (mean[k], inv_std[k]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for (xv, gv) in xs.iter().zip(gs) {
                        let gv = gv.as_f64();
                        a += gv;
                        b += gv * (xv.as_f64() - m) * s;
                    }
                    sum_dy[k] += a;
                    sum_dy_xhat[k] += b;
                }
            }
            let dgamma = Tensor::from_vec(&[c], sum_dy_xhat.iter().map(|&v| T::from_f64(v)).collect())?;
            let dbeta = Tensor::from_vec(&[c], sum_dy.iter().map(|&v| T::from_f64(v)).collect())?;
            let dx = want_input.then(|| {
                let count: usize = input.iter().map(|x| x.shape()[1] * x.shape()[2]).sum();
                let m_inv = 1.0 / count as f64;
                input
                    .iter()
                    .zip(upstream)
                    .map(|(x, g)| {
                        let hw = x.shape()[1] * x.shape()[2];
                        let mut dx = g.clone();
                        for k in 0..c {
                            let gk = gamma[k].as_f64() * inv_std[k];
                            let xs = &x.data()[k * hw..(k + 1) * hw];
                            let ds = &mut dx.data_mut()[k * hw..(k + 1) * hw];
                            match mode {
                                Mode::Train => {
                                    let (m, s) = (mean[k], inv_std[k]);
                                    let mdy = sum_dy[k] * m_inv;
                                    let mdyx = sum_dy_xhat[k] * m_inv;
                                    for (d, xv) in ds.iter_mut().zip(xs) {
                                        let xhat = (xv.as_f64() - m) * s;
                                        *d = T::from_f64(gk * (d.as_f64() - mdy - xhat * mdyx));
                                    }
                                }
                                Mode::Infer => {
                                    let gk = T::from_f64(gk);
                                    ds.iter_mut().for_each(|d| *d *= gk);
                                }
                            }
                        }
                        dx
                    })
                    .collect()
            });
            Ok(LayerGrads {
                input: dx,
                params: vec![dgamma, dbeta],
            })
        }
        LayerSpec::ReLU => Ok(LayerGrads {
            input: want_input.then(|| {
                input
                    .iter()
                    .zip(upstream)
                    .map(|(x, g)| {
                        let mut dx = g.clone();
                        for (d, xv) in dx.data_mut().iter_mut().zip(x.data()) {
                            if *xv <= T::zero() {
                                *d = T::zero();
                            }
                        }
                        dx
                    })
                    .collect()
            }),
            params: Vec::new(),
        }),
        LayerSpec::MaxPool => {
            let dx = if want_input {
                let mut out = Vec::with_capacity(input.len());
                for (x, g) in input.iter().zip(upstream) {
                    let [c, h, w] = sample_spatial(index, layer, x)?;
                    let (oh, ow) = (g.shape()[1], g.shape()[2]);
                    let mut dx = Tensor::zeros(x.shape());
                    let src = x.data();
                    let dst = dx.data_mut();
                    for k in 0..c {
                        let base = k * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                // first maximum in scan order receives the gradient
                                let cands = [
                                    base + 2 * oy * w + 2 * ox,
                                    base + 2 * oy * w + 2 * ox + 1,
                                    base + (2 * oy + 1) * w + 2 * ox,
                                    base + (2 * oy + 1) * w + 2 * ox + 1,
                                ];
                                let mut best = cands[0];
                                for &i in &cands[1..] {
                                    if src[i] > src[best] {
                                        best = i;
                                    }
                                }
                                dst[best] += g.data()[(k * oh + oy) * ow + ox];
                            }
                        }
                    }
                    out.push(dx);
                }
                Some(out)
            } else {
                None
            };
            Ok(LayerGrads {
                input: dx,
                params: Vec::new(),
            })
        }
        LayerSpec::MaxOut { pieces } => {
            let dx = want_input.then(|| {
                input
                    .iter()
                    .zip(upstream)
                    .map(|(x, g)| {
                        let groups = g.shape()[0];
                        let hw = g.shape()[1] * g.shape()[2];
                        let src = x.data();
                        let mut dx = Tensor::zeros(x.shape());
                        for gi in 0..groups {
                            let base = gi * pieces * hw;
                            for i in 0..hw {
                                let mut best = base + i;
                                for p in 1..pieces {
                                    let j = base + p * hw + i;
                                    if src[j] > src[best] {
                                        best = j;
                                    }
                                }
                                dx.data_mut()[best] = g.data()[gi * hw + i];
                            }
                        }
                        dx
                    })
                    .collect()
            });
            Ok(LayerGrads {
                input: dx,
                params: Vec::new(),
            })
        }
        LayerSpec::FullyConnected { outputs } => {
            check_params(index, layer, params, 2, 0)?;
            let weight = &params.params[0];
            let features = weight.shape()[1];
            let batch = input.len();
            let x = stack_flat(index, layer, input, features)?;
            let dy: Vec<T> = upstream.iter().flat_map(|g| g.data().iter().copied()).collect();
            let (dw, db, dx) = fc_backward(&x, &dy, batch, features, outputs, weight.data(), want_input);
            let dx = match dx {
                Some(dx) => Some(
                    dx.chunks(features)
                        .zip(input)
                        .map(|(row, x)| Tensor::from_vec(x.shape(), row.to_vec()))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            Ok(LayerGrads {
                input: dx,
                params: vec![
                    Tensor::from_vec(weight.shape(), dw)?,
                    Tensor::from_vec(&[outputs], db)?,
                ],
            })
        }
        LayerSpec::Softmax => {
            let dx = want_input.then(|| {
                input
                    .iter()
                    .zip(upstream)
                    .map(|(x, g)| {
                        let k = *x.shape().last().unwrap();
                        let mut y = x.clone();
                        y.data_mut().chunks_mut(k).for_each(softmax_in_place);
                        let mut dx = g.clone();
                        for (drow, yrow) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                            let dot: T = drow.iter().zip(yrow).map(|(&d, &y)| d * y).sum();
                            for (d, &yv) in drow.iter_mut().zip(yrow) {
                                *d = yv * (*d - dot);
                            }
                        }
                        dx
                    })
                    .collect()
            });
            Ok(LayerGrads {
                input: dx,
                params: Vec::new(),
            })
        }
    }
}

fn check_channels<T: Real>(index: usize, layer: &LayerSpec, input: &[Tensor<T>], c: usize) -> Result<usize> {
    for x in input {
        let [xc, h, w] = sample_spatial(index, layer, x)?;
        if xc != c {
            return Err(Error::LayerShape {
                index,
                kind: layer.kind_name(),
                expected: vec![c, h, w],
                actual: x.shape().to_vec(),
            });
        }
    }
    Ok(c)
}

/// Per-channel mean and biased variance over every position of every sample.
pub fn batch_stats<T: Real>(input: &[Tensor<T>], c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0f64; c];
    let mut count = 0usize;
    for x in input {
        let hw = x.shape()[1] * x.shape()[2];
        count += hw;
        for (k, chunk) in x.data().chunks(hw).enumerate() {
            sum[k] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; c];
    for x in input {
        let hw = x.shape()[1] * x.shape()[2];
        for (k, chunk) in x.data().chunks(hw).enumerate() {
            let m = mean[k];
            sq[k] += chunk.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
    }
    let var = sq.iter().map(|s| s / count as f64).collect();
    (mean, var)
}

/// Blend batch statistics into a batch-norm layer's running buffers.
pub fn update_running_stats<T: Real>(params: &mut LayerParams<T>, input: &[Tensor<T>]) {
    let c = params.params[0].len();
    let count: usize = input.iter().map(|x| x.shape()[1] * x.shape()[2]).sum();
    let (mean, var) = batch_stats(input, c);
    let unbias = if count > 1 {
        count as f64 / (count - 1) as f64
    } else {
        1.0
    };
    let keep = T::from_f64(BN_MOMENTUM);
    let take = T::from_f64(1.0 - BN_MOMENTUM);
    for (r, m) in params.buffers[0].data_mut().iter_mut().zip(&mean) {
        *r = keep * *r + take * T::from_f64(*m);
    }
    for (r, v) in params.buffers[1].data_mut().iter_mut().zip(&var) {
        *r = keep * *r + take * T::from_f64(v * unbias);
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Softmax cross-entropy summed over rows, with its gradient with respect to
/// the logits. `logits` holds `targets.len()` rows of `classes` entries.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], classes: usize, targets: &[usize]) -> (f64, Vec<T>) {
    assert_eq!(logits.len(), classes * targets.len(), "logit rows do not match targets");
    let mut grad = logits.to_vec();
    let mut loss = 0.0;
    for (row, &t) in grad.chunks_mut(classes).zip(targets) {
        softmax_in_place(row);
        loss -= row[t].as_f64().max(1e-300).ln();
        row[t] -= T::one();
    }
    (loss, grad)
}

fn stack_flat<T: Real>(index: usize, layer: &LayerSpec, input: &[Tensor<T>], features: usize) -> Result<Vec<T>> {
    let mut x = Vec::with_capacity(input.len() * features);
    for t in input {
        if t.len() != features {
            return Err(Error::LayerShape {
                index,
                kind: layer.kind_name(),
                expected: vec![features],
                actual: t.shape().to_vec(),
            });
        }
        x.extend_from_slice(t.data());
    }
    Ok(x)
}

/// `y[b, o] = sum_f x[b, f] * w[o, f] + bias[o]`.
pub fn fc_forward<T: Real>(x: &[T], batch: usize, features: usize, outputs: usize, w: &[T], bias: &[T]) -> Vec<T> {
    let mut y: Vec<T> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
    T::gemm(
        batch,
        features,
        outputs,
        T::one(),
        x,
        features as isize,
        1,
        w,
        1,
        features as isize,
        T::one(),
        &mut y,
        outputs as isize,
        1,
    );
    y
}

/// Returns `(d_weight, d_bias, d_input)` for [`fc_forward`].
pub fn fc_backward<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    features: usize,
    outputs: usize,
    w: &[T],
    want_input: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let mut dw = vec![T::zero(); outputs * features];
    T::gemm(
        outputs,
        batch,
        features,
        T::one(),
        dy,
        1,
        outputs as isize,
        x,
        features as isize,
        1,
        T::zero(),
        &mut dw,
        features as isize,
        1,
    );
    let mut db = vec![T::zero(); outputs];
    for row in dy.chunks(outputs) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let dx = want_input.then(|| {
        let mut dx = vec![T::zero(); batch * features];
        T::gemm(
            batch,
            outputs,
            features,
            T::one(),
            dy,
            outputs as isize,
            1,
            w,
            features as isize,
            1,
            T::zero(),
            &mut dx,
            features as isize,
            1,
        );
        dx
    });
    (dw, db, dx)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox * sw + kj - pw` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pw {
            0
        } else {
            (self.pw - kj).div_ceil(self.sw)
        };
        // need ox * sw + kj - pw <= w - 1
        let limit = self.w + self.pw;
        let hi = if limit > kj {
            ((limit - 1 - kj) / self.sw + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut Vec<T>) {
    let p = g.positions();
    col.clear();
    col.resize(g.rows() * p, T::zero());
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let ix0 = lo * g.sw + kj - g.pw;
                    if g.sw == 1 {
                        out[lo..hi].copy_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (o, ox) in (lo..hi).enumerate() {
                            out[ox] = src_row[ix0 + o * g.sw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let inp = &src[oy * g.ow..(oy + 1) * g.ow];
                    let ix0 = lo * g.sw + kj - g.pw;
                    for (o, ox) in (lo..hi).enumerate() {
                        dst_row[ix0 + o * g.sw] += inp[ox];
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T], col: &mut Vec<T>) -> Result<Tensor<T>> {
    let p = g.positions();
    let rows = g.rows();
    im2col(g, x, col);
    let mut out = Vec::with_capacity(g.d * p);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, p));
    }
    T::gemm(
        g.d,
        rows,
        p,
        T::one(),
        w,
        rows as isize,
        1,
        col,
        p as isize,
        1,
        T::one(),
        &mut out,
        p as isize,
        1,
    );
    Tensor::from_vec(&[g.d, g.oh, g.ow], out)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    dy: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_input: bool,
    col: &mut Vec<T>,
    dcol: &mut Vec<T>,
) -> Option<Vec<T>> {
    let p = g.positions();
    let rows = g.rows();
    im2col(g, x, col);
    // dW += dY * col^T
    T::gemm(
        g.d,
        p,
        rows,
        T::one(),
        dy,
        p as isize,
        1,
        col,
        1,
        p as isize,
        T::one(),
        dw,
        rows as isize,
        1,
    );
    for (d, chunk) in db.iter_mut().zip(dy.chunks(p)) {
        *d += chunk.iter().copied().sum::<T>();
    }
    if !want_input {
        return None;
    }
    dcol.clear();
    dcol.resize(rows * p, T::zero());
    // dcol = W^T * dY
    T::gemm(
        rows,
        g.d,
        p,
        T::one(),
        w,
        1,
        rows as isize,
        dy,
        p as isize,
        1,
        T::zero(),
        dcol,
        p as isize,
        1,
    );
    let mut dx = vec![T::zero(); g.c * g.h * g.w];
    col2im(g, dcol, &mut dx);
    Some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn none() -> LayerParams<f64> {
        LayerParams::default()
    }

    #[test]
    fn relu_forward_and_backward() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        let y = forward_layer(0, &LayerSpec::ReLU, &none(), &[x], Mode::Infer).unwrap();
        assert_eq!(y[0].data(), &[0.0, 0.0, 2.0]);

        let x = t(&[2], vec![-1.0, 2.0]);
        let g = t(&[2], vec![1.0, 1.0]);
        let grads = backward_layer(0, &LayerSpec::ReLU, &none(), &[x], &[g], Mode::Infer, true).unwrap();
        assert_eq!(grads.input.unwrap()[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn max_pool_halves_spatial_extent() {
        let x = Tensor::<f64>::zeros(&[1, 32, 128]);
        let y = forward_layer(0, &LayerSpec::MaxPool, &none(), &[x], Mode::Infer).unwrap();
        assert_eq!(y[0].shape(), &[1, 16, 64]);
    }

    #[test]
    fn zero_conv_gives_zero_output() {
        let spec = LayerSpec::conv3(64);
        let params = LayerParams {
            params: vec![Tensor::zeros(&[64, 1, 3, 3]), Tensor::zeros(&[64])],
            buffers: vec![],
        };
        let x = Tensor::<f64>::filled(&[1, 32, 128], 0.5);
        let y = forward_layer(0, &spec, &params, &[x], Mode::Infer).unwrap();
        assert_eq!(y[0].shape(), &[64, 32, 128]);
        assert!(y[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 2 input channels, 3 outputs, 3x2 kernel, stride (1, 2), padding (1, 1)
        let spec = LayerSpec::Conv {
            depth: 3,
            kernel: [3, 2],
            stride: [1, 2],
            padding: [1, 1],
        };
        let (c, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..3 * c * 3 * 2).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let b = vec![0.5, -0.25, 0.0];
        let params = LayerParams {
            params: vec![t(&[3, c, 3, 2], wt.clone()), t(&[3], b.clone())],
            buffers: vec![],
        };
        let y = forward_layer(0, &spec, &params, &[t(&[c, h, w], x.clone())], Mode::Infer).unwrap();
        let out = spec.output_shape(0, &[c, h, w]).unwrap();
        assert_eq!(y[0].shape(), out.as_slice());
        for d in 0..3 {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    let mut s = b[d];
                    for ci in 0..c {
                        for ki in 0..3 {
                            for kj in 0..2 {
                                let iy = oy as isize + ki as isize - 1;
                                let ix = (ox * 2) as isize + kj as isize - 1;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    s += wt[((d * c + ci) * 3 + ki) * 2 + kj]
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y[0].data()[(d * out[1] + oy) * out[2] + ox];
                    assert!((got - s).abs() < 1e-12, "d{d} y{oy} x{ox}: {got} vs {s}");
                }
            }
        }
    }

    #[test]
    fn max_out_takes_elementwise_max() {
        let x = t(&[2, 1, 1], vec![3.0, 5.0]);
        let y = forward_layer(0, &LayerSpec::MaxOut { pieces: 2 }, &none(), &[x], Mode::Infer).unwrap();
        assert_eq!(y[0].data(), &[5.0]);
        assert!(LayerSpec::MaxOut { pieces: 1 }.validate().is_err());
    }

    #[test]
    fn fused_softmax_cross_entropy_gradient() {
        let (loss, grad) = softmax_cross_entropy(&[0.0f64, 0.0], 2, &[0]);
        assert_eq!(grad, vec![-0.5, 0.5]);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let params = LayerParams {
            params: vec![Tensor::zeros(&[4, 3, 3, 3]), Tensor::zeros(&[4])],
            buffers: vec![],
        };
        let x = Tensor::<f64>::zeros(&[1, 8, 8]);
        let err = forward_layer(7, &LayerSpec::conv3(4), &params, &[x], Mode::Infer).unwrap_err();
        match err {
            Error::LayerShape { index, expected, actual, .. } => {
                assert_eq!(index, 7);
                assert_eq!(expected, vec![3, 8, 8]);
                assert_eq!(actual, vec![1, 8, 8]);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]);
        let y = forward_layer(0, &LayerSpec::Softmax, &none(), &[x], Mode::Infer).unwrap();
        for row in y[0].data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
