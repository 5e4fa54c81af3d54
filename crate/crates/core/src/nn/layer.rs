//! Layer types and their forward/backward kernels.
//!
//! Batched feature tensors are `[N, D]`; batched images are `[N, H, W, C]`
//! (channel-last, matching the `(row, col, band)` order of spectral cubes).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Real;
use super::NnError;

/// Architecture-level description of one layer, without parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    Relu,
    Dropout {
        rate: f32,
    },
    MaxPool2,
    Upsample2,
    Softmax,
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = || NnError::LayerShape {
            layer: *self,
            input: input.to_vec(),
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] || inputs == 0 || outputs == 0 {
                    return Err(bad());
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => match input {
                [h, w, c] if *c == in_channels && out_channels > 0 && *h > 0 && *w > 0 => {
                    Ok(vec![*h, *w, out_channels])
                }
                _ => Err(bad()),
            },
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::InvalidConfig(format!(
                        "dropout rate {rate} outside [0, 1)"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool2 => match input {
                [h, w, c] if h % 2 == 0 && w % 2 == 0 && *h > 0 && *w > 0 => {
                    Ok(vec![h / 2, w / 2, *c])
                }
                _ => Err(bad()),
            },
            LayerSpec::Upsample2 => match input {
                [h, w, c] => Ok(vec![h * 2, w * 2, *c]),
                _ => Err(bad()),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => 9 * in_channels * out_channels + out_channels,
            _ => 0,
        }
    }
}

/// Fully connected layer. `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![T::zero(); outputs],
        }
    }

    /// Weights leaving input `j`, one per output unit.
    pub fn column(&self, j: usize) -> impl Iterator<Item = T> + '_ {
        (0..self.outputs).map(move |o| self.weights[o * self.inputs + j])
    }

    pub(crate) fn forward(&self, x: &[T], batch: usize, out: &mut [T]) {
        for n in 0..batch {
            let xr = &x[n * self.inputs..(n + 1) * self.inputs];
            let yr = &mut out[n * self.outputs..(n + 1) * self.outputs];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                // Strictly sequential accumulation: dropping an input must
                // leave every remaining partial sum bit-identical.
                let mut acc = T::zero();
                for (w, v) in wr.iter().zip(xr) {
                    acc = acc + *w * *v;
                }
                *y = acc + self.bias[o];
            }
        }
    }

    pub(crate) fn backward(
        &self,
        x: &[T],
        gy: &[T],
        batch: usize,
        gw: &mut [T],
        gb: &mut [T],
        gx: &mut [T],
    ) {
        for n in 0..batch {
            let xr = &x[n * self.inputs..(n + 1) * self.inputs];
            let gxr = &mut gx[n * self.inputs..(n + 1) * self.inputs];
            for o in 0..self.outputs {
                let g = gy[n * self.outputs + o];
                if g == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + g;
                let wr = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let gwr = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for i in 0..self.inputs {
                    gwr[i] = gwr[i] + g * xr[i];
                    gxr[i] = gxr[i] + g * wr[i];
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero "same" padding.
///
/// `kernels` is laid out `[ky][kx][in][out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn init<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (9 * (in_channels + out_channels)) as f64).sqrt();
        let kernels = (0..9 * in_channels * out_channels)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            kernels,
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    fn tap(&self, ky: usize, kx: usize, i: usize) -> &[T] {
        let start = ((ky * 3 + kx) * self.in_channels + i) * self.out_channels;
        &self.kernels[start..start + self.out_channels]
    }

    pub(crate) fn forward(&self, x: &[T], batch: usize, h: usize, w: usize, out: &mut [T]) {
        let (ci, co) = (self.in_channels, self.out_channels);
        for n in 0..batch {
            let img = &x[n * h * w * ci..(n + 1) * h * w * ci];
            for y in 0..h {
                for xx in 0..w {
                    let o0 = ((n * h + y) * w + xx) * co;
                    let orow = &mut out[o0..o0 + co];
                    orow.copy_from_slice(&self.bias);
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for kx in 0..3 {
                            let sx = xx + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            let sx = sx - 1;
                            let px = &img[(sy * w + sx) * ci..(sy * w + sx + 1) * ci];
                            for (i, &v) in px.iter().enumerate() {
                                if v == T::zero() {
                                    continue;
                                }
                                for (acc, k) in orow.iter_mut().zip(self.tap(ky, kx, i)) {
                                    *acc = *acc + v * *k;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[T],
        gy: &[T],
        batch: usize,
        h: usize,
        w: usize,
        gk: &mut [T],
        gb: &mut [T],
        gx: &mut [T],
    ) {
        let (ci, co) = (self.in_channels, self.out_channels);
        for n in 0..batch {
            for y in 0..h {
                for xx in 0..w {
                    let o0 = ((n * h + y) * w + xx) * co;
                    let grow = &gy[o0..o0 + co];
                    for (b, g) in gb.iter_mut().zip(grow) {
                        *b = *b + *g;
                    }
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for kx in 0..3 {
                            let sx = xx + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            let sx = sx - 1;
                            let p0 = ((n * h + sy) * w + sx) * ci;
                            for i in 0..ci {
                                let v = x[p0 + i];
                                let start = ((ky * 3 + kx) * ci + i) * co;
                                let krow = &self.kernels[start..start + co];
                                let gkrow = &mut gk[start..start + co];
                                let mut acc = T::zero();
                                for ((gkv, kv), g) in gkrow.iter_mut().zip(krow).zip(grow) {
                                    *gkv = *gkv + v * *g;
                                    acc = acc + *kv * *g;
                                }
                                gx[p0 + i] = gx[p0 + i] + acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Relu,
    Dropout { rate: f32 },
    MaxPool2,
    Upsample2,
    Softmax,
}

impl<T: Real> Layer<T> {
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        match spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::init(inputs, outputs, rng)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Layer::Conv2d(Conv2d::init(in_channels, out_channels, rng)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::Upsample2 => Layer::Upsample2,
            LayerSpec::Softmax => Layer::Softmax,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::MaxPool2 => LayerSpec::MaxPool2,
            Layer::Upsample2 => LayerSpec::Upsample2,
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    /// Parameter buffers in canonical order (weights, then bias).
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Conv2d(c) => vec![&c.kernels, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.kernels, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        match self {
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weights: conv(&d.weights),
                bias: conv(&d.bias),
            }),
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernels: conv(&c.kernels),
                bias: conv(&c.bias),
            }),
            Layer::Relu => Layer::Relu,
            Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
            Layer::MaxPool2 => Layer::MaxPool2,
            Layer::Upsample2 => Layer::Upsample2,
            Layer::Softmax => Layer::Softmax,
        }
    }
}

pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for n in 0..batch {
        for y in 0..oh {
            for xx in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((n * h + 2 * y) * w + 2 * xx) * c + ch;
                    let mut best = x[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((n * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    let o = ((n * oh + y) * ow + xx) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
}

pub(crate) fn upsample_forward<T: Real>(
    x: &[T],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    out: &mut [T],
) {
    let (oh, ow) = (2 * h, 2 * w);
    for n in 0..batch {
        for y in 0..oh {
            for xx in 0..ow {
                let src = ((n * h + y / 2) * w + xx / 2) * c;
                let dst = ((n * oh + y) * ow + xx) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Real>(
    gy: &[T],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    gx: &mut [T],
) {
    let (oh, ow) = (2 * h, 2 * w);
    for n in 0..batch {
        for y in 0..oh {
            for xx in 0..ow {
                let dst = ((n * h + y / 2) * w + xx / 2) * c;
                let src = ((n * oh + y) * ow + xx) * c;
                for ch in 0..c {
                    gx[dst + ch] = gx[dst + ch] + gy[src + ch];
                }
            }
        }
    }
}

pub(crate) fn softmax_forward<T: Real>(x: &[T], width: usize, out: &mut [T]) {
    for (xr, yr) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (y, v) in yr.iter_mut().zip(xr) {
            *y = (*v - max).exp();
            sum = sum + *y;
        }
        for y in yr.iter_mut() {
            *y = *y / sum;
        }
    }
}

pub(crate) fn softmax_backward<T: Real>(p: &[T], gy: &[T], width: usize, gx: &mut [T]) {
    for ((pr, gr), xr) in p
        .chunks_exact(width)
        .zip(gy.chunks_exact(width))
        .zip(gx.chunks_exact_mut(width))
    {
        let dot: T = pr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
        for ((x, pv), g) in xr.iter_mut().zip(pr).zip(gr) {
            *x = *pv * (*g - dot);
        }
    }
}
