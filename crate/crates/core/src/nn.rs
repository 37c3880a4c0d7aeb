//! Minimal CPU convolutional network building blocks with hand-written
//! backward passes.
//!
//! Layers are shape descriptors that index into a single flat parameter
//! vector, so optimizers, checkpoints and determinism checks all work on one
//! `Vec<f64>`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};

/// Dense channel-major activation volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::arg(format!(
                "tensor data length {} does not match {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn from_image(img: &ImageTensor) -> Self {
        Self {
            c: CHANNELS,
            h: img.height(),
            w: img.width(),
            data: img.pixels().to_vec(),
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }

    pub fn forward(self, t: &mut Tensor3) {
        if self != Activation::Identity {
            t.data.iter_mut().for_each(|v| *v = self.apply(*v));
        }
    }

    /// Multiplies `grad` in place by the derivative at `out`.
    pub fn backward(self, out: &[f64], grad: &mut [f64]) {
        if self != Activation::Identity {
            for (g, &o) in grad.iter_mut().zip(out) {
                *g *= self.derivative_from_output(o);
            }
        }
    }
}

/// Square-kernel 2-D convolution; weights `[out][in][k][k]` then `out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub offset: usize,
}

// Output indices `o` whose input position `o*stride + koff - pad` is in bounds.
#[inline]
fn valid_range(koff: usize, stride: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = if pad > koff {
        (pad - koff).div_ceil(stride)
    } else {
        0
    };
    let limit = in_len + pad;
    let end = if limit > koff {
        (limit - koff).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (start, end.max(start))
}

impl Conv {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, offset: usize) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
            offset,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_c
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_len()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, gain: f64) {
        let fan_in = (self.in_c * self.k * self.k) as f64;
        let std = gain * (1.0 / fan_in).sqrt();
        let (w, b) = params[self.offset..self.end()].split_at_mut(self.weight_len());
        for v in w {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * std;
        }
        b.fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_dims(x.h, x.w);
        let weights = &params[self.offset..self.offset + self.weight_len()];
        let bias = &params[self.offset + self.weight_len()..self.end()];
        let mut out = Tensor3::zeros(self.out_c, oh, ow);
        let kk = self.k * self.k;
        let plane = oh * ow;
        for oc in 0..self.out_c {
            let dst = &mut out.data[oc * plane..(oc + 1) * plane];
            dst.fill(bias[oc]);
            for ic in 0..self.in_c {
                let src = x.channel(ic);
                for ky in 0..self.k {
                    let (y0, y1) = valid_range(ky, self.stride, self.pad, x.h, oh);
                    for kx in 0..self.k {
                        let wv = weights[(oc * self.in_c + ic) * kk + ky * self.k + kx];
                        let (x0, x1) = valid_range(kx, self.stride, self.pad, x.w, ow);
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.pad;
                            let row = &src[iy * x.w..(iy + 1) * x.w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            if self.stride == 1 {
                                let ix0 = x0 + kx - self.pad;
                                for (d, s) in drow[x0..x1].iter_mut().zip(&row[ix0..]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    drow[ox] += wv * row[ox * self.stride + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Tensor3,
        gy: &Tensor3,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Tensor3> {
        let (oh, ow) = (gy.h, gy.w);
        let wl = self.weight_len();
        let weights = &params[self.offset..self.offset + wl];
        let (gw, gb) = grads[self.offset..self.end()].split_at_mut(wl);
        let kk = self.k * self.k;
        let mut gx = want_input.then(|| Tensor3::zeros(x.c, x.h, x.w));
        for oc in 0..self.out_c {
            let g = gy.channel(oc);
            gb[oc] += g.iter().sum::<f64>();
            for ic in 0..self.in_c {
                let src = x.channel(ic);
                for ky in 0..self.k {
                    let (y0, y1) = valid_range(ky, self.stride, self.pad, x.h, oh);
                    for kx in 0..self.k {
                        let widx = (oc * self.in_c + ic) * kk + ky * self.k + kx;
                        let wv = weights[widx];
                        let (x0, x1) = valid_range(kx, self.stride, self.pad, x.w, ow);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.pad;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let row = &src[iy * x.w..(iy + 1) * x.w];
                            for ox in x0..x1 {
                                acc += grow[ox] * row[ox * self.stride + kx - self.pad];
                            }
                            if let Some(gx) = gx.as_mut() {
                                let plane = x.h * x.w;
                                let gxrow = &mut gx.data[ic * plane + iy * x.w..ic * plane + (iy + 1) * x.w];
                                for ox in x0..x1 {
                                    gxrow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        gx
    }
}

impl Conv {
    /// Input gradient only; parameters are treated as constants.
    pub fn backward_input(&self, params: &[f64], in_h: usize, in_w: usize, gy: &Tensor3) -> Tensor3 {
        let (oh, ow) = (gy.h, gy.w);
        let weights = &params[self.offset..self.offset + self.weight_len()];
        let kk = self.k * self.k;
        let mut gx = Tensor3::zeros(self.in_c, in_h, in_w);
        let plane = in_h * in_w;
        for oc in 0..self.out_c {
            let g = gy.channel(oc);
            for ic in 0..self.in_c {
                let dst = &mut gx.data[ic * plane..(ic + 1) * plane];
                for ky in 0..self.k {
                    let (y0, y1) = valid_range(ky, self.stride, self.pad, in_h, oh);
                    for kx in 0..self.k {
                        let wv = weights[(oc * self.in_c + ic) * kk + ky * self.k + kx];
                        let (x0, x1) = valid_range(kx, self.stride, self.pad, in_w, ow);
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.pad;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let drow = &mut dst[iy * in_w..(iy + 1) * in_w];
                            if self.stride == 1 {
                                let ix0 = x0 + kx - self.pad;
                                for (d, s) in drow[ix0..].iter_mut().zip(&grow[x0..x1]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in x0..x1 {
                                    drow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Fully connected layer; weights `[out][in]` then `out` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, offset: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            offset,
        }
    }

    pub fn param_len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_len()
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, gain: f64) {
        let std = gain * (1.0 / self.in_dim as f64).sqrt();
        let wl = self.in_dim * self.out_dim;
        let (w, b) = params[self.offset..self.end()].split_at_mut(wl);
        for v in w {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * std;
        }
        b.fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let wl = self.in_dim * self.out_dim;
        let w = &params[self.offset..self.offset + wl];
        let b = &params[self.offset + wl..self.end()];
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let wl = self.in_dim * self.out_dim;
        let w = &params[self.offset..self.offset + wl];
        let (gw, gb) = grads[self.offset..self.end()].split_at_mut(wl);
        let mut gx = vec![0.0; self.in_dim];
        for (o, &g) in gy.iter().enumerate() {
            gb[o] += g;
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

/// Trunk width preset for the convolutional regressors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    /// Conv widths 16/32/64, 32 hidden units.
    Small,
    /// Conv widths 32/64/128, 64 hidden units.
    Wide,
}

impl Backbone {
    fn widths(self) -> ([usize; 3], usize) {
        match self {
            Backbone::Small => ([16, 32, 64], 32),
            Backbone::Wide => ([32, 64, 128], 64),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Small => "small",
            Backbone::Wide => "wide",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Backbone::Small),
            "wide" => Ok(Backbone::Wide),
            other => Err(Error::arg(format!("unknown backbone {other:?} (expected small or wide)"))),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Logistic output bounded to (0, 1).
    Sigmoid,
    /// Unbounded affine output.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorArch {
    pub backbone: Backbone,
    pub input_size: (usize, usize),
    pub output_dim: usize,
    pub head: Head,
}

impl RegressorArch {
    pub fn describe(&self) -> String {
        let head = match self.head {
            Head::Sigmoid => "sigmoid",
            Head::Linear => "linear",
        };
        format!(
            "conv3x3s2-{}-gap-dense-{head}{}@{}x{}",
            self.backbone, self.output_dim, self.input_size.0, self.input_size.1
        )
    }
}

/// Three stride-2 ReLU convolutions, global average pooling, one hidden
/// ReLU dense layer and an output head.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvRegressor {
    arch: RegressorArch,
    convs: [Conv; 3],
    hidden: Dense,
    out: Dense,
    params: Vec<f64>,
}

/// Activations retained from a forward pass for backpropagation.
pub struct RegressorCache {
    input: Tensor3,
    maps: Vec<Tensor3>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl RegressorCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ConvRegressor {
    fn layout(arch: &RegressorArch) -> ([Conv; 3], Dense, Dense, usize) {
        let ([c1, c2, c3], hidden) = arch.backbone.widths();
        let conv1 = Conv::new(CHANNELS, c1, 3, 2, 0);
        let conv2 = Conv::new(c1, c2, 3, 2, conv1.end());
        let conv3 = Conv::new(c2, c3, 3, 2, conv2.end());
        let d1 = Dense::new(c3, hidden, conv3.end());
        let d2 = Dense::new(hidden, arch.output_dim, d1.end());
        let total = d2.end();
        ([conv1, conv2, conv3], d1, d2, total)
    }

    pub fn new(arch: RegressorArch, rng: &mut impl Rng) -> Result<Self> {
        if arch.output_dim == 0 {
            return Err(Error::arg("regressor output dimension must be positive"));
        }
        if arch.input_size.0 < 8 || arch.input_size.1 < 8 {
            return Err(Error::arg("regressor input must be at least 8x8"));
        }
        let (convs, hidden, out, total) = Self::layout(&arch);
        let mut params = vec![0.0; total];
        for conv in &convs {
            conv.init(&mut params, rng, 2f64.sqrt());
        }
        hidden.init(&mut params, rng, 2f64.sqrt());
        out.init(&mut params, rng, 1.0);
        Ok(Self {
            arch,
            convs,
            hidden,
            out,
            params,
        })
    }

    pub fn from_params(arch: RegressorArch, params: Vec<f64>) -> Result<Self> {
        let (convs, hidden, out, total) = Self::layout(&arch);
        if params.len() != total {
            return Err(Error::Checkpoint(format!(
                "architecture {} needs {total} parameters, checkpoint has {}",
                arch.describe(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            convs,
            hidden,
            out,
            params,
        })
    }

    pub fn arch(&self) -> &RegressorArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let start = self.out.offset + self.out.in_dim * self.out.out_dim;
        self.params[start..self.out.end()].copy_from_slice(bias);
    }

    /// Resizes to the input size and centers pixel values around zero.
    pub fn prepare(&self, img: &ImageTensor) -> Result<Tensor3> {
        let img = img.resize_to(self.arch.input_size)?;
        Ok(Tensor3::from_image(&img).map(|v| v - 0.5))
    }

    pub fn predict(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.forward(self.prepare(img)?).output)
    }

    pub fn forward(&self, input: Tensor3) -> RegressorCache {
        let p = &self.params;
        let mut maps = Vec::with_capacity(3);
        for (i, conv) in self.convs.iter().enumerate() {
            let src = if i == 0 { &input } else { &maps[i - 1] };
            let mut y = conv.forward(p, src);
            Activation::Relu.forward(&mut y);
            maps.push(y);
        }
        let last = &maps[2];
        let plane = last.plane() as f64;
        let pooled: Vec<f64> = (0..last.c).map(|c| last.channel(c).iter().sum::<f64>() / plane).collect();
        let mut hidden = self.hidden.forward(p, &pooled);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut output = self.out.forward(p, &hidden);
        if self.arch.head == Head::Sigmoid {
            output.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        RegressorCache {
            input,
            maps,
            pooled,
            hidden,
            output,
        }
    }

    /// Accumulates into `grads` the parameter gradient for `d_output`, the
    /// loss gradient with respect to the head's (post-activation) output.
    pub fn backward(&self, cache: &RegressorCache, d_output: &[f64], grads: &mut [f64]) {
        let p = &self.params;
        let d_logits: Vec<f64> = match self.arch.head {
            Head::Sigmoid => d_output
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
            Head::Linear => d_output.to_vec(),
        };
        let mut d_hidden = self.out.backward(p, &cache.hidden, &d_logits, grads);
        for (g, h) in d_hidden.iter_mut().zip(&cache.hidden) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        let d_pooled = self.hidden.backward(p, &cache.pooled, &d_hidden, grads);
        let last = &cache.maps[2];
        let plane = last.plane();
        let mut gy = Tensor3::zeros(last.c, last.h, last.w);
        for c in 0..last.c {
            gy.data[c * plane..(c + 1) * plane].fill(d_pooled[c] / plane as f64);
        }
        for i in (0..3).rev() {
            Activation::Relu.backward(&cache.maps[i].data, &mut gy.data);
            let src = if i == 0 { &cache.input } else { &cache.maps[i - 1] };
            match self.convs[i].backward(p, src, &gy, grads, i > 0) {
                Some(next) => gy = next,
                None => break,
            }
        }
    }
}

/// Classic momentum SGD: `v ← μ·v − η·g`, `θ ← θ + v`.
#[derive(Clone, Debug)]
pub struct MomentumSgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(len: usize, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v - self.learning_rate * g;
            *p += *v;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor3 {
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct definition with explicit zero padding.
    fn naive_conv(conv: &Conv, params: &[f64], x: &Tensor3) -> Tensor3 {
        let (oh, ow) = conv.out_dims(x.h, x.w);
        let mut out = Tensor3::zeros(conv.out_c, oh, ow);
        let kk = conv.k * conv.k;
        for oc in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = params[conv.offset + conv.weight_len() + oc];
                    for ic in 0..conv.in_c {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let w = params[conv.offset + (oc * conv.in_c + ic) * kk + ky * conv.k + kx];
                                acc += w * x.data[(ic * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, h, w) in [(1, 5, 6), (2, 7, 8), (2, 8, 5)] {
            let conv = Conv::new(2, 3, 3, stride, 4);
            let mut params = vec![0.0; conv.end()];
            conv.init(&mut params, &mut rng, 1.0);
            params[conv.offset + conv.weight_len()] = 0.3;
            let x = random_tensor(2, h, w, &mut rng);
            let fast = conv.forward(&params, &x);
            let slow = naive_conv(&conv, &params, &x);
            assert_eq!((fast.h, fast.w), (slow.h, slow.w));
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv::new(2, 2, 3, 2, 0);
        let mut params = vec![0.0; conv.end()];
        conv.init(&mut params, &mut rng, 1.0);
        let x = random_tensor(2, 5, 5, &mut rng);
        let gy = random_tensor(2, 3, 3, &mut rng);
        let loss = |p: &[f64], x: &Tensor3| -> f64 {
            conv.forward(p, x).data.iter().zip(&gy.data).map(|(a, b)| a * b).sum()
        };
        let mut grads = vec![0.0; params.len()];
        let gx = conv.backward(&params, &x, &gy, &mut grads, true).unwrap();
        let gx_only = conv.backward_input(&params, x.h, x.w, &gy);
        for (a, b) in gx.data.iter().zip(&gx_only.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = 1e-6;
        for i in 0..params.len() {
            let mut pp = params.clone();
            pp[i] += h;
            let mut pm = params.clone();
            pm[i] -= h;
            let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grads[i]);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&params, &xp) - loss(&params, &xm)) / (2.0 * h);
            assert!((fd - gx.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn regressor_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for head in [Head::Sigmoid, Head::Linear] {
            let arch = RegressorArch {
                backbone: Backbone::Small,
                input_size: (8, 8),
                output_dim: 2,
                head,
            };
            let net = ConvRegressor::new(arch.clone(), &mut rng).unwrap();
            let input = random_tensor(3, 8, 8, &mut rng);
            let weights = [0.7, -1.3];
            let loss = |net: &ConvRegressor| -> f64 {
                net.forward(input.clone()).output.iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let cache = net.forward(input.clone());
            let mut grads = vec![0.0; net.params().len()];
            net.backward(&cache, &weights, &mut grads);
            let h = 1e-6;
            for i in (0..grads.len()).step_by(37) {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - grads[i]).abs() < 1e-5, "{head:?} param {i}: fd {fd} analytic {}", grads[i]);
            }
        }
    }

    #[test]
    fn sigmoid_head_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = RegressorArch {
            backbone: Backbone::Small,
            input_size: (16, 16),
            output_dim: 1,
            head: Head::Sigmoid,
        };
        let mut net = ConvRegressor::new(arch, &mut rng).unwrap();
        net.set_output_bias(&[500.0]);
        let img = ImageTensor::gray(16, 16, 1.0).unwrap();
        let y = net.predict(&img).unwrap()[0];
        assert!((0.0..=1.0).contains(&y));
    }

    #[test]
    fn parameter_count_is_checked() {
        let arch = RegressorArch {
            backbone: Backbone::Wide,
            input_size: (16, 16),
            output_dim: 4,
            head: Head::Linear,
        };
        assert!(ConvRegressor::from_params(arch, vec![0.0; 10]).is_err());
    }

    #[test]
    fn backbone_parses() {
        assert_eq!("wide".parse::<Backbone>().unwrap(), Backbone::Wide);
        assert!("vgg".parse::<Backbone>().is_err());
    }
}
