//! Layer kernels with hand-written backward passes.
//!
//! Layers operate on whole mini-batches. Per-sample work is spread with
//! [`Exec`]; every reduction over samples runs in sample index order, so the
//! accumulated gradients do not depend on the number of worker threads.
//!
//! Complex weights are stored as separate real and imaginary blocks and
//! differentiated as independent real parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Real feature map, channel-major (`[c][h][w]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> SignalShape {
        SignalShape::Real {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

/// Activation flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Real(Tensor),
    Complex { re: Vec<f64>, im: Vec<f64> },
}

impl Signal {
    fn into_real(self) -> Result<Tensor> {
        match self {
            Signal::Real(t) => Ok(t),
            Signal::Complex { .. } => Err(Error::Internal("expected a real signal".into())),
        }
    }

    fn into_complex(self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Signal::Complex { re, im } => Ok((re, im)),
            Signal::Real(_) => Err(Error::Internal("expected a complex signal".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalShape {
    Real {
        channels: usize,
        height: usize,
        width: usize,
    },
    Complex {
        len: usize,
    },
}

/// Fully connected layer with complex weights applied to a real input.
///
/// `params` layout: `w_re[out][in]`, `w_im[out][in]`, `b_re[out]`, `b_im[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDense {
    pub in_len: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub params: Vec<f64>,
}

impl ComplexDense {
    pub fn zeros(in_len: usize, out_height: usize, out_width: usize) -> Self {
        let out = out_height * out_width;
        Self {
            in_len,
            out_height,
            out_width,
            params: vec![0.0; 2 * out * in_len + 2 * out],
        }
    }

    /// Weights i.i.d. complex Gaussian with variance `1/in_len`, zero bias.
    pub fn init(in_len: usize, out_height: usize, out_width: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(in_len, out_height, out_width);
        let sd = (0.5 / in_len as f64).sqrt();
        let n = layer.weight_len();
        for v in &mut layer.params[..2 * n] {
            let z: f64 = StandardNormal.sample(rng);
            *v = sd * z;
        }
        layer
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }

    fn weight_len(&self) -> usize {
        self.out_len() * self.in_len
    }

    fn w_re(&self) -> &[f64] {
        &self.params[..self.weight_len()]
    }

    fn w_im(&self) -> &[f64] {
        let n = self.weight_len();
        &self.params[n..2 * n]
    }

    fn b_re(&self) -> &[f64] {
        let n = self.weight_len();
        &self.params[2 * n..2 * n + self.out_len()]
    }

    fn b_im(&self) -> &[f64] {
        let n = self.weight_len();
        &self.params[2 * n + self.out_len()..]
    }
}

/// 3×3 same-padded convolution followed by `max(0, ·)`.
///
/// `params` layout: `kernel[out][in][3][3]`, then `bias[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: Vec<f64>,
}

impl ConvBlock {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            params: vec![0.0; out_channels * in_channels * 9 + out_channels],
        }
    }

    /// Kernels uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels);
        let bound = (6.0 / ((in_channels + out_channels) * 9) as f64).sqrt();
        let nk = layer.kernel_len();
        for v in &mut layer.params[..nk] {
            *v = rng.random_range(-bound..bound);
        }
        layer
    }

    fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * 9
    }

    fn forward_one(&self, x: &Tensor) -> Tensor {
        let (h, w) = (x.height, x.width);
        let (kernel, bias) = self.params.split_at(self.kernel_len());
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for oc in 0..self.out_channels {
            let plane = &mut out.data[oc * h * w..(oc + 1) * h * w];
            plane.fill(bias[oc]);
            for ic in 0..self.in_channels {
                let src = &x.data[ic * h * w..(ic + 1) * h * w];
                let k = &kernel[(oc * self.in_channels + ic) * 9..][..9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for r in 0..h {
                            let sr = r as isize + ky as isize - 1;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            let srow = &src[sr as usize * w..][..w];
                            let drow = &mut plane[r * w..][..w];
                            for c in 0..w {
                                let sc = c as isize + kx as isize - 1;
                                if sc >= 0 && sc < w as isize {
                                    drow[c] += kv * srow[sc as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        for v in &mut out.data {
            *v = v.max(0.0);
        }
        out
    }

    /// Returns (input gradient, parameter gradient) for one sample.
    fn backward_one(&self, x: &Tensor, y: &Tensor, gy: &Tensor) -> (Tensor, Vec<f64>) {
        let (h, w) = (x.height, x.width);
        let nk = self.kernel_len();
        let kernel = &self.params[..nk];
        let mut gparams = vec![0.0; self.params.len()];
        let mut gx = Tensor::zeros(self.in_channels, h, w);
        let gz: Vec<f64> = gy
            .data
            .iter()
            .zip(&y.data)
            .map(|(g, out)| if *out > 0.0 { *g } else { 0.0 })
            .collect();
        for oc in 0..self.out_channels {
            let gplane = &gz[oc * h * w..(oc + 1) * h * w];
            gparams[nk + oc] = gplane.iter().sum();
            for ic in 0..self.in_channels {
                let src = &x.data[ic * h * w..(ic + 1) * h * w];
                let kidx = (oc * self.in_channels + ic) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = kernel[kidx + ky * 3 + kx];
                        let mut acc = 0.0;
                        for r in 0..h {
                            let sr = r as isize + ky as isize - 1;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            let sr = sr as usize;
                            for c in 0..w {
                                let sc = c as isize + kx as isize - 1;
                                if sc >= 0 && sc < w as isize {
                                    let g = gplane[r * w + c];
                                    acc += g * src[sr * w + sc as usize];
                                    gx.data[ic * h * w + sr * w + sc as usize] += kv * g;
                                }
                            }
                        }
                        gparams[kidx + ky * 3 + kx] = acc;
                    }
                }
            }
        }
        (gx, gparams)
    }
}

/// One stage of a decoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    ComplexDense(ComplexDense),
    /// Complex-to-real conversion `|z|`.
    Modulus,
    ConvBlock(ConvBlock),
    /// 2×2 max pooling; its input is kept as a skip connection.
    Downsample,
    /// 2× nearest-neighbour upsampling concatenated with the matching skip.
    Upsample,
    /// Elementwise logistic, mapping to `(0, 1)`.
    OutputSquash,
}

pub(crate) enum Cache {
    Dense {
        inputs: Vec<Vec<f64>>,
        in_shape: SignalShape,
    },
    Modulus {
        re: Vec<Vec<f64>>,
        im: Vec<Vec<f64>>,
        modulus: Vec<Vec<f64>>,
    },
    Conv {
        inputs: Vec<Tensor>,
        outputs: Vec<Tensor>,
    },
    Down {
        argmax: Vec<Vec<usize>>,
        in_channels: usize,
        in_height: usize,
        in_width: usize,
    },
    Up {
        channels: usize,
    },
    Squash {
        outputs: Vec<Vec<f64>>,
        height: usize,
        width: usize,
    },
}

const SQUASH_EPS: f64 = 1e-15;

fn logistic(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SQUASH_EPS, 1.0 - SQUASH_EPS)
}

/// Dot product with four independent accumulators (fixed summation order).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::ComplexDense(_) => "complex_dense",
            Layer::Modulus => "modulus",
            Layer::ConvBlock(_) => "conv_block",
            Layer::Downsample => "downsample",
            Layer::Upsample => "upsample",
            Layer::OutputSquash => "output_squash",
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Layer::ComplexDense(d) => &d.params,
            Layer::ConvBlock(c) => &c.params,
            _ => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::ComplexDense(d) => &mut d.params,
            Layer::ConvBlock(c) => &mut c.params,
            _ => &mut [],
        }
    }

    /// Shape propagation; `skips` mirrors the runtime skip stack.
    pub fn output_shape(
        &self,
        input: SignalShape,
        skips: &mut Vec<SignalShape>,
    ) -> Result<SignalShape> {
        let mismatch = |what: &str| {
            Err(Error::invalid(format!(
                "{} layer cannot accept {input:?}: {what}",
                self.kind()
            )))
        };
        match (self, input) {
            (
                Layer::ComplexDense(d),
                SignalShape::Real {
                    channels,
                    height,
                    width,
                },
            ) => {
                if channels * height * width != d.in_len {
                    return mismatch(&format!("expects {} inputs", d.in_len));
                }
                Ok(SignalShape::Complex { len: d.out_len() })
            }
            (Layer::ComplexDense(_), _) => mismatch("complex dense takes a real input"),
            (Layer::Modulus, SignalShape::Complex { len }) => Ok(SignalShape::Real {
                channels: 1,
                height: 1,
                width: len,
            }),
            (Layer::Modulus, _) => mismatch("modulus takes a complex input"),
            (
                Layer::ConvBlock(c),
                SignalShape::Real {
                    channels,
                    height,
                    width,
                },
            ) => {
                if channels != c.in_channels {
                    return mismatch(&format!("expects {} channels", c.in_channels));
                }
                Ok(SignalShape::Real {
                    channels: c.out_channels,
                    height,
                    width,
                })
            }
            (
                Layer::Downsample,
                SignalShape::Real {
                    channels,
                    height,
                    width,
                },
            ) => {
                if height % 2 != 0 || width % 2 != 0 || height < 2 || width < 2 {
                    return mismatch("spatial size must be even");
                }
                skips.push(input);
                Ok(SignalShape::Real {
                    channels,
                    height: height / 2,
                    width: width / 2,
                })
            }
            (
                Layer::Upsample,
                SignalShape::Real {
                    channels,
                    height,
                    width,
                },
            ) => match skips.pop() {
                Some(SignalShape::Real {
                    channels: sc,
                    height: sh,
                    width: sw,
                }) if sh == 2 * height && sw == 2 * width => Ok(SignalShape::Real {
                    channels: channels + sc,
                    height: sh,
                    width: sw,
                }),
                _ => mismatch("no matching skip connection"),
            },
            (Layer::OutputSquash, SignalShape::Real { .. }) => Ok(input),
            _ => mismatch("real input required"),
        }
    }

    pub(crate) fn forward(
        &self,
        inputs: Vec<Signal>,
        skips: &mut Vec<Vec<Tensor>>,
        exec: Exec,
    ) -> Result<(Vec<Signal>, Cache)> {
        let n = inputs.len();
        match self {
            Layer::ComplexDense(d) => {
                let tensors = inputs
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<Vec<_>>>()?;
                let in_shape = tensors
                    .first()
                    .map(Tensor::shape)
                    .unwrap_or(SignalShape::Complex { len: 0 });
                let xs: Vec<Vec<f64>> = tensors.into_iter().map(|t| t.data).collect();
                if xs.iter().any(|x| x.len() != d.in_len) {
                    return Err(Error::invalid("complex dense input length mismatch"));
                }
                let (w_re, w_im, b_re, b_im) = (d.w_re(), d.w_im(), d.b_re(), d.b_im());
                let in_len = d.in_len;
                let rows = exec.map(d.out_len(), |o| {
                    let wr = &w_re[o * in_len..(o + 1) * in_len];
                    let wi = &w_im[o * in_len..(o + 1) * in_len];
                    let re: Vec<f64> = xs.iter().map(|x| dot(wr, x) + b_re[o]).collect();
                    let im: Vec<f64> = xs.iter().map(|x| dot(wi, x) + b_im[o]).collect();
                    (re, im)
                });
                let outputs = (0..n)
                    .map(|s| Signal::Complex {
                        re: rows.iter().map(|(re, _)| re[s]).collect(),
                        im: rows.iter().map(|(_, im)| im[s]).collect(),
                    })
                    .collect();
                Ok((
                    outputs,
                    Cache::Dense {
                        inputs: xs,
                        in_shape,
                    },
                ))
            }
            Layer::Modulus => {
                let mut re_all = Vec::with_capacity(n);
                let mut im_all = Vec::with_capacity(n);
                let mut mod_all = Vec::with_capacity(n);
                let mut outputs = Vec::with_capacity(n);
                for s in inputs {
                    let (re, im) = s.into_complex()?;
                    let m: Vec<f64> = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect();
                    outputs.push(Signal::Real(Tensor {
                        channels: 1,
                        height: 1,
                        width: m.len(),
                        data: m.clone(),
                    }));
                    re_all.push(re);
                    im_all.push(im);
                    mod_all.push(m);
                }
                Ok((
                    outputs,
                    Cache::Modulus {
                        re: re_all,
                        im: im_all,
                        modulus: mod_all,
                    },
                ))
            }
            Layer::ConvBlock(c) => {
                let tensors = inputs
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<Vec<_>>>()?;
                if tensors.iter().any(|t| t.channels != c.in_channels) {
                    return Err(Error::invalid("conv block channel mismatch"));
                }
                let outs = exec.map(n, |s| c.forward_one(&tensors[s]));
                let signals = outs.iter().cloned().map(Signal::Real).collect();
                Ok((
                    signals,
                    Cache::Conv {
                        inputs: tensors,
                        outputs: outs,
                    },
                ))
            }
            Layer::Downsample => {
                let tensors = inputs
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<Vec<_>>>()?;
                let (c, h, w) = tensors
                    .first()
                    .map(|t| (t.channels, t.height, t.width))
                    .unwrap_or((0, 0, 0));
                let pooled: Vec<(Tensor, Vec<usize>)> = exec.map(n, |s| {
                    let t = &tensors[s];
                    let (oh, ow) = (h / 2, w / 2);
                    let mut out = Tensor::zeros(c, oh, ow);
                    let mut arg = vec![0usize; c * oh * ow];
                    for ch in 0..c {
                        for r in 0..oh {
                            for col in 0..ow {
                                let mut best = usize::MAX;
                                let mut best_v = f64::NEG_INFINITY;
                                for dr in 0..2 {
                                    for dc in 0..2 {
                                        let idx = ch * h * w + (2 * r + dr) * w + 2 * col + dc;
                                        if t.data[idx] > best_v || best == usize::MAX {
                                            best_v = t.data[idx];
                                            best = idx;
                                        }
                                    }
                                }
                                let o = ch * oh * ow + r * ow + col;
                                out.data[o] = best_v;
                                arg[o] = best;
                            }
                        }
                    }
                    (out, arg)
                });
                let mut outputs = Vec::with_capacity(n);
                let mut argmax = Vec::with_capacity(n);
                for (t, a) in pooled {
                    outputs.push(Signal::Real(t));
                    argmax.push(a);
                }
                skips.push(tensors);
                Ok((
                    outputs,
                    Cache::Down {
                        argmax,
                        in_channels: c,
                        in_height: h,
                        in_width: w,
                    },
                ))
            }
            Layer::Upsample => {
                let skip = skips
                    .pop()
                    .ok_or_else(|| Error::Internal("upsample without skip".into()))?;
                let tensors = inputs
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<Vec<_>>>()?;
                let channels = tensors.first().map(|t| t.channels).unwrap_or(0);
                let outputs = tensors
                    .iter()
                    .zip(&skip)
                    .map(|(t, sk)| {
                        let (h, w) = (sk.height, sk.width);
                        let mut out = Tensor::zeros(t.channels + sk.channels, h, w);
                        for ch in 0..t.channels {
                            for r in 0..h {
                                for c in 0..w {
                                    out.data[ch * h * w + r * w + c] =
                                        t.data[ch * t.height * t.width + (r / 2) * t.width + c / 2];
                                }
                            }
                        }
                        out.data[t.channels * h * w..].copy_from_slice(&sk.data);
                        Signal::Real(out)
                    })
                    .collect();
                Ok((outputs, Cache::Up { channels }))
            }
            Layer::OutputSquash => {
                let tensors = inputs
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<Vec<_>>>()?;
                let (h, w) = tensors
                    .first()
                    .map(|t| (t.height, t.width))
                    .unwrap_or((0, 0));
                let mut outs = Vec::with_capacity(n);
                let mut signals = Vec::with_capacity(n);
                for t in tensors {
                    let y: Vec<f64> = t.data.iter().map(|&v| logistic(v)).collect();
                    signals.push(Signal::Real(Tensor {
                        data: y.clone(),
                        ..t
                    }));
                    outs.push(y);
                }
                Ok((
                    signals,
                    Cache::Squash {
                        outputs: outs,
                        height: h,
                        width: w,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradients (empty when `need_input_grad` is false).
    pub(crate) fn backward(
        &self,
        cache: Cache,
        grad_out: Vec<Signal>,
        grads: &mut [f64],
        skip_grads: &mut Vec<Vec<Tensor>>,
        need_input_grad: bool,
        exec: Exec,
    ) -> Result<Vec<Signal>> {
        match (self, cache) {
            (Layer::ComplexDense(d), Cache::Dense { inputs, in_shape }) => {
                let g: Vec<(Vec<f64>, Vec<f64>)> = grad_out
                    .into_iter()
                    .map(Signal::into_complex)
                    .collect::<Result<_>>()?;
                let in_len = d.in_len;
                let out_len = d.out_len();
                let wlen = d.weight_len();
                let (g_wr, rest) = grads.split_at_mut(wlen);
                let (g_wi, g_b) = rest.split_at_mut(wlen);
                exec.for_each_chunk_mut(g_wr, in_len, |o, row| {
                    for (x, (gr, _)) in inputs.iter().zip(&g) {
                        axpy(gr[o], x, row);
                    }
                });
                exec.for_each_chunk_mut(g_wi, in_len, |o, row| {
                    for (x, (_, gi)) in inputs.iter().zip(&g) {
                        axpy(gi[o], x, row);
                    }
                });
                let (g_br, g_bi) = g_b.split_at_mut(out_len);
                for (gr, gi) in &g {
                    axpy(1.0, gr, g_br);
                    axpy(1.0, gi, g_bi);
                }
                if !need_input_grad {
                    return Ok(Vec::new());
                }
                let SignalShape::Real {
                    channels,
                    height,
                    width,
                } = in_shape
                else {
                    return Err(Error::Internal("dense input shape".into()));
                };
                let (w_re, w_im) = (d.w_re(), d.w_im());
                Ok(exec.map(g.len(), |s| {
                    let (gr, gi) = &g[s];
                    let mut gx = vec![0.0; in_len];
                    for o in 0..out_len {
                        axpy(gr[o], &w_re[o * in_len..(o + 1) * in_len], &mut gx);
                        axpy(gi[o], &w_im[o * in_len..(o + 1) * in_len], &mut gx);
                    }
                    Signal::Real(Tensor {
                        channels,
                        height,
                        width,
                        data: gx,
                    })
                }))
            }
            (Layer::Modulus, Cache::Modulus { re, im, modulus }) => grad_out
                .into_iter()
                .enumerate()
                .map(|(s, g)| {
                    let g = g.into_real()?.data;
                    let mut gre = vec![0.0; g.len()];
                    let mut gim = vec![0.0; g.len()];
                    for k in 0..g.len() {
                        let m = modulus[s][k];
                        if m > 0.0 {
                            gre[k] = g[k] * re[s][k] / m;
                            gim[k] = g[k] * im[s][k] / m;
                        }
                    }
                    Ok(Signal::Complex { re: gre, im: gim })
                })
                .collect(),
            (Layer::ConvBlock(c), Cache::Conv { inputs, outputs }) => {
                let g: Vec<Tensor> = grad_out
                    .into_iter()
                    .map(Signal::into_real)
                    .collect::<Result<_>>()?;
                let per_sample =
                    exec.map(g.len(), |s| c.backward_one(&inputs[s], &outputs[s], &g[s]));
                let mut gin = Vec::with_capacity(per_sample.len());
                for (gx, gp) in per_sample {
                    axpy(1.0, &gp, grads);
                    gin.push(Signal::Real(gx));
                }
                Ok(gin)
            }
            (
                Layer::Downsample,
                Cache::Down {
                    argmax,
                    in_channels,
                    in_height,
                    in_width,
                },
            ) => {
                let skip = skip_grads
                    .pop()
                    .ok_or_else(|| Error::Internal("missing skip gradient".into()))?;
                grad_out
                    .into_iter()
                    .zip(skip)
                    .enumerate()
                    .map(|(s, (g, sk))| {
                        let g = g.into_real()?;
                        let mut gx = sk;
                        debug_assert_eq!(gx.data.len(), in_channels * in_height * in_width);
                        for (o, &idx) in argmax[s].iter().enumerate() {
                            gx.data[idx] += g.data[o];
                        }
                        Ok(Signal::Real(gx))
                    })
                    .collect()
            }
            (Layer::Upsample, Cache::Up { channels }) => {
                let mut gin = Vec::new();
                let mut gskip = Vec::new();
                for g in grad_out {
                    let g = g.into_real()?;
                    let (h, w) = (g.height, g.width);
                    let (oh, ow) = (h / 2, w / 2);
                    let mut gx = Tensor::zeros(channels, oh, ow);
                    for ch in 0..channels {
                        for r in 0..h {
                            for c in 0..w {
                                gx.data[ch * oh * ow + (r / 2) * ow + c / 2] +=
                                    g.data[ch * h * w + r * w + c];
                            }
                        }
                    }
                    gskip.push(Tensor {
                        channels: g.channels - channels,
                        height: h,
                        width: w,
                        data: g.data[channels * h * w..].to_vec(),
                    });
                    gin.push(Signal::Real(gx));
                }
                skip_grads.push(gskip);
                Ok(gin)
            }
            (
                Layer::OutputSquash,
                Cache::Squash {
                    outputs,
                    height,
                    width,
                },
            ) => grad_out
                .into_iter()
                .zip(outputs)
                .map(|(g, y)| {
                    let g = g.into_real()?;
                    let data = g
                        .data
                        .iter()
                        .zip(&y)
                        .map(|(gv, s)| gv * s * (1.0 - s))
                        .collect();
                    Ok(Signal::Real(Tensor {
                        channels: g.channels,
                        height,
                        width,
                        data,
                    }))
                })
                .collect(),
            _ => Err(Error::Internal(format!(
                "cache does not belong to a {} layer",
                self.kind()
            ))),
        }
    }
}
