//! Minimal layer library with explicit forward/backward passes.
//!
//! Tensors are `N × C × H × W` arrays in standard layout. Every layer caches
//! what its backward pass needs during a training-mode forward, and
//! accumulates parameter gradients into [`Param::grad`].

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named tensor with its gradient accumulator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub value: ArrayD<f64>,
    #[serde(skip)]
    pub grad: ArrayD<f64>,
    /// Buffers (batch-norm running statistics) are saved but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: ArrayD<f64>) -> Self {
        Param {
            trainable: false,
            ..Param::new(value)
        }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.value.shape() {
            self.grad = ArrayD::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }
}

fn uniform_init(shape: &[usize], bound: f64, rng: &mut impl Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound))
}

/// Weight initialization scale, by what follows the layer.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// He-uniform for layers feeding a ReLU.
    Relu,
    /// LeCun-uniform for output projections.
    Linear,
    /// Scaled-down output projection.
    Small(f64),
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        let fan = fan_in.max(1) as f64;
        match self {
            Init::Relu => (6.0 / fan).sqrt(),
            Init::Linear => (3.0 / fan).sqrt(),
            Init::Small(k) => k * (3.0 / fan).sqrt(),
        }
    }
}

#[derive(Clone)]
struct ConvCache {
    cols: Array2<f64>,
    in_shape: [usize; 4],
}

/// 2-D convolution with square kernel, zero padding `k/2`.
#[derive(Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, init: Init, rng: &mut impl Rng) -> Self {
        let bound = init.bound(in_ch * k * k);
        Conv2d {
            weight: Param::new(uniform_init(&[out_ch, in_ch, k, k], bound, rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_ch]))),
            in_ch,
            out_ch,
            k,
            stride,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.k / 2;
        (
            (h + 2 * pad - self.k) / self.stride + 1,
            (w + 2 * pad - self.k) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .expect("conv weight is contiguous")
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let (ho, wo) = self.out_size(h, w);
        let cols = im2col(x, self.k, self.stride, ho, wo);
        let mut out2 = Array2::<f64>::zeros((self.out_ch, n * ho * wo));
        general_mat_mul(1.0, &self.weight_matrix(), &cols, 0.0, &mut out2);
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        let mut out = Array4::<f64>::zeros((n, self.out_ch, ho, wo));
        {
            let src = out2.as_slice().expect("contiguous");
            let dst = out.as_slice_mut().expect("contiguous");
            let plane = ho * wo;
            for o in 0..self.out_ch {
                for i in 0..n {
                    let s0 = o * n * plane + i * plane;
                    let d0 = (i * self.out_ch + o) * plane;
                    for p in 0..plane {
                        dst[d0 + p] = src[s0 + p] + bias[o];
                    }
                }
            }
        }
        self.cache = train.then_some(ConvCache {
            cols,
            in_shape: [n, c, h, w],
        });
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("conv backward without cached forward");
        let [n, _, h, w] = cache.in_shape;
        let (_, oc, ho, wo) = dy.dim();
        let plane = ho * wo;
        let mut dy2 = Array2::<f64>::zeros((oc, n * plane));
        {
            let src = dy.as_slice().expect("contiguous dy");
            let dst = dy2.as_slice_mut().expect("contiguous");
            for o in 0..oc {
                for i in 0..n {
                    let s0 = (i * oc + o) * plane;
                    let d0 = o * n * plane + i * plane;
                    dst[d0..d0 + plane].copy_from_slice(&src[s0..s0 + plane]);
                }
            }
        }
        let db = dy2.sum_axis(Axis(1));
        {
            let bg = self.bias.grad.as_slice_mut().expect("contiguous");
            for (g, d) in bg.iter_mut().zip(db.iter()) {
                *g += d;
            }
        }
        {
            let kk = self.in_ch * self.k * self.k;
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_ch, kk))
                .expect("contiguous weight grad");
            general_mat_mul(1.0, &dy2, &cache.cols.t(), 1.0, &mut gw);
        }
        let mut dcols = Array2::<f64>::zeros(cache.cols.raw_dim());
        general_mat_mul(1.0, &self.weight_matrix().t(), &dy2, 0.0, &mut dcols);
        col2im(&dcols, [n, self.in_ch, h, w], self.k, self.stride, ho, wo)
    }
}

impl Module for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

fn im2col(x: &Array4<f64>, k: usize, stride: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let xs = x.as_slice().expect("im2col needs standard layout");
    let plane = ho * wo;
    let total = n * plane;
    let mut cols = Array2::<f64>::zeros((c * k * k, total));
    let cs = cols.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let base = row * total;
                for i in 0..n {
                    let src = &xs[(i * c + ci) * h * w..(i * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let d0 = base + i * plane + oy * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                cs[d0 + ox] = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, shape: [usize; 4], k: usize, stride: usize, ho: usize, wo: usize) -> Array4<f64> {
    let [n, c, h, w] = shape;
    let pad = (k / 2) as isize;
    let plane = ho * wo;
    let total = n * plane;
    let cs = cols.as_slice().expect("contiguous");
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    let ds = dx.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let base = row * total;
                for i in 0..n {
                    let off = (i * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let s0 = base + i * plane + oy * wo;
                        let drow = off + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                ds[drow + ix as usize] += cs[s0 + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[derive(Clone)]
struct BnCache {
    x_hat: Array4<f64>,
    inv_std: Array1<f64>,
}

/// Batch normalization over `(N, H, W)` per channel.
#[derive(Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(ch: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::ones(IxDyn(&[ch]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[ch]))),
            running_mean: Param::buffer(ArrayD::zeros(IxDyn(&[ch]))),
            running_var: Param::buffer(ArrayD::ones(IxDyn(&[ch]))),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let plane = h * w;
        let count = (n * plane) as f64;
        let xs = x.as_slice().expect("standard layout");
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        if train {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += xs[(i * c + ch) * plane..(i * c + ch + 1) * plane].iter().sum::<f64>();
                }
                let m = acc / count;
                let mut v = 0.0;
                for i in 0..n {
                    v += xs[(i * c + ch) * plane..(i * c + ch + 1) * plane]
                        .iter()
                        .map(|a| (a - m) * (a - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let rm = self.running_mean.value.as_slice_mut().expect("contiguous");
            let rv = self.running_var.value.as_slice_mut().expect("contiguous");
            for ch in 0..c {
                rm[ch] = (1.0 - self.momentum) * rm[ch] + self.momentum * mean[ch];
                rv[ch] = (1.0 - self.momentum) * rv[ch] + self.momentum * var[ch] * unbiased;
            }
        } else {
            mean.assign(&self.running_mean.value.view().into_dimensionality::<ndarray::Ix1>().unwrap());
            var.assign(&self.running_var.value.view().into_dimensionality::<ndarray::Ix1>().unwrap());
        }
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let mut x_hat = Array4::<f64>::zeros((n, c, h, w));
        let mut out = Array4::<f64>::zeros((n, c, h, w));
        {
            let xh = x_hat.as_slice_mut().unwrap();
            let o = out.as_slice_mut().unwrap();
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                    for p in r {
                        let v = (xs[p] - mean[ch]) * inv_std[ch];
                        xh[p] = v;
                        o[p] = gamma[ch] * v + beta[ch];
                    }
                }
            }
        }
        self.cache = train.then_some(BnCache { x_hat, inv_std });
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("bn backward without cached forward");
        let (n, c, h, w) = dy.dim();
        let plane = h * w;
        let count = (n * plane) as f64;
        let dys = dy.as_slice().expect("standard layout");
        let xh = cache.x_hat.as_slice().unwrap();
        let gamma = self.gamma.value.as_slice().unwrap().to_vec();
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let gg = self.gamma.grad.as_slice_mut().unwrap();
        let gb = self.beta.grad.as_slice_mut().unwrap();
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for i in 0..n {
                for p in (i * c + ch) * plane..(i * c + ch + 1) * plane {
                    sum_dy += dys[p];
                    sum_dy_xh += dys[p] * xh[p];
                }
            }
            gg[ch] += sum_dy_xh;
            gb[ch] += sum_dy;
            let k = gamma[ch] * cache.inv_std[ch] / count;
            for i in 0..n {
                for p in (i * c + ch) * plane..(i * c + ch + 1) * plane {
                    dxs[p] = k * (count * dys[p] - sum_dy - xh[p] * sum_dy_xh);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

/// ReLU that remembers its activation pattern.
#[derive(Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        if train {
            self.mask = Some(x.iter().map(|&v| v > 0.0).collect());
        }
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let mask = self.mask.take().expect("relu backward without cached forward");
        let mut dx = dy.to_owned();
        for (d, &m) in dx.iter_mut().zip(mask.iter()) {
            if !m {
                *d = 0.0;
            }
        }
        dx
    }
}

/// Conv → BatchNorm → ReLU.
#[derive(Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: Relu,
}

impl ConvBnRelu {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(in_ch, out_ch, k, stride, Init::Relu, rng),
            bn: BatchNorm2d::new(out_ch),
            relu: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let y = self.conv.forward(x, train);
        let y = self.bn.forward(&y, train);
        self.relu.forward(&y, train)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let d = self.relu.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }
}

impl Module for ConvBnRelu {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.bn.visit_params(&format!("{prefix}.bn"), f);
    }
}

/// Per-axis linear interpolation taps (half-pixel centers, edge clamped).
#[derive(Clone, Debug)]
struct Taps {
    i0: Vec<usize>,
    i1: Vec<usize>,
    w1: Vec<f64>,
}

impl Taps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut t = Taps {
            i0: Vec::with_capacity(dst),
            i1: Vec::with_capacity(dst),
            w1: Vec::with_capacity(dst),
        };
        for d in 0..dst {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            t.i0.push(i0);
            t.i1.push(i1);
            t.w1.push(pos - i0 as f64);
        }
        t
    }
}

/// Bilinear resize of each `H × W` plane (half-pixel alignment), with its
/// adjoint for backpropagation.
#[derive(Clone, Debug)]
pub struct Bilinear {
    ty: Taps,
    tx: Taps,
    src: (usize, usize),
    dst: (usize, usize),
}

impl Bilinear {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Self {
        Bilinear {
            ty: Taps::new(src.0, dst.0),
            tx: Taps::new(src.1, dst.1),
            src,
            dst,
        }
    }

    pub fn dst(&self) -> (usize, usize) {
        self.dst
    }

    /// Resizes one plane given as a row-major slice.
    pub fn plane(&self, src: &[f64], dst: &mut [f64]) {
        let (_, sw) = self.src;
        let (dh, dw) = self.dst;
        for y in 0..dh {
            let (y0, y1, wy) = (self.ty.i0[y], self.ty.i1[y], self.ty.w1[y]);
            for x in 0..dw {
                let (x0, x1, wx) = (self.tx.i0[x], self.tx.i1[x], self.tx.w1[x]);
                let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
                let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
                dst[y * dw + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }

    /// Adjoint of [`Bilinear::plane`]: scatters `ddst` back onto `dsrc`.
    pub fn plane_adjoint(&self, ddst: &[f64], dsrc: &mut [f64]) {
        let (_, sw) = self.src;
        let (dh, dw) = self.dst;
        for y in 0..dh {
            let (y0, y1, wy) = (self.ty.i0[y], self.ty.i1[y], self.ty.w1[y]);
            for x in 0..dw {
                let (x0, x1, wx) = (self.tx.i0[x], self.tx.i1[x], self.tx.w1[x]);
                let g = ddst[y * dw + x];
                dsrc[y0 * sw + x0] += g * (1.0 - wy) * (1.0 - wx);
                dsrc[y0 * sw + x1] += g * (1.0 - wy) * wx;
                dsrc[y1 * sw + x0] += g * wy * (1.0 - wx);
                dsrc[y1 * sw + x1] += g * wy * wx;
            }
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!((h, w), self.src, "bilinear source size");
        let (dh, dw) = self.dst;
        let mut out = Array4::<f64>::zeros((n, c, dh, dw));
        let xs = x.as_slice().expect("standard layout");
        let os = out.as_slice_mut().unwrap();
        for p in 0..n * c {
            self.plane(&xs[p * h * w..(p + 1) * h * w], &mut os[p * dh * dw..(p + 1) * dh * dw]);
        }
        out
    }

    pub fn backward(&self, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, dh, dw) = dy.dim();
        let (h, w) = self.src;
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let ds = dy.as_slice().expect("standard layout");
        let xs = dx.as_slice_mut().unwrap();
        for p in 0..n * c {
            self.plane_adjoint(&ds[p * dh * dw..(p + 1) * dh * dw], &mut xs[p * h * w..(p + 1) * h * w]);
        }
        dx
    }
}

/// Bilinear resize of a single plane.
pub fn resize_plane(src: &Array2<f64>, dst: (usize, usize)) -> Array2<f64> {
    let src = src.as_standard_layout();
    let op = Bilinear::new(src.dim(), dst);
    let mut out = Array2::<f64>::zeros(dst);
    op.plane(src.as_slice().unwrap(), out.as_slice_mut().unwrap());
    out
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()])
        .expect("matching batch and spatial dims")
        .as_standard_layout()
        .into_owned()
}

/// Splits a channel-concatenated gradient back into its two halves.
pub fn split_channels(d: &Array4<f64>, first: usize) -> (Array4<f64>, Array4<f64>) {
    (
        d.slice(s![.., ..first, .., ..]).to_owned(),
        d.slice(s![.., first.., .., ..]).to_owned(),
    )
}

/// Softmax across the channel axis.
pub fn softmax_channels(logits: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = logits.dim();
    let mut out = Array4::<f64>::zeros((n, c, h, w));
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut m = f64::NEG_INFINITY;
                for ch in 0..c {
                    m = m.max(logits[[i, ch, y, x]]);
                }
                let mut z = 0.0;
                for ch in 0..c {
                    let e = (logits[[i, ch, y, x]] - m).exp();
                    out[[i, ch, y, x]] = e;
                    z += e;
                }
                for ch in 0..c {
                    out[[i, ch, y, x]] /= z;
                }
            }
        }
    }
    out
}

/// Backpropagates through [`softmax_channels`] given its output.
pub fn softmax_channels_backward(probs: &Array4<f64>, dprobs: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = probs.dim();
    let mut dz = Array4::<f64>::zeros((n, c, h, w));
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += probs[[i, ch, y, x]] * dprobs[[i, ch, y, x]];
                }
                for ch in 0..c {
                    dz[[i, ch, y, x]] = probs[[i, ch, y, x]] * (dprobs[[i, ch, y, x]] - dot);
                }
            }
        }
    }
    dz
}

/// Fully connected layer on row vectors.
#[derive(Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(inp: usize, out: usize, init: Init, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Param::new(uniform_init(&[out, inp], init.bound(inp), rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out]))),
            input: None,
        }
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality().expect("2-D weight")
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let mut y = x.dot(&self.w().t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b;
        if train {
            self.input = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without cached forward");
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
        }
        {
            let mut gb = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gb += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w())
    }
}

impl Module for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Two-layer perceptron `in → hidden → out` with a ReLU in between.
#[derive(Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    relu_mask: Option<Array2<f64>>,
}

impl Mlp {
    pub fn new(inp: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            fc1: Linear::new(inp, hidden, Init::Relu, rng),
            fc2: Linear::new(hidden, out, Init::Linear, rng),
            relu_mask: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let h = self.fc1.forward(x, train);
        if train {
            self.relu_mask = Some(h.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        let h = h.mapv(|v| v.max(0.0));
        self.fc2.forward(&h, train)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let dh = self.fc2.backward(dy);
        let mask = self.relu_mask.take().expect("mlp backward without cached forward");
        self.fc1.backward(&(dh * mask))
    }
}

impl Module for Mlp {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
    }
}
