//! Layer kernels: forward and reverse-mode passes for the conv / pool / norm
//! primitives the encoder and predictor are built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sum, Scalar, Tensor4};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn filled(len: usize, v: T) -> Self {
        Self::new(vec![v; len])
    }

    pub fn kaiming(len: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Self::new((0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Per-sample spatial mask at one layer resolution, as `0`/`1` multipliers.
#[derive(Clone, Debug)]
pub struct LayerMask<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LayerMask<T> {
    #[inline]
    pub fn plane(&self, n: usize) -> &[T] {
        let len = self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }

    /// `x[n, c, :, :] *= mask[n, :, :]`
    pub fn apply(&self, x: &mut Tensor4<T>) {
        let c = x.c();
        for n in 0..x.n() {
            let m = self.plane(n);
            for ch in 0..c {
                for (v, &k) in x.plane_mut(n, ch).iter_mut().zip(m) {
                    *v *= k;
                }
            }
        }
    }
}

/// First index range of outputs whose tap `k` lands inside `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[inline]
pub(crate) fn out_dim(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return Err(Error::Shape(format!(
            "input extent {len} too small for kernel {k} with padding {pad}"
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

/// Dense convolution (`groups = 1`), bias-free, via im2col.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][kh][kw]`
    pub weight: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::kaiming(out_channels * fan_in, fan_in, rng),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_dim(h, self.kernel.0, self.stride, self.padding)?,
            out_dim(w, self.kernel.1, self.stride, self.padding)?,
        ))
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        let n = ho * wo;
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(ho, h, ky, s, p);
                for kx in 0..kw {
                    let row = &mut cols[((ci * kh + ky) * kw + kx) * n..][..n];
                    row.fill(T::zero());
                    let (xlo, xhi) = valid_range(wo, w, kx, s, p);
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, gx: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        let n = ho * wo;
        for ci in 0..self.in_channels {
            let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (ylo, yhi) = valid_range(ho, h, ky, s, p);
                for kx in 0..kw {
                    let row = &cols[((ci * kh + ky) * kw + kx) * n..][..n];
                    let (xlo, xhi) = valid_range(wo, w, kx, s, p);
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let src = &row[oy * wo..(oy + 1) * wo];
                        for ox in xlo..xhi {
                            dst[ox * s + kx - p] += src[ox];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [nb, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (ho, wo) = self.out_hw(h, w)?;
        let k = self.in_channels * self.kernel.0 * self.kernel.1;
        let mut out = Tensor4::zeros([nb, self.out_channels, ho, wo]);
        let mut cols = vec![T::zero(); k * ho * wo];
        for n in 0..nb {
            self.im2col(x.sample(n), h, w, ho, wo, &mut cols);
            gemm_acc(out.sample_mut(n), &self.weight.value, &cols, self.out_channels, k, ho * wo);
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        self.backward_impl(x, dy, true).expect("input gradient requested")
    }

    /// Accumulates the weight gradient only.
    pub fn backward_weights(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>) {
        self.backward_impl(x, dy, false);
    }

    fn backward_impl(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>, need_dx: bool) -> Option<Tensor4<T>> {
        let [nb, _, h, w] = x.shape();
        let (ho, wo) = (dy.h(), dy.w());
        let k = self.in_channels * self.kernel.0 * self.kernel.1;
        let mut dx = need_dx.then(|| Tensor4::zeros(x.shape()));
        let mut cols = vec![T::zero(); k * ho * wo];
        let mut dcols = if need_dx { vec![T::zero(); k * ho * wo] } else { Vec::new() };
        for n in 0..nb {
            self.im2col(x.sample(n), h, w, ho, wo, &mut cols);
            let g = dy.sample(n);
            gemm_a_bt_acc(&mut self.weight.grad, g, &cols, self.out_channels, k, ho * wo);
            if let Some(dx) = dx.as_mut() {
                dcols.fill(T::zero());
                gemm_at_b_acc(&mut dcols, &self.weight.value, g, self.out_channels, k, ho * wo);
                self.col2im(&dcols, h, w, ho, wo, dx.sample_mut(n));
            }
        }
        dx
    }
}

/// Per-channel (depthwise) convolution, bias-free.
#[derive(Clone, Debug)]
pub struct DepthwiseConv<T> {
    pub channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// `[c][kh][kw]`
    pub weight: Param<T>,
}

impl<T: Scalar> DepthwiseConv<T> {
    pub fn new(
        channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel.0 * kernel.1;
        Self {
            channels,
            kernel,
            stride,
            padding,
            weight: Param::kaiming(channels * fan_in, fan_in, rng),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [nb, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "depthwise conv expects {} channels, got {c}",
                self.channels
            )));
        }
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        let ho = out_dim(h, kh, s, p)?;
        let wo = out_dim(w, kw, s, p)?;
        let mut out = Tensor4::zeros([nb, c, ho, wo]);
        for n in 0..nb {
            for ch in 0..c {
                let src = x.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                let wk = &self.weight.value[ch * kh * kw..(ch + 1) * kh * kw];
                for ky in 0..kh {
                    let (ylo, yhi) = valid_range(ho, h, ky, s, p);
                    for kx in 0..kw {
                        let wv = wk[ky * kw + kx];
                        let (xlo, xhi) = valid_range(wo, w, kx, s, p);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * s + ky - p;
                            let orow = &mut dst[oy * wo..(oy + 1) * wo];
                            let irow = &src[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let off = xlo + kx - p;
                                axpy(&mut orow[xlo..xhi], wv, &irow[off..off + xhi - xlo]);
                            } else {
                                for ox in xlo..xhi {
                                    orow[ox] += wv * irow[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let [nb, c, h, w] = x.shape();
        let (kh, kw) = self.kernel;
        let (s, p) = (self.stride, self.padding);
        let (ho, wo) = (dy.h(), dy.w());
        let mut dx = Tensor4::zeros(x.shape());
        for n in 0..nb {
            for ch in 0..c {
                let src = x.plane(n, ch);
                let g = dy.plane(n, ch);
                let wk = ch * kh * kw;
                let dst = dx.plane_mut(n, ch);
                for ky in 0..kh {
                    let (ylo, yhi) = valid_range(ho, h, ky, s, p);
                    for kx in 0..kw {
                        let wv = self.weight.value[wk + ky * kw + kx];
                        let (xlo, xhi) = valid_range(wo, w, kx, s, p);
                        if xlo >= xhi {
                            continue;
                        }
                        let mut gw = T::zero();
                        for oy in ylo..yhi {
                            let iy = oy * s + ky - p;
                            let grow = &g[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let off = xlo + kx - p;
                                let len = xhi - xlo;
                                gw += dot(&grow[xlo..xhi], &src[iy * w + off..iy * w + off + len]);
                                axpy(&mut dst[iy * w + off..iy * w + off + len], wv, &grow[xlo..xhi]);
                            } else {
                                for ox in xlo..xhi {
                                    let ix = ox * s + kx - p;
                                    gw += grow[ox] * src[iy * w + ix];
                                    dst[iy * w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        self.weight.grad[wk + ky * kw + kx] += gw;
                    }
                }
            }
        }
        dx
    }
}

/// 1×1 convolution, bias-free: a per-pixel matrix product.
#[derive(Clone, Debug)]
pub struct PointwiseConv<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in]`
    pub weight: Param<T>,
}

impl<T: Scalar> PointwiseConv<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: Param::kaiming(in_channels * out_channels, in_channels, rng),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [nb, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "pointwise conv expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut out = Tensor4::zeros([nb, self.out_channels, h, w]);
        for n in 0..nb {
            gemm_acc(
                out.sample_mut(n),
                &self.weight.value,
                x.sample(n),
                self.out_channels,
                self.in_channels,
                h * w,
            );
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let hw = x.plane_len();
        let mut dx = Tensor4::zeros(x.shape());
        for n in 0..x.n() {
            let g = dy.sample(n);
            gemm_a_bt_acc(
                &mut self.weight.grad,
                g,
                x.sample(n),
                self.out_channels,
                self.in_channels,
                hw,
            );
            gemm_at_b_acc(
                dx.sample_mut(n),
                &self.weight.value,
                g,
                self.out_channels,
                self.in_channels,
                hw,
            );
        }
        dx
    }
}

/// Max pooling with implicit `-inf` padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool {
    /// Returns the pooled map and, per output, the flat in-plane index of the winner.
    pub fn forward<T: Scalar>(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
        self.pool(x, true)
    }

    /// Pooled map only.
    pub fn forward_values<T: Scalar>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.pool(x, false)?.0)
    }

    fn pool<T: Scalar>(&self, x: &Tensor4<T>, with_arg: bool) -> Result<(Tensor4<T>, Vec<u32>)> {
        let [nb, c, h, w] = x.shape();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ho = out_dim(h, k, s, p)?;
        let wo = out_dim(w, k, s, p)?;
        let mut out = Tensor4::zeros([nb, c, ho, wo]);
        let mut arg = if with_arg { vec![0u32; nb * c * ho * wo] } else { Vec::new() };
        let plane_out = ho * wo;
        let xr: Vec<(usize, usize)> = (0..wo)
            .map(|ox| ((ox * s).saturating_sub(p), (ox * s + k - p).min(w)))
            .collect();
        let mut best = vec![T::zero(); wo];
        let mut bi = vec![0u32; wo];
        for n in 0..nb {
            for ch in 0..c {
                let src = x.plane(n, ch);
                let base = (n * c + ch) * plane_out;
                let dst = out.plane_mut(n, ch);
                for oy in 0..ho {
                    let y0 = (oy * s).saturating_sub(p);
                    let y1 = (oy * s + k - p).min(h);
                    best.fill(T::neg_infinity());
                    for (ox, &(x0, _)) in xr.iter().enumerate() {
                        bi[ox] = (y0 * w + x0) as u32;
                    }
                    for iy in y0..y1 {
                        let row = &src[iy * w..(iy + 1) * w];
                        for (ox, &(x0, x1)) in xr.iter().enumerate() {
                            for ix in x0..x1 {
                                let v = row[ix];
                                let better = v > best[ox];
                                best[ox] = if better { v } else { best[ox] };
                                bi[ox] = if better { (iy * w + ix) as u32 } else { bi[ox] };
                            }
                        }
                    }
                    dst[oy * wo..(oy + 1) * wo].copy_from_slice(&best);
                    if with_arg {
                        arg[base + oy * wo..base + (oy + 1) * wo].copy_from_slice(&bi);
                    }
                }
            }
        }
        Ok((out, arg))
    }

    pub fn backward<T: Scalar>(&self, in_shape: [usize; 4], arg: &[u32], dy: &Tensor4<T>) -> Tensor4<T> {
        let mut dx = Tensor4::zeros(in_shape);
        let plane_out = dy.plane_len();
        for n in 0..dy.n() {
            for ch in 0..dy.c() {
                let base = (n * dy.c() + ch) * plane_out;
                let g = dy.plane(n, ch);
                let dst = dx.plane_mut(n, ch);
                for (o, &gv) in g.iter().enumerate() {
                    dst[arg[base + o] as usize] += gv;
                }
            }
        }
        dx
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over `(n, h, w)` per channel, optionally restricted
/// to the unmasked positions of a [`LayerMask`].
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// What the normalization backward pass needs.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    /// Normalized input; zero at masked positions.
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub count: usize,
    pub train: bool,
}

fn masked_sum<T: Scalar>(x: &[T], m: &[T]) -> T {
    dot(x, m)
}

fn masked_centered_sq<T: Scalar>(x: &[T], m: Option<&[T]>, mean: T, scratch: &mut Vec<T>) -> T {
    scratch.clear();
    match m {
        Some(m) => scratch.extend(x.iter().zip(m).map(|(&v, &k)| {
            let d = (v - mean) * k;
            d * d
        })),
        None => scratch.extend(x.iter().map(|&v| {
            let d = v - mean;
            d * d
        })),
    }
    sum(scratch)
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(channels, T::one()),
            beta: Param::filled(channels, T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Normalizes `x`. With a mask, statistics use unmasked positions only and
    /// masked outputs are exactly zero. In training mode batch statistics are
    /// used and folded into the running estimates.
    ///
    /// With `record` the normalized input is kept for [`BatchNorm::backward`];
    /// without it the input buffer is transformed in place.
    pub fn forward(
        &mut self,
        mut x: Tensor4<T>,
        mask: Option<&LayerMask<T>>,
        train: bool,
        record: bool,
    ) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
        let [nb, c, h, w] = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels
            )));
        }
        if let Some(m) = mask {
            if (m.n, m.h, m.w) != (nb, h, w) {
                return Err(Error::Shape(format!(
                    "mask {}x{}x{} does not match feature map {nb}x{h}x{w}",
                    m.n, m.h, m.w
                )));
            }
        }
        let count = match mask {
            Some(m) => m.data.iter().filter(|v| **v != T::zero()).count(),
            None => nb * h * w,
        };
        if count == 0 {
            return Err(Error::Mask(
                "normalization layer has no unmasked positions".into(),
            ));
        }
        let cnt = T::from_f64_lossy(count as f64);
        let eps = T::from_f64_lossy(self.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        let mut scratch = Vec::with_capacity(h * w);
        if train {
            for ch in 0..c {
                let mut s = T::zero();
                for n in 0..nb {
                    s += match mask {
                        Some(m) => masked_sum(x.plane(n, ch), m.plane(n)),
                        None => sum(x.plane(n, ch)),
                    };
                }
                let mean = s / cnt;
                let mut ss = T::zero();
                for n in 0..nb {
                    ss += masked_centered_sq(x.plane(n, ch), mask.map(|m| m.plane(n)), mean, &mut scratch);
                }
                let var = ss / cnt;
                means[ch] = mean;
                inv_std[ch] = T::one() / (var + eps).sqrt();
                let mom = T::from_f64_lossy(self.momentum);
                let unbiased = if count > 1 {
                    var * cnt / (cnt - T::one())
                } else {
                    var
                };
                self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mean;
                self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * unbiased;
            }
        } else {
            for ch in 0..c {
                means[ch] = self.running_mean[ch];
                inv_std[ch] = T::one() / (self.running_var[ch] + eps).sqrt();
            }
        }
        let record_cache = record;
        for n in 0..nb {
            for ch in 0..c {
                let (mean, inv) = (means[ch], inv_std[ch]);
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let plane = x.plane_mut(n, ch);
                match (mask, record_cache) {
                    (Some(m), true) => {
                        for (v, &k) in plane.iter_mut().zip(m.plane(n)) {
                            *v = (*v - mean) * inv * k;
                        }
                    }
                    (None, true) => {
                        for v in plane.iter_mut() {
                            *v = (*v - mean) * inv;
                        }
                    }
                    (Some(m), false) => {
                        for (v, &k) in plane.iter_mut().zip(m.plane(n)) {
                            let xh = (*v - mean) * inv * k;
                            *v = (g * xh + b) * k;
                        }
                    }
                    (None, false) => {
                        for v in plane.iter_mut() {
                            let xh = (*v - mean) * inv;
                            *v = g * xh + b;
                        }
                    }
                }
            }
        }
        if !record_cache {
            return Ok((x, None));
        }
        let xhat = x;
        let mut y = Tensor4::zeros(xhat.shape());
        for n in 0..nb {
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let yo = y.plane_mut(n, ch);
                match mask {
                    Some(m) => {
                        for ((o, &v), &k) in yo.iter_mut().zip(xhat.plane(n, ch)).zip(m.plane(n)) {
                            *o = (g * v + b) * k;
                        }
                    }
                    None => {
                        for (o, &v) in yo.iter_mut().zip(xhat.plane(n, ch)) {
                            *o = g * v + b;
                        }
                    }
                }
            }
        }
        Ok((
            y,
            Some(BnCache {
                xhat,
                inv_std,
                count,
                train,
            }),
        ))
    }

    /// Gradient with respect to the input, computed in place in `dy`.
    pub fn backward(
        &mut self,
        cache: &BnCache<T>,
        mask: Option<&LayerMask<T>>,
        mut dy: Tensor4<T>,
    ) -> Tensor4<T> {
        let [nb, c, _, _] = dy.shape();
        let cnt = T::from_f64_lossy(cache.count as f64);
        for ch in 0..c {
            let mut sdy = T::zero();
            let mut sdyx = T::zero();
            for n in 0..nb {
                let g = dy.plane(n, ch);
                sdy += match mask {
                    Some(m) => dot(g, m.plane(n)),
                    None => sum(g),
                };
                sdyx += dot(g, cache.xhat.plane(n, ch));
            }
            self.gamma.grad[ch] += sdyx;
            self.beta.grad[ch] += sdy;
            let gamma = self.gamma.value[ch];
            let inv = cache.inv_std[ch];
            for n in 0..nb {
                let xh = cache.xhat.plane(n, ch);
                let out = dy.plane_mut(n, ch);
                if cache.train {
                    let scale = gamma * inv / cnt;
                    for (o, &xv) in out.iter_mut().zip(xh) {
                        *o = scale * (cnt * *o - sdy - xv * sdyx);
                    }
                } else {
                    let scale = gamma * inv;
                    for o in out.iter_mut() {
                        *o = scale * *o;
                    }
                }
                if let Some(m) = mask {
                    for (o, &k) in out.iter_mut().zip(m.plane(n)) {
                        *o *= k;
                    }
                }
            }
        }
        dy
    }
}

pub fn relu_forward<T: Scalar>(mut x: Tensor4<T>) -> (Tensor4<T>, Vec<bool>) {
    let mut active = Vec::with_capacity(x.data().len());
    for v in x.data_mut() {
        let on = *v > T::zero();
        if !on {
            *v = T::zero();
        }
        active.push(on);
    }
    (x, active)
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor4<T>) {
    for v in x.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Scalar>(mut dy: Tensor4<T>, active: &[bool]) -> Tensor4<T> {
    for (g, &on) in dy.data_mut().iter_mut().zip(active) {
        if !on {
            *g = T::zero();
        }
    }
    dy
}
