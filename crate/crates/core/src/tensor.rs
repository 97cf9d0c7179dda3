//! Dense NCHW tensors and the handful of vector kernels the layers are built on.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type used by every network tensor.
///
/// Training runs in `f32`; the gradient checks also run in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: &'static str;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Batch of feature maps laid out `[n][c][h][w]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane_len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.plane_len();
        let off = (n * self.shape[1] + c) * len;
        &self.data[off..off + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let len = self.plane_len();
        let off = (n * self.shape[1] + c) * len;
        &mut self.data[off..off + len]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let [_, cs, hs, ws] = self.shape;
        &mut self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    /// Stacks equally shaped `[c][h][w]` samples into a batch.
    pub fn stack(samples: &[&Tensor4<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(samples.iter().map(|s| s.data.len()).sum());
        let mut n = 0;
        for s in samples {
            if s.shape[1..] != [c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    s.shape, first.shape
                )));
            }
            data.extend_from_slice(&s.data);
            n += s.shape[0];
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }
}

const LANES: usize = 16;

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with a fixed lane-wise reduction order, so results do not
/// depend on the target's vector width.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Lane-wise sum; same reduction order as [`dot`].
#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let ra = ca.remainder();
    for x in ca {
        for k in 0..LANES {
            acc[k] += x[k];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    for x in ra {
        s += *x;
    }
    s
}

const TILE: usize = 512;

/// `out[M×N] += a[M×K] · b[K×N]`
pub(crate) fn gemm_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE).min(n);
        for mi in 0..m {
            let orow = &mut out[mi * n + j0..mi * n + j1];
            let arow = &a[mi * k..(mi + 1) * k];
            for (ki, &av) in arow.iter().enumerate() {
                if av != T::zero() {
                    axpy(orow, av, &b[ki * n + j0..ki * n + j1]);
                }
            }
        }
        j0 = j1;
    }
}

/// `out[K×N] += aᵀ · g` where `a` is `M×K` and `g` is `M×N`.
pub(crate) fn gemm_at_b_acc<T: Scalar>(
    out: &mut [T],
    a: &[T],
    g: &[T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), k * n);
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + TILE).min(n);
        for ki in 0..k {
            let orow = &mut out[ki * n + j0..ki * n + j1];
            for mi in 0..m {
                let av = a[mi * k + ki];
                if av != T::zero() {
                    axpy(orow, av, &g[mi * n + j0..mi * n + j1]);
                }
            }
        }
        j0 = j1;
    }
}

/// `out[M×K] += g[M×N] · bᵀ` where `b` is `K×N`.
pub(crate) fn gemm_a_bt_acc<T: Scalar>(
    out: &mut [T],
    g: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * k);
    for mi in 0..m {
        let grow = &g[mi * n..(mi + 1) * n];
        for ki in 0..k {
            out[mi * k + ki] += dot(grow, &b[ki * n..(ki + 1) * n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    out[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn gemm_variants_match_naive_product() {
        let (m, k, n) = (5, 7, 600);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13 % 17) as f64) * 0.25).collect();
        let expect = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, &a, &b, m, k, n);
        assert_eq!(out, expect);

        // aᵀ·g with a = (M×K): compare against explicit transpose
        let g = expect.clone();
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let mut out2 = vec![0.0; k * n];
        gemm_at_b_acc(&mut out2, &a, &g, m, k, n);
        let want2 = naive(&at, &g, k, m, n);
        for (x, y) in out2.iter().zip(&want2) {
            assert!((x - y).abs() < 1e-9 * y.abs().max(1.0));
        }

        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let mut out3 = vec![0.0; m * k];
        gemm_a_bt_acc(&mut out3, &g, &b, m, k, n);
        let want3 = naive(&g, &bt, m, n, k);
        for (x, y) in out3.iter().zip(&want3) {
            assert!((x - y).abs() < 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn dot_and_sum_handle_remainders() {
        let a: Vec<f32> = (0..37).map(|i| i as f32).collect();
        let ones = vec![1.0f32; 37];
        assert_eq!(dot(&a, &ones), 666.0);
        assert_eq!(sum(&a), 666.0);
    }

    #[test]
    fn stack_rejects_mismatched_samples() {
        let a = Tensor4::<f32>::zeros([1, 2, 3, 4]);
        let b = Tensor4::<f32>::zeros([1, 2, 4, 3]);
        assert!(Tensor4::stack(&[&a, &b]).is_err());
        let s = Tensor4::stack(&[&a, &a]).unwrap();
        assert_eq!(s.shape(), [2, 2, 3, 4]);
    }
}
