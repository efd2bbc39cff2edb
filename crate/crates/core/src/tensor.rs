//! Dense `channels × height × width` grids and the handful of kernels the
//! network needs: same-padded convolution (forward and adjoint), elementwise
//! activations, the Hadamard product, and channel concatenation.
//!
//! Storage is generic over [`Real`] and defaults to `f32`; convolution
//! reductions always accumulate in `f64`. The `f64` instantiation exists so
//! gradients can be checked against finite differences without storage
//! rounding swamping the difference quotient.

use std::fmt;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};

/// Upper bound on the number of `f64` entries in one im2col buffer.
const COL_BUDGET: usize = 1 << 22;

/// Scalar type of grid storage.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn cast_from(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn cast_from(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A dense rank-3 field stored channel-major, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Grid<T: Real = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::Argument(format!("grid dimensions must be positive, got {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Grid::new",
                format!("{shape} ({} values)", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        assert!(shape.len() > 0, "grid dimensions must be positive");
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    /// Uniform draws in `[lo, hi)`.
    pub fn random_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len()).map(|_| T::cast_from(rng.random_range(lo..hi))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::cast_from(v.as_f64())).collect(),
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane = self.shape.plane();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Copies channels `start..start + count` into a new grid.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Grid<T>> {
        if count == 0 || start + count > self.shape.channels {
            return Err(Error::Argument(format!(
                "channel range {start}..{} out of bounds for {}",
                start + count,
                self.shape
            )));
        }
        let plane = self.shape.plane();
        let shape = Shape::new(count, self.shape.height, self.shape.width);
        Ok(Grid {
            shape,
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Grid<T> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Grid<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Grid<T>> {
        self.expect_shape(other.shape, op)?;
        Ok(Grid {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Grid<T>) -> Result<Grid<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Grid<T>) -> Result<Grid<T>> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Grid<T> {
        self.map(|v| v * factor)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Grid<T>) -> Result<()> {
        self.expect_shape(other.shape, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub(crate) fn expect_shape(&self, shape: Shape, op: &'static str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, self.shape, shape));
        }
        Ok(())
    }
}

pub fn sigmoid<T: Real>(input: &Grid<T>) -> Grid<T> {
    input.map(sigmoid_scalar)
}

pub fn tanh<T: Real>(input: &Grid<T>) -> Grid<T> {
    input.map(T::tanh)
}

pub fn relu<T: Real>(input: &Grid<T>) -> Grid<T> {
    input.map(|v| v.max(T::zero()))
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise product.
pub fn hadamard<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<Grid<T>> {
    a.zip_map(b, "hadamard", |x, y| x * y)
}

/// Stacks `a`'s channels followed by `b`'s.
pub fn concat_channels<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<Grid<T>> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Grid {
        shape: Shape::new(a.channels() + b.channels(), a.height(), a.width()),
        data,
    })
}

/// Convolution filter bank with one bias per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConvKernel<T: Real = f32> {
    out_channels: usize,
    in_channels: usize,
    k: usize,
    /// `[out][in][dy][dx]`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(out_channels: usize, in_channels: usize, k: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || k == 0 {
            return Err(Error::Argument("kernel dimensions must be positive".into()));
        }
        if k % 2 == 0 {
            return Err(Error::Argument(format!("kernel size must be odd for same padding, got {k}")));
        }
        let expected = out_channels * in_channels * k * k;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                "ConvKernel::new",
                format!("{out_channels}x{in_channels}x{k}x{k} (+{out_channels} bias)"),
                format!("{} weights, {} bias", weights.len(), bias.len()),
            ));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Argument("kernel contains non-finite values".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            k,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        Self::new(
            out_channels,
            in_channels,
            k,
            vec![T::zero(); out_channels * in_channels * k * k],
            vec![T::zero(); out_channels],
        )
        .expect("valid kernel dimensions")
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot_uniform(out_channels: usize, in_channels: usize, k: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_channels * k * k) as f64;
        let fan_out = (out_channels * k * k) as f64;
        // Drawn in f32 so both precisions see the same initial values.
        let limit = (6.0 / (fan_in + fan_out)).sqrt() as f32;
        let mut kernel = Self::zeros(out_channels, in_channels, k);
        for w in &mut kernel.weights {
            *w = T::cast_from(rng.random_range(-limit..limit) as f64);
        }
        kernel
    }

    /// `k = 1` kernel mapping channel `c` to channel `c`.
    pub fn identity(channels: usize) -> Self {
        let mut kernel = Self::zeros(channels, channels, 1);
        for c in 0..channels {
            kernel.weights[c * channels + c] = T::one();
        }
        kernel
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn weight_index(&self, o: usize, c: usize, dy: usize, dx: usize) -> usize {
        ((o * self.in_channels + c) * self.k + dy) * self.k + dx
    }

    fn check_input(&self, input: Shape, op: &'static str) -> Result<()> {
        if input.channels != self.in_channels {
            return Err(Error::shape(
                op,
                format!("input {input}"),
                format!("kernel {}x{}x{}x{}", self.out_channels, self.in_channels, self.k, self.k),
            ));
        }
        Ok(())
    }

    fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w.as_f64()).collect()
    }
}

/// Gradients of a convolution with respect to its input and kernel.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real = f32> {
    pub input: Option<Grid<T>>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Rows of the output image processed per im2col pass.
fn rows_per_chunk(patch: usize, height: usize, width: usize) -> usize {
    (COL_BUDGET / (patch * width).max(1)).clamp(1, height)
}

/// Fills `col` (`patch × rows·width`) with the zero-padded receptive fields of
/// output rows `y0..y0 + rows`.
fn im2col<T: Real>(input: &Grid<T>, k: usize, y0: usize, rows: usize, col: &mut [f64]) {
    let (h, w) = (input.height() as isize, input.width());
    let half = (k / 2) as isize;
    let n = rows * w;
    let mut r = 0;
    for c in 0..input.channels() {
        let plane = input.channel(c);
        for dy in 0..k {
            for dx in 0..k {
                let dst = &mut col[r * n..(r + 1) * n];
                let shift = dx as isize - half;
                let x_lo = (-shift).max(0) as usize;
                let x_hi = (w as isize - shift).min(w as isize).max(0) as usize;
                for j in 0..rows {
                    let sy = (y0 + j) as isize + dy as isize - half;
                    let row = &mut dst[j * w..(j + 1) * w];
                    if sy < 0 || sy >= h || x_lo >= x_hi {
                        row.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    row[..x_lo].fill(0.0);
                    row[x_hi..].fill(0.0);
                    let s0 = (x_lo as isize + shift) as usize;
                    for (d, &s) in row[x_lo..x_hi].iter_mut().zip(&src[s0..]) {
                        *d = s.as_f64();
                    }
                }
                r += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `dst` (`channels × h × w`).
fn col2im(col: &[f64], channels: usize, k: usize, h: usize, w: usize, y0: usize, rows: usize, dst: &mut [f64]) {
    let half = (k / 2) as isize;
    let n = rows * w;
    let mut r = 0;
    for c in 0..channels {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for dy in 0..k {
            for dx in 0..k {
                let src = &col[r * n..(r + 1) * n];
                let shift = dx as isize - half;
                let x_lo = (-shift).max(0) as usize;
                let x_hi = (w as isize - shift).min(w as isize).max(0) as usize;
                for j in 0..rows {
                    let sy = (y0 + j) as isize + dy as isize - half;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let row = &src[j * w..(j + 1) * w];
                    let s0 = (x_lo as isize + shift) as usize;
                    let target = &mut plane[sy as usize * w + s0..];
                    for (t, &v) in target.iter_mut().zip(&row[x_lo..x_hi]) {
                        *t += v;
                    }
                }
                r += 1;
            }
        }
    }
}

/// Row-major `c (m×n) = alpha·a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut().take(m * n) {
            *v *= beta;
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and the
    // contiguous row-major `c` (m×n); lengths are checked by the callers below.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Zero-padded "same" 2-D convolution (cross-correlation, as is conventional).
pub fn conv2d<T: Real>(input: &Grid<T>, kernel: &ConvKernel<T>) -> Result<Grid<T>> {
    kernel.check_input(input.shape(), "conv2d")?;
    let (h, w) = (input.height(), input.width());
    let (oc, k) = (kernel.out_channels, kernel.k);
    let patch = kernel.in_channels * k * k;
    let wmat = kernel.weights_f64();
    let chunk = rows_per_chunk(patch, h, w);

    let mut out = vec![T::zero(); oc * h * w];
    let mut col = vec![0.0f64; patch * chunk * w];
    let mut acc = vec![0.0f64; oc * chunk * w];
    let mut y0 = 0;
    while y0 < h {
        let rows = chunk.min(h - y0);
        let n = rows * w;
        im2col(input, k, y0, rows, &mut col[..patch * n]);
        gemm(
            oc,
            patch,
            n,
            &wmat,
            (patch as isize, 1),
            &col[..patch * n],
            (n as isize, 1),
            0.0,
            &mut acc[..oc * n],
        );
        for o in 0..oc {
            let b = kernel.bias[o].as_f64();
            let dst = &mut out[o * h * w + y0 * w..o * h * w + y0 * w + n];
            for (d, &a) in dst.iter_mut().zip(&acc[o * n..(o + 1) * n]) {
                *d = T::cast_from(a + b);
            }
        }
        y0 += rows;
    }
    Grid::new(Shape::new(oc, h, w), out)
}

/// Adjoint of [`conv2d`] given the upstream gradient `grad_out`.
///
/// The input gradient is only formed when `want_input` is set.
pub fn conv2d_backward<T: Real>(input: &Grid<T>, kernel: &ConvKernel<T>, grad_out: &Grid<T>, want_input: bool) -> Result<ConvGrads<T>> {
    kernel.check_input(input.shape(), "conv2d_backward")?;
    let (h, w) = (input.height(), input.width());
    grad_out.expect_shape(Shape::new(kernel.out_channels, h, w), "conv2d_backward")?;
    let (oc, ic, k) = (kernel.out_channels, kernel.in_channels, kernel.k);
    let patch = ic * k * k;
    let chunk = rows_per_chunk(patch, h, w);

    let bias = (0..oc).map(|o| grad_out.channel(o).iter().map(|&v| v.as_f64()).sum()).collect();
    let mut dw = vec![0.0f64; oc * patch];
    let wmat = if want_input { kernel.weights_f64() } else { Vec::new() };
    let mut dinput = if want_input { vec![0.0f64; ic * h * w] } else { Vec::new() };

    let mut col = vec![0.0f64; patch * chunk * w];
    let mut dout = vec![0.0f64; oc * chunk * w];
    let mut y0 = 0;
    while y0 < h {
        let rows = chunk.min(h - y0);
        let n = rows * w;
        for o in 0..oc {
            let src = &grad_out.channel(o)[y0 * w..y0 * w + n];
            for (d, &s) in dout[o * n..(o + 1) * n].iter_mut().zip(src) {
                *d = s.as_f64();
            }
        }
        im2col(input, k, y0, rows, &mut col[..patch * n]);
        // dW += dOut · colᵀ
        gemm(
            oc,
            n,
            patch,
            &dout[..oc * n],
            (n as isize, 1),
            &col[..patch * n],
            (1, n as isize),
            1.0,
            &mut dw,
        );
        if want_input {
            // dcol = Wᵀ · dOut, reusing the column buffer.
            gemm(
                patch,
                oc,
                n,
                &wmat,
                (1, patch as isize),
                &dout[..oc * n],
                (n as isize, 1),
                0.0,
                &mut col[..patch * n],
            );
            col2im(&col[..patch * n], ic, k, h, w, y0, rows, &mut dinput);
        }
        y0 += rows;
    }
    let input = if want_input {
        Some(Grid::new(input.shape(), dinput.into_iter().map(T::cast_from).collect())?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weights: dw,
        bias,
    })
}

/// Central-difference gradient of a scalar objective, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let p = params[i];
        probe[i] = p + epsilon;
        let up = f(&probe);
        probe[i] = p - epsilon;
        let down = f(&probe);
        probe[i] = p;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure { index: i });
        }
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &Grid, kernel: &ConvKernel) -> Grid {
        let (h, w, k) = (input.height() as isize, input.width() as isize, kernel.k() as isize);
        let half = k / 2;
        Grid::<f32>::from_fn(Shape::new(kernel.out_channels(), input.height(), input.width()), |o, y, x| {
            let mut acc = kernel.bias[o] as f64;
            for c in 0..kernel.in_channels() {
                for dy in 0..k {
                    for dx in 0..k {
                        let sy = y as isize + dy - half;
                        let sx = x as isize + dx - half;
                        if sy < 0 || sy >= h || sx < 0 || sx >= w {
                            continue;
                        }
                        let wv = kernel.weights[kernel.weight_index(o, c, dy as usize, dx as usize)] as f64;
                        acc += wv * input.get(c, sy as usize, sx as usize) as f64;
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn zero_input_leaves_bias() {
        let input = Grid::<f32>::zeros(Shape::new(1, 3, 3));
        let kernel = ConvKernel::<f32>::new(1, 1, 1, vec![5.0], vec![2.0]).unwrap();
        let out = conv2d(&input, &kernel).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn single_pixel_sees_only_center_tap() {
        let input = Grid::<f32>::filled(Shape::new(1, 1, 1), 1.75);
        let kernel = ConvKernel::<f32>::new(1, 1, 3, vec![1.0; 9], vec![0.0]).unwrap();
        assert_eq!(conv2d(&input, &kernel).unwrap().data(), &[1.75]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = Grid::<f32>::random_uniform(Shape::new(2, 4, 4), -1.0, 1.0, &mut rng);
        let mut kernel = ConvKernel::<f32>::glorot_uniform(3, 2, 3, &mut rng);
        kernel.bias = vec![0.1, -0.2, 0.3];
        let fast = conv2d(&input, &kernel).unwrap();
        let slow = naive_conv(&input, &kernel);
        assert_eq!(fast, slow);
    }

    #[test]
    fn chunked_rows_match_naive() {
        // Wide patch forces several im2col passes.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Grid::<f32>::random_uniform(Shape::new(3, 37, 23), -1.0, 1.0, &mut rng);
        let kernel = ConvKernel::<f32>::glorot_uniform(2, 3, 5, &mut rng);
        let chunk = rows_per_chunk(3 * 25, 37, 23);
        assert!(chunk >= 1);
        let fast = conv2d(&input, &kernel).unwrap();
        let slow = naive_conv(&input, &kernel);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Grid::<f32>::zeros(Shape::new(2, 3, 3));
        let kernel = ConvKernel::<f32>::zeros(1, 3, 3);
        let err = conv2d(&input, &kernel).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3x3") && msg.contains("1x3x3x3"), "{msg}");
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvKernel::<f32>::new(1, 1, 2, vec![0.0; 4], vec![0.0]).is_err());
    }

    #[test]
    fn identity_kernel_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Grid::<f32>::random_uniform(Shape::new(3, 5, 6), -10.0, 10.0, &mut rng);
        assert_eq!(conv2d(&input, &ConvKernel::<f32>::identity(3)).unwrap(), input);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = Grid::<f32>::random_uniform(Shape::new(2, 4, 5), -1.0, 1.0, &mut rng);
        let kernel = ConvKernel::<f32>::glorot_uniform(3, 2, 3, &mut rng);
        let probe = Grid::<f32>::random_uniform(Shape::new(3, 4, 5), -1.0, 1.0, &mut rng);
        // Objective: <probe, conv(input)> is linear, so central differences are exact up to rounding.
        let objective = |inp: &Grid, ker: &ConvKernel| -> f64 {
            let out = naive_conv(inp, ker);
            out.data().iter().zip(probe.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let grads = conv2d_backward(&input, &kernel, &probe, true).unwrap();

        let flat: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        let fd = finite_diff_grad(
            |p| {
                let g = Grid::<f32>::new(input.shape(), p.iter().map(|&v| v as f32).collect()).unwrap();
                objective(&g, &kernel)
            },
            &flat,
            1e-2,
        )
        .unwrap();
        for (a, n) in grads.input.unwrap().data().iter().zip(&fd) {
            assert!((*a as f64 - n).abs() < 1e-4, "{a} vs {n}");
        }

        let wflat: Vec<f64> = kernel.weights.iter().map(|&v| v as f64).collect();
        let fd = finite_diff_grad(
            |p| {
                let mut ker = kernel.clone();
                ker.weights = p.iter().map(|&v| v as f32).collect();
                objective(&input, &ker)
            },
            &wflat,
            1e-2,
        )
        .unwrap();
        for (a, n) in grads.weights.iter().zip(&fd) {
            assert!((a - n).abs() < 1e-4, "{a} vs {n}");
        }
        let probe_sums: Vec<f64> = (0..3).map(|o| probe.channel(o).iter().map(|&v| v as f64).sum()).collect();
        for (a, b) in grads.bias.iter().zip(&probe_sums) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn activations_match_definitions() {
        let zeros = Grid::<f32>::zeros(Shape::new(1, 2, 2));
        assert!(sigmoid(&zeros).data().iter().all(|&v| v == 0.5));
        assert!(tanh(&zeros).data().iter().all(|&v| v == 0.0));
        let g = Grid::<f32>::new(Shape::new(1, 1, 2), vec![-3.5, 2.25]).unwrap();
        assert_eq!(relu(&g).data(), &[0.0, 2.25]);
        let ones = Grid::<f32>::filled(Shape::new(1, 2, 3), 1.0);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        for &v in sigmoid(&ones).data() {
            assert!((v as f64 - expected).abs() <= 1e-6);
        }
        assert!(sigmoid_scalar(-200.0f32).is_finite() && sigmoid_scalar(200.0f32) == 1.0);
    }

    #[test]
    fn hadamard_cases() {
        let a = Grid::<f32>::new(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Grid::<f32>::new(Shape::new(1, 2, 2), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[5.0, 12.0, 21.0, 32.0]);
        assert_eq!(hadamard(&a, &Grid::<f32>::filled(a.shape(), 1.0)).unwrap(), a);
        assert!(hadamard(&a, &Grid::<f32>::zeros(a.shape())).unwrap().is_zero());
        assert!(hadamard(&a, &Grid::<f32>::zeros(Shape::new(1, 2, 3))).is_err());
    }

    #[test]
    fn concat_orders_channels() {
        let a = Grid::<f32>::filled(Shape::new(1, 2, 2), 1.0);
        let b = Grid::<f32>::filled(Shape::new(1, 2, 2), 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 2, 2));
        assert_eq!(c.channel(0), a.data());
        assert_eq!(c.channel(1), b.data());
        assert!(concat_channels(&a, &Grid::<f32>::zeros(Shape::new(1, 3, 2))).is_err());
    }

    #[test]
    fn concat_skip_widths() {
        let a = Grid::<f32>::zeros(Shape::new(16, 129, 135));
        let b = Grid::<f32>::zeros(Shape::new(64, 129, 135));
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), Shape::new(80, 129, 135));
    }

    #[test]
    fn finite_diff_basics() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-5);
        let g = finite_diff_grad(|p| p.iter().sum(), &[0.3, -2.0, 7.5], 1e-3).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(matches!(
            finite_diff_grad(|p| 1.0 / (p[0] - 1.0).abs().min(0.0), &[1.0], 1e-3),
            Err(Error::OracleFailure { index: 0 })
        ));
        assert!(finite_diff_grad(|p| p[0], &[1.0], 0.0).is_err());
    }
}
