//! Batched convolution, transposed convolution and dense layers with hand-written
//! backward passes. Convolution activations are channel-major `[C, N, H, W]` so
//! that a whole batch is one GEMM.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::DenseArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            kernel: 4,
            stride: 2,
            padding: 1,
        }
    }
}

impl ConvGeometry {
    /// Output extent of a convolution over `input` pixels.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::InvalidArgument(format!(
                "input extent {input} too small for kernel {} with padding {}",
                self.kernel, self.padding
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Spatial extents of one convolution: `(h, w)` input, `(ho, wo)` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeometry,
}

/// `[C, N, H, W]` -> `[C*k*k, N*Ho*Wo]`.
fn im2col<R: Real>(x: &[R], win: Window) -> Vec<R> {
    let Window {
        channels,
        batch,
        h,
        w,
        ho,
        wo,
        geom,
    } = win;
    let k = geom.kernel;
    let cols_n = batch * ho * wo;
    let mut cols = vec![R::zero(); channels * k * k * cols_n];
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let src = &x[(c * batch + n) * h * w..(c * batch + n + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * geom.stride + ki) as isize - geom.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * geom.stride + kj) as isize - geom.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulating into `out` (`[C, N, H, W]`).
fn col2im<R: Real>(cols: &[R], win: Window, out: &mut [R]) {
    let Window {
        channels,
        batch,
        h,
        w,
        ho,
        wo,
        geom,
    } = win;
    let k = geom.kernel;
    let cols_n = batch * ho * wo;
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let dst = &mut out[(c * batch + n) * h * w..(c * batch + n + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * geom.stride + ki) as isize - geom.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[(n * ho + oy) * wo..(n * ho + oy + 1) * wo];
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * geom.stride + kj) as isize - geom.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn uniform_init<R: Real>(shape: &[usize], limit: f64, rng: &mut impl Rng) -> DenseArray<R> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lit::<R>(rng.gen_range(-limit..=limit))).collect();
    DenseArray::from_vec(shape, data).expect("consistent shape")
}

/// Convolution with weight `[C_out, C_in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<R> {
    pub weight: DenseArray<R>,
    pub bias: DenseArray<R>,
    pub geom: ConvGeometry,
}

#[derive(Debug, Clone)]
pub struct ConvCache<R> {
    cols: Vec<R>,
    win: Window,
}

impl<R: Real> Conv2d<R> {
    /// He-uniform initialisation with zero bias.
    pub fn new(c_in: usize, c_out: usize, geom: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = c_in * geom.kernel * geom.kernel;
        Self {
            weight: uniform_init(
                &[c_out, c_in, geom.kernel, geom.kernel],
                (6.0 / fan_in as f64).sqrt(),
                rng,
            ),
            bias: DenseArray::zeros(&[c_out]),
            geom,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            geom: self.geom,
        }
    }

    /// `x`: `[C_in, N, H, W]`; returns `[C_out, N, Ho, Wo]`.
    pub fn forward(&self, x: &[R], batch: usize, h: usize, w: usize) -> Result<(Vec<R>, ConvCache<R>)> {
        let c_in = self.c_in();
        if x.len() != c_in * batch * h * w {
            return Err(Error::shape("convolution input", c_in * batch * h * w, x.len()));
        }
        let win = Window {
            channels: c_in,
            batch,
            h,
            w,
            ho: self.geom.output_extent(h)?,
            wo: self.geom.output_extent(w)?,
            geom: self.geom,
        };
        let cols = im2col(x, win);
        let c_out = self.c_out();
        let n = batch * win.ho * win.wo;
        let kk = c_in * self.geom.kernel * self.geom.kernel;
        let mut out = vec![R::zero(); c_out * n];
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias.data()[co]);
        }
        R::gemm(
            c_out,
            kk,
            n,
            R::one(),
            self.weight.data(),
            false,
            &cols,
            false,
            R::one(),
            &mut out,
        );
        Ok((out, ConvCache { cols, win }))
    }

    pub fn output_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.geom.output_extent(h)?, self.geom.output_extent(w)?))
    }

    /// Accumulate parameter gradients; return the input adjoint when requested.
    pub fn backward(&self, cache: &ConvCache<R>, d_out: &[R], grads: &mut Self, input_grad: bool) -> Option<Vec<R>> {
        let win = cache.win;
        let c_out = self.c_out();
        let n = win.batch * win.ho * win.wo;
        let kk = win.channels * self.geom.kernel * self.geom.kernel;
        for (co, row) in d_out.chunks(n).enumerate() {
            grads.bias.data_mut()[co] += row.iter().copied().sum::<R>();
        }
        R::gemm(
            c_out,
            n,
            kk,
            R::one(),
            d_out,
            false,
            &cache.cols,
            true,
            R::one(),
            grads.weight.data_mut(),
        );
        if !input_grad {
            return None;
        }
        let mut d_cols = vec![R::zero(); kk * n];
        R::gemm(
            kk,
            c_out,
            n,
            R::one(),
            self.weight.data(),
            true,
            d_out,
            false,
            R::zero(),
            &mut d_cols,
        );
        let mut d_x = vec![R::zero(); win.channels * win.batch * win.h * win.w];
        col2im(&d_cols, win, &mut d_x);
        Some(d_x)
    }
}

/// Transposed convolution with weight `[C_in, C_out, k, k]`: the adjoint of a
/// convolution from `C_out` to `C_in` channels, plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<R> {
    pub weight: DenseArray<R>,
    pub bias: DenseArray<R>,
    pub geom: ConvGeometry,
}

#[derive(Debug, Clone)]
pub struct ConvTransposeCache<R> {
    input: Vec<R>,
    win: Window,
}

impl<R: Real> ConvTranspose2d<R> {
    pub fn new(c_in: usize, c_out: usize, geom: ConvGeometry, rng: &mut impl Rng) -> Self {
        // each output pixel receives about c_in * (k / stride)^2 taps
        let taps = (c_in * geom.kernel * geom.kernel / (geom.stride * geom.stride)).max(1);
        Self {
            weight: uniform_init(
                &[c_in, c_out, geom.kernel, geom.kernel],
                (6.0 / taps as f64).sqrt(),
                rng,
            ),
            bias: DenseArray::zeros(&[c_out]),
            geom,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
            geom: self.geom,
        }
    }

    /// `x`: `[C_in, N, Hi, Wi]`; returns `[C_out, N, Ho, Wo]`. The output extent
    /// must map back onto the input extent under the forward convolution.
    pub fn forward(
        &self,
        x: &[R],
        batch: usize,
        (hi, wi): (usize, usize),
        (ho, wo): (usize, usize),
    ) -> Result<(Vec<R>, ConvTransposeCache<R>)> {
        let c_in = self.c_in();
        if x.len() != c_in * batch * hi * wi {
            return Err(Error::shape(
                "transposed convolution input",
                c_in * batch * hi * wi,
                x.len(),
            ));
        }
        if self.geom.output_extent(ho)? != hi || self.geom.output_extent(wo)? != wi {
            return Err(Error::InvalidArgument(format!(
                "transposed convolution cannot map {hi}x{wi} to {ho}x{wo}"
            )));
        }
        let c_out = self.c_out();
        let win = Window {
            channels: c_out,
            batch,
            h: ho,
            w: wo,
            ho: hi,
            wo: wi,
            geom: self.geom,
        };
        let n = batch * hi * wi;
        let kk = c_out * self.geom.kernel * self.geom.kernel;
        let mut cols = vec![R::zero(); kk * n];
        R::gemm(
            kk,
            c_in,
            n,
            R::one(),
            self.weight.data(),
            true,
            x,
            false,
            R::zero(),
            &mut cols,
        );
        let mut out = vec![R::zero(); c_out * batch * ho * wo];
        col2im(&cols, win, &mut out);
        let plane = batch * ho * wo;
        for (co, chunk) in out.chunks_mut(plane).enumerate() {
            let b = self.bias.data()[co];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok((out, ConvTransposeCache { input: x.to_vec(), win }))
    }

    pub fn backward(
        &self,
        cache: &ConvTransposeCache<R>,
        d_out: &[R],
        grads: &mut Self,
        input_grad: bool,
    ) -> Option<Vec<R>> {
        let win = cache.win;
        let c_in = self.c_in();
        let plane = win.batch * win.h * win.w;
        for (co, chunk) in d_out.chunks(plane).enumerate() {
            grads.bias.data_mut()[co] += chunk.iter().copied().sum::<R>();
        }
        let d_cols = im2col(d_out, win);
        let n = win.batch * win.ho * win.wo;
        let kk = win.channels * self.geom.kernel * self.geom.kernel;
        R::gemm(
            c_in,
            n,
            kk,
            R::one(),
            &cache.input,
            false,
            &d_cols,
            true,
            R::one(),
            grads.weight.data_mut(),
        );
        if !input_grad {
            return None;
        }
        let mut d_x = vec![R::zero(); c_in * n];
        R::gemm(
            c_in,
            kk,
            n,
            R::one(),
            self.weight.data(),
            false,
            &d_cols,
            false,
            R::zero(),
            &mut d_x,
        );
        Some(d_x)
    }
}

/// Fully connected layer over a row-major `[N, in]` batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<R> {
    pub weight: DenseArray<R>,
    pub bias: DenseArray<R>,
}

impl<R: Real> Dense<R> {
    /// Uniform initialisation with bound `gain * sqrt(6 / fan_in)`.
    pub fn new(n_in: usize, n_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform_init(&[n_out, n_in], gain * (6.0 / n_in as f64).sqrt(), rng),
            bias: DenseArray::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[R], batch: usize) -> Result<Vec<R>> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        if x.len() != batch * n_in {
            return Err(Error::shape("dense input", batch * n_in, x.len()));
        }
        let mut out = vec![R::zero(); batch * n_out];
        for row in out.chunks_mut(n_out) {
            row.copy_from_slice(self.bias.data());
        }
        R::gemm(
            batch,
            n_in,
            n_out,
            R::one(),
            x,
            false,
            self.weight.data(),
            true,
            R::one(),
            &mut out,
        );
        Ok(out)
    }

    pub fn backward(&self, x: &[R], d_out: &[R], batch: usize, grads: &mut Self, input_grad: bool) -> Option<Vec<R>> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        for row in d_out.chunks(n_out) {
            for (g, &d) in grads.bias.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        R::gemm(
            n_out,
            batch,
            n_in,
            R::one(),
            d_out,
            true,
            x,
            false,
            R::one(),
            grads.weight.data_mut(),
        );
        if !input_grad {
            return None;
        }
        let mut d_x = vec![R::zero(); batch * n_in];
        R::gemm(
            batch,
            n_out,
            n_in,
            R::one(),
            d_out,
            false,
            self.weight.data(),
            false,
            R::zero(),
            &mut d_x,
        );
        Some(d_x)
    }
}

/// Swap the two leading axes of a `[a, b, inner]` array.
pub fn swap_leading<R: Copy>(x: &[R], a: usize, b: usize, inner: usize) -> Vec<R> {
    assert_eq!(x.len(), a * b * inner);
    let mut out = Vec::with_capacity(x.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&x[(i * b + j) * inner..(i * b + j + 1) * inner]);
        }
    }
    out
}

pub fn relu_inplace<R: Real>(x: &mut [R]) {
    for v in x {
        if *v < R::zero() {
            *v = R::zero();
        }
    }
}

/// Zero `grad` wherever the ReLU output was not positive.
pub fn relu_backward<R: Real>(output: &[R], grad: &mut [R]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= R::zero() {
            *g = R::zero();
        }
    }
}
