use crate::error::{Error, Result};
use crate::real::{lit, Real};

/// Sinusoidal time features `(sin(t/w_i), cos(t/w_i))` with `w_i = base^(2i/dim)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEmbedding {
    dim: usize,
    base: f64,
}

pub const DEFAULT_FREQUENCY_BASE: f64 = 10_000.0;

impl TimeEmbedding {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time embedding dimension must be even and >= 2, got {dim}"
            )));
        }
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frequency base must be > 0, got {base}"
            )));
        }
        Ok(Self { dim, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    fn period(&self, pair: usize) -> f64 {
        self.base.powf(2.0 * pair as f64 / self.dim as f64)
    }

    pub fn embed<R: Real>(&self, t: R) -> Vec<R> {
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim / 2 {
            let arg = t / lit::<R>(self.period(i));
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out
    }

    /// Closed-form `d embed / dt`.
    pub fn embed_dt<R: Real>(&self, t: R) -> Vec<R> {
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim / 2 {
            let w = lit::<R>(self.period(i));
            let arg = t / w;
            out.push(arg.cos() / w);
            out.push(-arg.sin() / w);
        }
        out
    }
}

/// Free-function form of [`TimeEmbedding::embed`] with the default frequency base.
pub fn sinusoidal_embed<R: Real>(t: R, dim: usize) -> Result<Vec<R>> {
    Ok(TimeEmbedding::new(dim, DEFAULT_FREQUENCY_BASE)?.embed(t))
}
