use crate::error::{Error, Result};
use crate::real::{lit, Real};

/// Contiguous row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> DenseArray<R> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![R::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: R) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("DenseArray::from_vec", len, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<R>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::shape("DenseArray::reshape", len, self.data.len()));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reject NaN/Inf at an operation boundary.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn fill(&mut self, value: R) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn cast<S: Real>(&self) -> DenseArray<S> {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| S::from(*v).expect("castable")).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> R {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: R) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }
}

/// Channel-first image extents `C x H x W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `T + 1` frames of one image shape, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<R> {
    pub shape: ImageShape,
    pub frames: Vec<R>,
}

impl<R: Copy> Sequence<R> {
    pub fn new(shape: ImageShape, frames: Vec<R>) -> Result<Self> {
        if shape.is_empty() || frames.is_empty() || frames.len() % shape.len() != 0 {
            return Err(Error::shape(
                "sequence frames",
                format!("a positive multiple of {}", shape.len()),
                frames.len(),
            ));
        }
        Ok(Self { shape, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.shape.len()
    }

    /// `T`, the number of transitions.
    pub fn steps(&self) -> usize {
        self.num_frames() - 1
    }

    pub fn frame(&self, t: usize) -> &[R] {
        let n = self.shape.len();
        &self.frames[t * n..(t + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_must_match_length() {
        assert!(DenseArray::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let a = DenseArray::<f64>::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(a.at(&[1, 2]), 5.0);
        assert!(a.clone().reshape(&[4]).is_err());
        assert_eq!(a.reshape(&[3, 2]).unwrap().at(&[2, 0]), 4.0);
    }

    #[test]
    fn non_finite_rejected() {
        let a = DenseArray::<f32>::vector(vec![1.0, f32::NAN]);
        assert!(matches!(a.check_finite("x"), Err(Error::NonFinite(_))));
    }
}
