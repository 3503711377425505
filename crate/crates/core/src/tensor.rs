//! Dense row-major tensors. 4-D tensors use NCHW layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage scalar. 32-bit by default; the `f64` feature switches to 64-bit
/// for tight gradient checks.
#[cfg(not(feature = "f64"))]
pub type Scalar = f32;
#[cfg(feature = "f64")]
pub type Scalar = f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Scalar>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {:?} does not hold {} elements",
                shape,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Scalar) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: Scalar) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Scalar) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per leading-dimension item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// View of item `i` along the leading dimension.
    pub fn item(&self, i: usize) -> &[Scalar] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Copy of items `start..end` along the leading dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let n = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor { shape, data: self.data[start * n..end * n].to_vec() }
    }

    /// Gather items by index along the leading dimension.
    pub fn gather_batch(&self, indices: &[usize]) -> Tensor {
        let n = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    pub fn map(&self, f: impl Fn(Scalar) -> Scalar) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: Scalar) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Sum with 64-bit accumulation.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> Scalar {
        self.data.iter().fold(0.0, |m: Scalar, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elements of a 4-D tensor at `(n, c, h, w)`.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> Scalar {
        let [_, cs, hs, ws] = self.dims4();
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn dims4(&self) -> [usize; 4] {
        assert_eq!(self.shape.len(), 4, "expected a 4-D tensor, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3]]
    }

    /// Bitwise equality including NaN payloads.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
