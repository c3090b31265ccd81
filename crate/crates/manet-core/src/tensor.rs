//! Dense 4-D tensors in batch-channel-row-column order.
//!
//! Storage is row-major and immutable once constructed; `Clone` is a cheap
//! reference-count bump, so tensors can be shared freely between the tape,
//! parameters and callers.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Element type of a tensor file or in-memory tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Dtype> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F32 => write!(f, "f32"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

/// Floating-point element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum<Self>
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Extents of a 4-D tensor: batch, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    /// Total element count.
    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Linear index of `(n, c, h, w)` in row-major order.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense, immutable 4-D array of [`Scalar`] values.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from raw row-major data.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.count() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Tensor<T> {
        Tensor {
            shape,
            data: Arc::new(vec![T::zero(); shape.count()]),
        }
    }

    pub fn full(shape: Shape, v: T) -> Tensor<T> {
        Tensor {
            shape,
            data: Arc::new(vec![v; shape.count()]),
        }
    }

    /// 1x1x1x1 tensor holding a single value.
    pub fn scalar(v: T) -> Tensor<T> {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: Arc::new(vec![v]),
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Tensor<T> {
        let mut data = Vec::with_capacity(shape.count());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    /// The single value of a 1x1x1x1 tensor.
    pub fn item(&self) -> Result<T> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a scalar tensor, got shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Error out if any element is NaN or infinite.
    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            let bad = self.data.iter().position(|v| !v.is_finite()).unwrap_or(0);
            Err(Error::Numeric(format!(
                "{op} produced a non-finite value at flat index {bad} (shape {})",
                self.shape
            )))
        }
    }

    /// Convert element type. Exact for f32 -> f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor {
            shape: self.shape,
            data: Arc::new(data),
        }
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "max_abs_diff: shapes {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// True when both tensors hold bit-identical data.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}
