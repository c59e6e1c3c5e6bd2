//! Dense `f32` tensors and a tape-based reverse-mode autodiff.
//!
//! A [`Tensor`] is a plain immutable value. Differentiable computation goes
//! through [`Var`], which pairs a shared tensor with an optional node on a
//! [`Tape`]. Vars built with [`Var::constant`] never touch a tape, so the same
//! layer code serves training (recorded) and inference (tape-free).

mod gemm;
mod ops;
mod tape;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

pub use ops::{BinaryOp, Conv2dParams, ReduceOp};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: division by a zero denominator")]
    ZeroDenominator { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: input outside the operation's domain")]
    Domain { op: &'static str },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("conv2d: extent {extent} with kernel {kernel}, padding {padding}, stride {stride} is not integral")]
    NonIntegralExtent {
        extent: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable is not attached to this tape")]
    DetachedTape,
}

/// Row-major dense array of `f32`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that every extent is positive, the element
    /// count matches, and every value is finite.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self, TensorError> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self { shape, data })
    }

    /// Skips the finiteness scan; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Standard normal samples.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Self { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f32,
        hi: f32,
        rng: &mut R,
    ) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f32> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        check_shape(&shape, self.data.len())?;
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Elementwise map; fails if the map produces NaN or infinity.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self, TensorError> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        check_finite("map", &data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite("zip_map", &data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    /// Slice of the outermost axis, keeping it with extent 1.
    pub fn batch_item(&self, index: usize) -> Self {
        let per = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Self {
            shape,
            data: self.data[index * per..(index + 1) * per].to_vec(),
        }
    }

    /// Stacks tensors of identical shape along a new outer axis, or along the
    /// existing outer axis when every item already has extent 1 there.
    pub fn stack_batch(items: &[Tensor]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::InvalidShape {
            shape: Vec::new(),
            len: 0,
        })?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_batch",
                    lhs: first.shape.clone(),
                    rhs: item.shape.clone(),
                });
            }
            data.extend_from_slice(&item.data);
        }
        let shape = if first.shape[0] == 1 && first.rank() > 1 {
            let mut s = first.shape.clone();
            s[0] = items.len();
            s
        } else {
            let mut s = vec![items.len()];
            s.extend_from_slice(&first.shape);
            s
        };
        Ok(Self { shape, data })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != len {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(op: &'static str, data: &[f32]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new([2, 0], vec![]).is_err());
        assert!(Tensor::new([2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert_eq!(
            Tensor::new([1], vec![f32::NAN]),
            Err(TensorError::NonFinite { op: "new" })
        );
    }

    #[test]
    fn stack_and_slice_batches() {
        let a = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new([1, 2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack_batch(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.batch_item(0), a);
    }
}
