//! Strided N-dimensional arrays and the forward numerical kernels.
//!
//! Image-like tensors use the N×C×H×W convention. Every kernel accepts
//! arbitrary strides but computes on a row-major copy, so results never
//! depend on the memory layout of the inputs.

mod activation;
mod conv;
mod matmul;
mod norm;

use std::borrow::Cow;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use activation::{activation, Activation};
pub use conv::{
    conv2d, conv2d_weight_grad, conv_transpose2d, conv_transpose2d_sized,
    conv_transpose2d_weight_grad, ConvSpec,
};
pub use norm::{
    batch_stats, batchnorm2d, BatchNormMode, BatchStats, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub(crate) use norm::{
    check_affine as norm_check_affine, normalize as norm_normalize,
    train_stats as norm_train_stats, update_running as norm_update_running,
};

/// Floating point element type of a [`Tensor`].
///
/// Training runs in `f32`; gradient checking runs in `f64`.
pub trait Real:
    Float + Default + Debug + Display + Sum + Send + Sync + std::ops::AddAssign + 'static
{
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Initial contents for [`Tensor::new`].
#[derive(Debug, Clone)]
pub enum Fill<T> {
    Value(T),
    Buffer(Vec<T>),
}

#[derive(Clone)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<T>,
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Size("shape must have at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Size(format!(
            "axis {axis} of {shape:?} has zero extent"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], fill: Fill<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match fill {
            Fill::Value(v) => vec![v; len],
            Fill::Buffer(buf) => {
                if buf.len() != len {
                    return Err(Error::Size(format!(
                        "buffer of {} elements for shape {shape:?} ({len} elements)",
                        buf.len()
                    )));
                }
                buf
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            strides: row_major_strides(shape),
            data,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::new(shape, Fill::Buffer(data))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, Fill::Value(T::zero()))
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        Self::new(shape, Fill::Value(value))
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            strides: vec![1],
            data: vec![value],
        }
    }

    /// Draws i.i.d. `N(mean, std²)` values in row-major order.
    pub fn randn<R: Rng + ?Sized>(
        shape: &[usize],
        mean: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = (0..len)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(mean + std * z)
            })
            .collect();
        Self::from_vec(shape, data)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            strides: row_major_strides(&self.shape),
            data: vec![T::zero(); self.numel()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_contiguous(&self) -> bool {
        self.strides == row_major_strides(&self.shape)
    }

    /// Elements in row-major order of the logical shape.
    pub fn data(&self) -> Cow<'_, [T]> {
        if self.is_contiguous() {
            Cow::Borrowed(&self.data)
        } else {
            Cow::Owned(self.logical_order().collect())
        }
    }

    /// Mutable row-major elements; makes the tensor contiguous first.
    pub fn data_mut(&mut self) -> &mut [T] {
        if !self.is_contiguous() {
            *self = self.contiguous();
        }
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        if self.is_contiguous() {
            self.data
        } else {
            self.logical_order().collect()
        }
    }

    fn logical_order(&self) -> impl Iterator<Item = T> + '_ {
        let mut index = vec![0usize; self.shape.len()];
        let total = self.numel();
        (0..total).map(move |i| {
            let offset: usize = index.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
            let v = self.data[offset];
            if i + 1 < total {
                for axis in (0..index.len()).rev() {
                    index[axis] += 1;
                    if index[axis] < self.shape[axis] {
                        break;
                    }
                    index[axis] = 0;
                }
            }
            v
        })
    }

    pub fn contiguous(&self) -> Self {
        if self.is_contiguous() {
            return self.clone();
        }
        Tensor {
            shape: self.shape.clone(),
            strides: row_major_strides(&self.shape),
            data: self.logical_order().collect(),
        }
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, e)| i >= e) {
            return Err(Error::Shape(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        Ok(index.iter().zip(&self.strides).map(|(i, s)| i * s).sum())
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let offset = self.offset(index)?;
        self.data[offset] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.numel() {
            return Err(Error::Size(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            strides: row_major_strides(shape),
            data: self.data().into_owned(),
        })
    }

    /// Reorders axes without moving data; the result is strided.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.shape.len()];
        if axes.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "permutation {axes:?} for rank {}",
                self.shape.len()
            )));
        }
        for &a in axes {
            if a >= seen.len() || seen[a] {
                return Err(Error::Shape(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        Ok(Tensor {
            shape: axes.iter().map(|&a| self.shape[a]).collect(),
            strides: axes.iter().map(|&a| self.strides[a]).collect(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor {
            shape: self.shape.clone(),
            strides: row_major_strides(&self.shape),
            data,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            strides: row_major_strides(&self.shape),
            data,
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data().iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            strides: row_major_strides(&self.shape),
            data: self
                .data()
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
        }
    }

    /// Image-tensor dimensions `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected N×C×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Logical equality: same shape and same elements, regardless of strides.
impl<T: Real> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let data = self.data();
        let preview: Vec<_> = data.iter().take(8).collect();
        write!(f, "Tensor<{}>{:?} {:?}", T::NAME, self.shape, preview)?;
        if data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}
