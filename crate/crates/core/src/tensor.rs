//! Dense row-major f32 tensors, the numeric carrier for every other module.
//!
//! Storage is 32-bit; reductions (dot products, norms, sums) accumulate in
//! 64-bit and return f64 so that downstream statistics keep full precision.

use crate::error::{Error, Result};

/// Dense n-dimensional array of 32-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor from a shape and a flat row-major buffer.
    ///
    /// The shape must be non-empty with no zero dimension, the buffer length
    /// must equal the shape product, and every value must be finite.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidArgument("tensor shape must be non-empty".into()));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidArgument(format!("tensor shape {shape:?} overflows")))?;
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} elements, buffer has {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor element {i} is {}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    /// Builds from f64 values, rounding each to f32.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::from_vec(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat index of a 2-D coordinate. Panics on rank != 2 in debug builds.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f32 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Row slice of a rank-2 tensor.
    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 2);
        let d = self.shape[1];
        &self.data[r * d..(r + 1) * d]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| {
                let v = v as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Dot product with another tensor of identical shape, accumulated in f64.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "dot: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// self + alpha * other, elementwise.
    pub fn add_scaled(&self, other: &Tensor, alpha: f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add_scaled: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 + alpha * b as f64) as f32)
            .collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn scale(&self, alpha: f64) -> Result<Tensor> {
        self.map(|v| (v as f64 * alpha) as f32)
    }

    /// Maximum absolute elementwise difference against another tensor.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "max_abs_diff: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }
}

/// Norm-based relative error between two same-shape gradients,
/// `||a - b|| / max(||b||, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relative_error: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(diff / b.norm().max(floor))
}
