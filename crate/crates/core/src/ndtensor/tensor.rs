//! Dense row-major f64 tensor.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Immutable dense array of 64-bit floats in row-major order.
///
/// The canonical 4-D layout is batch × channels × height × width. Clones
/// share the underlying buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor from external data, validating the shape product and
    /// rejecting NaN/Inf entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("tensor element {i}") });
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    /// Internal constructor for op outputs. Finiteness is not rescanned on
    /// the hot path: tensors entering from outside are validated by `new`,
    /// and the training loss / solver objective boundaries check their
    /// scalars so divergence aborts with a diagnostic instead of a panic.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; n]) }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Interpret as [B, C, H, W].
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok((b, c, h, w)),
            other => Err(Error::shape("dims4", format!("expected 4-D tensor, got {other:?}"))),
        }
    }

    /// Mutate the underlying data in place (copy-on-write when shared).
    pub fn update_data(&mut self, f: impl FnOnce(&mut [f64])) {
        let data = Arc::make_mut(&mut self.data);
        f(data);
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.numel(), other.numel());
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Row-major offset into a [B, C, H, W] buffer.
#[inline(always)]
pub(crate) fn idx4(c_dim: usize, h_dim: usize, w_dim: usize, b: usize, c: usize, h: usize, w: usize) -> usize {
    ((b * c_dim + c) * h_dim + h) * w_dim + w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(3.5).unwrap();
        assert!(t.is_scalar());
        assert_eq!(t.item(), 3.5);
    }
}
