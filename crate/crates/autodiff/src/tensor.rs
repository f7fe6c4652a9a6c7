use std::sync::Arc;

use crate::error::{Error, Result};
use crate::Real;

/// A detached dense tensor: a shape plus a row-major value buffer.
///
/// The buffer is shared (`Arc`), so cloning a tensor or placing it on a
/// tape never copies data; mutation copies on write only when the buffer
/// is actually shared. `Tensor` carries no gradient state; it is the
/// currency for moving values on and off a [`crate::Tape`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<Real>>,
}

impl Tensor {
    /// Builds a tensor from a shape and a row-major buffer.
    pub fn from_vec(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn filled(shape: Vec<usize>, value: Real) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; numel]),
        }
    }

    /// A rank-1 tensor of shape `[1]` holding one value.
    pub fn scalar(value: Real) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    /// Mutable view; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [Real] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn into_shared_parts(self) -> (Vec<usize>, Arc<Vec<Real>>) {
        (self.shape, self.data)
    }

    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<Real>>) -> Self {
        Self { shape, data }
    }

    /// Value of a `[1]`-shaped (or single-element) tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Element at a 2-D index; panics if the tensor is not rank 2.
    pub fn at2(&self, i: usize, j: usize) -> Real {
        assert_eq!(self.ndim(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(4.25);
        assert_eq!(t.shape(), &[1]);
        assert_eq!(t.item(), 4.25);
    }

    #[test]
    fn clone_shares_until_mutation() {
        let a = Tensor::filled(vec![4], 1.0);
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 9.0);
    }
}
