//! Dense row-major tensors, named parameters, and attention masks.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;

/// Dense n-dimensional float array with an optional gradient buffer.
///
/// Data is contiguous row-major; `grad`, when present, always has the same
/// number of elements as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
    grad: Option<Vec<E>>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if numel != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::zero(); numel],
            grad: None,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(|i| f(i)).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Rows of a matrix view: product of all leading extents.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    /// Trailing extent; the feature axis for 2-D views.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Reinterpret the shape without touching data (row-major, same numel).
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::InvalidInput(format!(
                "cannot reshape {:?} ({} elements) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<E>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::InvalidInput(format!(
                "gradient length {} does not match tensor with {} elements",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Hard error on any NaN/Inf element.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map<F: Scalar>(&self, f: impl Fn(E) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.as_f64())
    }
}

/// A named tensor owned by a model. Names are unique within one model.
#[derive(Debug, Clone)]
pub struct Parameter<E: Scalar> {
    pub name: String,
    pub tensor: Tensor<E>,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, tensor: Tensor<E>) -> Self {
        Parameter {
            name: name.into(),
            tensor,
        }
    }
}

/// Frame validity mask: `true` marks a real frame, `false` padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    valid: Vec<bool>,
}

impl AttentionMask {
    pub fn new(valid: Vec<bool>) -> Result<Self> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::EmptyAttentionSupport);
        }
        Ok(AttentionMask { valid })
    }

    pub fn all_true(len: usize) -> Self {
        AttentionMask {
            valid: vec![true; len.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}
