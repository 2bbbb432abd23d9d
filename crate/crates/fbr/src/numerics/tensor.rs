//! Plain dense value tensor: the carrier for parameters, inputs, and gradients.

use rand::Rng;

use crate::error::{FbrError, Result};

/// Dense multi-dimensional array of `f64` values.
///
/// `data` is stored row-major; `grad`, when present, mirrors `data`'s length.
/// Every constructor rejects non-finite values, so a `Tensor` obtained through
/// the public API never carries NaN or infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(FbrError::InvalidArgument(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(FbrError::InvalidArgument(format!(
                "non-finite value {bad} in tensor data"
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::from_vec(&[1], vec![value])
    }

    /// Uniform fan-in initialization: entries drawn from `U(-b, b)` with
    /// `b = 1/sqrt(fan_in)`.
    pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    /// Mutable access to the raw values. Callers must keep entries finite;
    /// the optimizer path re-checks via `validate_finite`.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn validate_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(FbrError::Contract(format!(
                "non-finite value at flat index {i}"
            ))),
            None => Ok(()),
        }
    }

    /// Zero the gradient buffer, allocating it on first use.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    /// Accumulate a gradient contribution of matching length.
    pub fn add_grad(&mut self, contribution: &[f64]) {
        assert_eq!(contribution.len(), self.data.len(), "gradient length mismatch");
        self.zero_grad_if_missing();
        let g = self.grad.as_mut().unwrap();
        for (gi, ci) in g.iter_mut().zip(contribution) {
            *gi += ci;
        }
    }

    fn zero_grad_if_missing(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    /// Plain SGD update: `w -= lr * grad`. No-op when no gradient flowed.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if let Some(g) = &self.grad {
            for (w, gi) in self.data.iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        self.validate_finite()
    }
}
