//! Numerical substrate: tensors, layers, losses, the optimizer, and the
//! finite-difference harness that keeps the analytic gradients honest.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod tensor;

pub use tensor::Tensor;

/// What a parameter tensor is, for regularization and counting purposes.
/// Elastic-net penalties and the weight-parameter count cover `Weight`
/// tensors only; batch-norm scale/shift pairs are tracked but not penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    BnGamma,
    BnBeta,
}

/// A trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            kind,
            value,
            grad,
        }
    }

    pub fn weight(name: impl Into<String>, value: Tensor) -> Self {
        Param::new(name, ParamKind::Weight, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
