//! Fully connected layer: a pure weight average with no bias term.
//! The shift that a bias would provide is supplied by the batch-norm
//! `beta` parameter downstream.

use super::tensor::{matmul, matmul_a_bt, matmul_at_b};
use super::{Param, Tensor};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `[f_in, f_out]`.
    pub weight: Param,
    input_cache: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(weight: Param) -> Self {
        assert_eq!(weight.value.shape().len(), 2, "dense weight must be 2-d");
        DenseLayer {
            weight,
            input_cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// `[t, f_in] -> [t, f_out]`, caching the input for the backward pass.
    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let out = matmul(x, &self.weight.value);
        self.input_cache = Some(x.clone());
        out
    }

    pub fn forward_infer(&self, x: &Tensor) -> Tensor {
        matmul(x, &self.weight.value)
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .input_cache
            .as_ref()
            .expect("dense backward without forward");
        let dw = matmul_at_b(x, grad_out);
        for (g, d) in self.weight.grad.data_mut().iter_mut().zip(dw.data()) {
            *g += d;
        }
        matmul_a_bt(grad_out, &self.weight.value)
    }
}
