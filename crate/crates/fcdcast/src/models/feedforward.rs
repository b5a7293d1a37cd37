//! A feedforward stack: dense / convolution / pooling / activation /
//! batch-norm / clamp layers executed in sequence.
//!
//! Hidden units follow the weight-average -> activation -> batch-norm
//! ordering; the output unit is a weight average followed by the [0, 1]
//! clamp. Pooling layers carry neither an activation nor a norm.

use crate::error::Result;
use crate::nn::activation::{
    elu, elu_backward, leaky_relu, leaky_relu_backward, output_clamp, output_clamp_backward,
};
use crate::nn::batchnorm::BatchNorm;
use crate::nn::conv::{ConvLayer, MaxPoolLayer};
use crate::nn::dense::DenseLayer;
use crate::nn::{Param, Tensor};

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    MaxPool(MaxPoolLayer),
    LeakyRelu { slope: f64, cache: Option<Tensor> },
    Elu { alpha: f64, cache: Option<Tensor> },
    BatchNorm(BatchNorm),
    Clamp { cache: Option<Tensor> },
    Flatten { cached_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn label(&self) -> String {
        match self {
            Layer::Dense(d) => format!("dense {}x{}", d.in_features(), d.out_features()),
            Layer::Conv(c) => format!(
                "conv {}x{}x{r}x{r}",
                c.out_channels(),
                c.in_channels(),
                r = c.receptive()
            ),
            Layer::MaxPool(p) => format!("maxpool {r}x{r}/{s}", r = p.receptive, s = p.stride),
            Layer::LeakyRelu { .. } => "leaky-relu".to_string(),
            Layer::Elu { .. } => "elu".to_string(),
            Layer::BatchNorm(bn) => format!("batchnorm {}", bn.features()),
            Layer::Clamp { .. } => "clamp".to_string(),
            Layer::Flatten { .. } => "flatten".to_string(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(d) => vec![&d.weight],
            Layer::Conv(c) => vec![&c.weight],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight],
            Layer::Conv(c) => vec![&mut c.weight],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => vec![],
        }
    }

    fn clear_caches(&mut self) {
        match self {
            Layer::LeakyRelu { cache, .. } => *cache = None,
            Layer::Elu { cache, .. } => *cache = None,
            Layer::Clamp { cache } => *cache = None,
            Layer::Flatten { cached_shape } => *cached_shape = None,
            Layer::BatchNorm(bn) => bn.clear_caches(),
            _ => {}
        }
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => Ok(d.forward_train(x)),
            Layer::Conv(c) => c.forward_train(x),
            Layer::MaxPool(p) => p.forward_train(x),
            Layer::LeakyRelu { slope, cache } => {
                *cache = Some(x.clone());
                Ok(leaky_relu(x, *slope))
            }
            Layer::Elu { alpha, cache } => {
                *cache = Some(x.clone());
                Ok(elu(x, *alpha))
            }
            Layer::BatchNorm(bn) => bn.forward_train(x),
            Layer::Clamp { cache } => {
                *cache = Some(x.clone());
                Ok(output_clamp(x))
            }
            Layer::Flatten { cached_shape } => {
                *cached_shape = Some(x.shape().to_vec());
                let batch = x.shape()[0];
                let rest = x.len() / batch;
                x.reshaped(&[batch, rest])
            }
        }
    }

    fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => Ok(d.forward_infer(x)),
            Layer::Conv(c) => c.forward_infer(x),
            Layer::MaxPool(p) => p.forward_infer(x),
            Layer::LeakyRelu { slope, .. } => Ok(leaky_relu(x, *slope)),
            Layer::Elu { alpha, .. } => Ok(elu(x, *alpha)),
            Layer::BatchNorm(bn) => bn.forward_infer(x),
            Layer::Clamp { .. } => Ok(output_clamp(x)),
            Layer::Flatten { .. } => {
                let batch = x.shape()[0];
                let rest = x.len() / batch;
                x.reshaped(&[batch, rest])
            }
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => d.backward(grad),
            Layer::Conv(c) => c.backward(grad),
            Layer::MaxPool(p) => p.backward(grad),
            Layer::LeakyRelu { slope, cache } => {
                let x = cache.as_ref().expect("activation backward without forward");
                leaky_relu_backward(x, grad, *slope)
            }
            Layer::Elu { alpha, cache } => {
                let x = cache.as_ref().expect("activation backward without forward");
                elu_backward(x, grad, *alpha)
            }
            Layer::BatchNorm(bn) => bn.backward(grad),
            Layer::Clamp { cache } => {
                let x = cache.as_ref().expect("clamp backward without forward");
                output_clamp_backward(x, grad)
            }
            Layer::Flatten { cached_shape } => {
                let shape = cached_shape
                    .as_ref()
                    .expect("flatten backward without forward");
                grad.reshaped(shape).expect("flatten gradient volume")
            }
        }
    }
}

/// A model executing its layers front to back.
#[derive(Debug, Clone)]
pub struct Feedforward {
    pub layers: Vec<Layer>,
    /// Per-sample input shape (no batch axis): `[f0]` or `[c, h, w]`.
    pub input_shape: Vec<usize>,
    pub output_len: usize,
}

impl Feedforward {
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        for layer in &mut self.layers {
            layer.clear_caches();
        }
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward_train(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward_infer(&cur)?;
        }
        Ok(cur)
    }

    /// Backpropagate `grad` (same shape as the forward output) through the
    /// stack, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
    }

    /// Inference on one flat input vector (dense stacks only).
    pub fn predict_flat(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::from_vec(&[1, input.len()], input.to_vec())?;
        Ok(self.forward_infer(&x)?.into_vec())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            })
            .collect()
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            })
            .collect()
    }
}
