//! Quadratic data loss and the elastic-net weight penalty.

use super::{Param, ParamKind, Tensor};

/// `J = 1/(2*Tmb) * sum_t sum_k (pred - target)^2` where `Tmb` is the
/// leading (batch) extent.
pub fn quadratic_loss(pred: &Tensor, target: &Tensor) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "loss shape mismatch");
    let t_mb = pred.shape()[0] as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    sum / (2.0 * t_mb)
}

/// Gradient of [`quadratic_loss`] with respect to the predictions.
pub fn quadratic_loss_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    assert_eq!(pred.shape(), target.shape(), "loss shape mismatch");
    let t_mb = pred.shape()[0] as f64;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, p), y) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        *g = (p - y) / t_mb;
    }
    grad
}

/// `lambda2/2 * sum(theta^2) + lambda1 * sum(|theta|)` over weight tensors.
/// Batch-norm scale/shift parameters are never penalized.
pub fn elastic_net_penalty<'a>(
    params: impl IntoIterator<Item = &'a Param>,
    lambda_l1: f64,
    lambda_l2: f64,
) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for p in params {
        if p.kind != ParamKind::Weight {
            continue;
        }
        for &v in p.value.data() {
            l1 += v.abs();
            l2 += v * v;
        }
    }
    lambda_l2 / 2.0 * l2 + lambda_l1 * l1
}

/// Adds the elastic-net gradient `lambda2*theta + lambda1*sign(theta)` to
/// each weight tensor's gradient. The l1 subgradient at exactly 0 is 0.
pub fn elastic_net_accumulate<'a>(
    params: impl IntoIterator<Item = &'a mut Param>,
    lambda_l1: f64,
    lambda_l2: f64,
) {
    for p in params {
        if p.kind != ParamKind::Weight {
            continue;
        }
        for (g, &v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
            *g += lambda_l2 * v + lambda_l1 * v.signum() * f64::from(v != 0.0);
        }
    }
}
