//! Elementwise non-linearities and the bounded output map.

use super::Tensor;

/// `max(x, slope*x)` elementwise.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

/// Gradient of [`leaky_relu`] at the cached pre-activation `x`.
/// The kink at 0 takes derivative 1 (the `x >= 0` branch).
pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor, slope: f64) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
        if v < 0.0 {
            *g *= slope;
        }
    }
    grad
}

/// Clamp to [0, 1]: speeds are normalized, so the regressor may never
/// answer outside that band.
pub fn output_clamp(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Subgradient of the clamp: 1 on the closed interval [0, 1] (boundary
/// points pass through so outputs pinned at exactly 0 or 1 do not go dead),
/// 0 strictly outside.
pub fn output_clamp_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
        if !(0.0..=1.0).contains(&v) {
            *g = 0.0;
        }
    }
    grad
}

/// Exponential linear unit: `x` for `x >= 0`, `alpha*(e^x - 1)` below.
pub fn elu(x: &Tensor, alpha: f64) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = alpha * (v.exp() - 1.0);
        }
    }
    out
}

pub fn elu_backward(x: &Tensor, grad_out: &Tensor, alpha: f64) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
        if v < 0.0 {
            *g *= alpha * v.exp();
        }
    }
    grad
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::from_vec(&[n], v).unwrap()
    }

    #[test]
    fn leaky_relu_definition() {
        let out = leaky_relu(&t(vec![0.0, -1.0, 2.0]), 0.01);
        assert_eq!(out.data(), &[0.0, -0.01, 2.0]);
    }

    #[test]
    fn leaky_relu_gradient_matches_finite_difference() {
        // Central difference at x = 2 (away from the kink).
        let x = 2.0;
        let h = 1e-6;
        let f = |v: f64| if v < 0.0 { 0.01 * v } else { v };
        let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
        let analytic = leaky_relu_backward(&t(vec![x]), &t(vec![1.0]), 0.01).data()[0];
        assert!((numeric - analytic).abs() / numeric.abs() < 1e-8);
    }

    #[test]
    fn clamp_values() {
        let out = output_clamp(&t(vec![-0.3, 0.42, 1.7]));
        assert_eq!(out.data(), &[0.0, 0.42, 1.0]);
    }

    #[test]
    fn elu_definition_and_gradient() {
        let out = elu(&t(vec![0.0, -1.0, 2.0]), 1.0);
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(out.data()[2], 2.0);

        let h = 1e-6;
        let f = |v: f64| if v < 0.0 { v.exp() - 1.0 } else { v };
        for x in [-1.3, 0.7] {
            let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
            let analytic = elu_backward(&t(vec![x]), &t(vec![1.0]), 1.0).data()[0];
            assert!((numeric - analytic).abs() < 1e-8);
        }
    }

    #[test]
    fn clamp_subgradient() {
        let g = output_clamp_backward(
            &t(vec![-0.3, 0.0, 0.42, 1.0, 1.7]),
            &t(vec![1.0, 1.0, 1.0, 1.0, 1.0]),
        );
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 1.0, 0.0]);
    }
}
