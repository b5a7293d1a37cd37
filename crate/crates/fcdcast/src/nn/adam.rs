//! Adam optimizer with multiplicative learning-rate decay.
//!
//! The update tracks first and second gradient moments per parameter:
//!
//! ```text
//! m_e = beta1 * m_{e-1} + (1 - beta1) * grad
//! v_e = beta2 * v_{e-1} + (1 - beta2) * grad^2
//! theta_e = theta_{e-1} - eta / sqrt(v_e + eps) * m_e
//! ```
//!
//! and then decays the rate, `eta <- exp(-alpha0) * eta`, once per step.
//! Note there is no bias correction by default: the moments start cold and
//! warm up over the first ~1/(1-beta) steps. `bias_correction` enables the
//! conventional corrected variant for comparison.

use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Initial learning rate.
    pub eta0: f64,
    /// Per-step decay exponent; 0 keeps the rate constant.
    pub alpha0: f64,
    pub bias_correction: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eta0: 5e-3,
            alpha0: 0.0,
            bias_correction: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub eta: f64,
    pub steps: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        let eta = config.eta0;
        AdamState {
            config,
            eta,
            steps: 0,
            moments: Vec::new(),
        }
    }

    /// Apply one update to every parameter, consuming their accumulated
    /// gradients, then decay the learning rate. The parameter list must be
    /// the same (same order, same shapes) on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: vec![0.0; p.value.len()],
                    v: vec![0.0; p.value.len()],
                })
                .collect();
        }
        assert_eq!(
            self.moments.len(),
            params.len(),
            "optimizer state does not match parameter list"
        );
        self.steps += 1;
        let c = &self.config;
        let (mc, vc) = if c.bias_correction {
            (
                1.0 - c.beta1.powi(self.steps as i32),
                1.0 - c.beta2.powi(self.steps as i32),
            )
        } else {
            (1.0, 1.0)
        };
        for (p, mom) in params.iter_mut().zip(self.moments.iter_mut()) {
            debug_assert_eq!(p.name, mom.name);
            for idx in 0..p.value.len() {
                let g = p.grad.data()[idx];
                mom.m[idx] = c.beta1 * mom.m[idx] + (1.0 - c.beta1) * g;
                mom.v[idx] = c.beta2 * mom.v[idx] + (1.0 - c.beta2) * g * g;
                let m_hat = mom.m[idx] / mc;
                let v_hat = mom.v[idx] / vc;
                p.value.data_mut()[idx] -= self.eta / (v_hat + c.epsilon).sqrt() * m_hat;
            }
        }
        self.eta *= (-c.alpha0).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: Vec<f64>) -> Param {
        let n = values.len();
        Param::weight("w", Tensor::from_vec(&[n], values).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = param(vec![1.0, -2.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_saturates_to_eta_sized_steps() {
        // With a constant gradient g, m -> g and v -> g^2, so the update
        // magnitude approaches eta and its direction is -sign(g).
        let mut p = param(vec![0.0]);
        let cfg = AdamConfig {
            eta0: 1e-3,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg);
        let g = -0.7;
        let mut last = p.value.data()[0];
        let mut step_size = 0.0;
        for _ in 0..20_000 {
            p.grad.data_mut()[0] = g;
            adam.step(&mut [&mut p]);
            step_size = p.value.data()[0] - last;
            last = p.value.data()[0];
        }
        assert!(step_size > 0.0, "moves against the gradient sign");
        assert!((step_size.abs() - 1e-3).abs() / 1e-3 < 1e-3);
    }

    #[test]
    fn zero_alpha_keeps_eta_constant() {
        let mut p = param(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig {
            eta0: 2e-3,
            alpha0: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..5 {
            p.grad.data_mut()[0] = 0.1;
            adam.step(&mut [&mut p]);
        }
        assert_eq!(adam.eta, 2e-3);
    }

    #[test]
    fn eta_decays_multiplicatively() {
        let mut p = param(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig {
            eta0: 1e-2,
            alpha0: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut [&mut p]);
        adam.step(&mut [&mut p]);
        assert!((adam.eta - 1e-2 * (-0.2f64).exp()).abs() < 1e-15);
    }
}
