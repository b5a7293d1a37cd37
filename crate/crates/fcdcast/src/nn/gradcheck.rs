//! Central finite-difference verification of the analytic gradients.
//!
//! Perturbs every parameter element by +/- 1e-5, evaluates the quadratic
//! loss, and compares the symmetric difference quotient against the
//! backpropagated gradient. Batch-norm running statistics are frozen for the
//! duration so repeated forwards are pure.

use crate::error::{Error, Result};
use crate::models::{Model, ModelNet};

use super::loss::{quadratic_loss, quadratic_loss_grad};
use super::Tensor;

/// Finite-difference step; balances truncation against round-off at f64.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Central differences carry
/// ~1e-11 of absolute round-off noise at this step size, so gradients far
/// below this scale are compared against the floor instead of each other;
/// a genuinely wrong gradient still shows up because its error scales with
/// the gradient itself.
pub const GRAD_SCALE_FLOOR: f64 = 1e-4;

/// Largest parameter count the harness will accept; finite differences cost
/// two forward passes per element.
pub const MAX_CHECK_PARAMS: usize = 2000;

/// A batch for checking: static models take one input/target pair, the
/// recurrent model takes aligned step/target sequences.
#[derive(Debug, Clone)]
pub enum CheckBatch {
    Static { input: Tensor, target: Tensor },
    Seq { steps: Vec<Tensor>, targets: Vec<Tensor> },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub n_elements: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn compute_loss(model: &mut Model, batch: &CheckBatch) -> Result<f64> {
    let loss = match (&mut model.net, batch) {
        (ModelNet::Feedforward(ff), CheckBatch::Static { input, target }) => {
            let pred = ff.forward_train(input)?;
            quadratic_loss(&pred, target)
        }
        (ModelNet::Lstm(net), CheckBatch::Seq { steps, targets }) => {
            let outs = net.forward_train(steps)?;
            outs.iter()
                .zip(targets)
                .map(|(p, t)| quadratic_loss(p, t))
                .sum()
        }
        _ => {
            return Err(Error::shape(
                "batch kind does not match the model kind".to_string(),
            ))
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            detail: format!("gradient check aborted, loss = {loss}"),
        });
    }
    Ok(loss)
}

fn loss_and_backward(model: &mut Model, batch: &CheckBatch) -> Result<f64> {
    model.zero_grads();
    let loss = match (&mut model.net, batch) {
        (ModelNet::Feedforward(ff), CheckBatch::Static { input, target }) => {
            let pred = ff.forward_train(input)?;
            let loss = quadratic_loss(&pred, target);
            let grad = quadratic_loss_grad(&pred, target);
            ff.backward(&grad);
            loss
        }
        (ModelNet::Lstm(net), CheckBatch::Seq { steps, targets }) => {
            let outs = net.forward_train(steps)?;
            let loss: f64 = outs
                .iter()
                .zip(targets)
                .map(|(p, t)| quadratic_loss(p, t))
                .sum();
            let grads: Vec<Tensor> = outs
                .iter()
                .zip(targets)
                .map(|(p, t)| quadratic_loss_grad(p, t))
                .collect();
            net.backward(&grads)?;
            loss
        }
        _ => {
            return Err(Error::shape(
                "batch kind does not match the model kind".to_string(),
            ))
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            detail: format!("gradient check aborted, loss = {loss}"),
        });
    }
    Ok(loss)
}

/// Compare analytic gradients against central finite differences over every
/// parameter element; reports the worst relative error.
pub fn gradient_check(
    model: &mut Model,
    batch: &CheckBatch,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let total: usize = model.params().iter().map(|p| p.value.len()).sum();
    if total > MAX_CHECK_PARAMS {
        return Err(Error::validation(format!(
            "model has {total} parameters; finite differences are limited to {MAX_CHECK_PARAMS}"
        )));
    }

    model.set_bn_frozen(true);
    let result = (|| {
        loss_and_backward(model, batch)?;
        let analytic: Vec<(String, Vec<f64>)> = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.grad.data().to_vec()))
            .collect();

        let mut max_rel: f64 = 0.0;
        let mut worst = String::new();
        let n_params = analytic.len();
        for k in 0..n_params {
            let len = analytic[k].1.len();
            for i in 0..len {
                {
                    let mut params = model.params_mut();
                    params[k].value.data_mut()[i] += FD_STEP;
                }
                let loss_plus = compute_loss(model, batch)?;
                {
                    let mut params = model.params_mut();
                    params[k].value.data_mut()[i] -= 2.0 * FD_STEP;
                }
                let loss_minus = compute_loss(model, batch)?;
                {
                    let mut params = model.params_mut();
                    params[k].value.data_mut()[i] += FD_STEP;
                }
                let numeric = (loss_plus - loss_minus) / (2.0 * FD_STEP);
                let a = analytic[k].1[i];
                let scale = a.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR);
                let err = (a - numeric).abs() / scale;
                if err > max_rel {
                    max_rel = err;
                    worst = format!("{}[{i}]", analytic[k].0);
                }
            }
        }
        Ok(GradCheckReport {
            max_rel_err: max_rel,
            worst_param: worst,
            n_elements: total,
            tolerance,
        })
    })();
    model.set_bn_frozen(false);
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::toy_model_and_batch;
    use crate::models::Arch;

    fn check(arch: Arch, tolerance: f64) -> GradCheckReport {
        let (mut model, batch) = toy_model_and_batch(arch, 0).unwrap();
        gradient_check(&mut model, &batch, tolerance).unwrap()
    }

    #[test]
    fn fnn1_toy_gradients_match() {
        let report = check(Arch::Fnn1, 1e-6);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn fnn3_toy_gradients_match() {
        let report = check(Arch::Fnn3, 1e-6);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn conv_pool_toy_gradients_match() {
        let report = check(Arch::Vgg, 1e-6);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn lstm_toy_gradients_match() {
        let report = check(Arch::Lstm, 1e-5);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn oversized_models_are_rejected() {
        let cfg = crate::models::ModelConfig::new(Arch::Fnn3, crate::models::InputMode::Full);
        let mut model = cfg.build(&mut crate::rng::substream(0, "init")).unwrap();
        let batch = CheckBatch::Static {
            input: Tensor::zeros(&[2, 8192]),
            target: Tensor::zeros(&[2, 640]),
        };
        assert!(matches!(
            gradient_check(&mut model, &batch, 1e-5),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (mut model, _) = toy_model_and_batch(Arch::Fnn1, 0).unwrap();
        let batch = CheckBatch::Static {
            input: Tensor::filled(&[2, 6], f64::INFINITY),
            target: Tensor::zeros(&[2, 3]),
        };
        assert!(matches!(
            gradient_check(&mut model, &batch, 1e-5),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
