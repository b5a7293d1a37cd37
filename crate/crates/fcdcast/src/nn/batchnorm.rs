//! Batch normalization with epoch-weighted running statistics.
//!
//! Training standardizes each feature over the mini-batch (biased variance,
//! epsilon inside the square root) and then applies the learned affine pair
//! `(gamma, beta)`. The running mean and variance used at inference are the
//! plain average of every batch statistic seen so far:
//!
//! `E_{e+1} = (e*E_e + mean_batch) / (e+1)` and likewise for the variance,
//! with `e` counting update steps. Inference corrects the stored variance by
//! `Tmb/(Tmb-1)` to undo the biased batch estimate.
//!
//! An exponential-moving-average update is available behind `ema_momentum`
//! for comparison; the default is the running-sum rule above.

use crate::error::{Error, Result};

use super::{Param, ParamKind, Tensor};

pub const BN_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    layout: Layout,
}

/// Decomposes a supported shape as `[outer, features, inner]`:
/// `[t, f]` reduces over `t`; `[t, c, h, w]` reduces over `t, h, w` per `c`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    outer: usize,
    features: usize,
    inner: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Result<Layout> {
        match shape.len() {
            2 => Ok(Layout {
                outer: shape[0],
                features: shape[1],
                inner: 1,
            }),
            4 => Ok(Layout {
                outer: shape[0],
                features: shape[1],
                inner: shape[2] * shape[3],
            }),
            _ => Err(Error::shape(format!(
                "batch norm expects [t, f] or [t, c, h, w], got {:?}",
                shape
            ))),
        }
    }

    fn reduce_count(&self) -> usize {
        self.outer * self.inner
    }

    #[inline]
    fn offset(&self, o: usize, f: usize, i: usize) -> usize {
        (o * self.features + f) * self.inner + i
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    /// Name prefix for parameters and checkpoint entries.
    pub prefix: String,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Number of running-statistic updates performed so far.
    pub updates: u64,
    /// Mini-batch size seen in training; drives the inference variance correction.
    pub train_batch: usize,
    pub eps: f64,
    /// `Some(m)` switches the running statistics to an EMA with momentum `m`.
    pub ema_momentum: Option<f64>,
    /// When set, train-mode forwards leave the running statistics untouched.
    pub frozen_stats: bool,
    /// Forward caches, one per train-mode pass since the last clear. A layer
    /// shared across unrolled time steps pushes one cache per step; backward
    /// pops them in reverse.
    caches: Vec<BnCache>,
}

impl BatchNorm {
    pub fn new(features: usize, name_prefix: &str) -> Self {
        BatchNorm {
            prefix: name_prefix.to_string(),
            gamma: Param::new(
                format!("{name_prefix}.gamma"),
                ParamKind::BnGamma,
                Tensor::filled(&[features], 1.0),
            ),
            beta: Param::new(
                format!("{name_prefix}.beta"),
                ParamKind::BnBeta,
                Tensor::zeros(&[features]),
            ),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            updates: 0,
            train_batch: 0,
            eps: BN_EPSILON,
            ema_momentum: None,
            frozen_stats: false,
            caches: Vec::new(),
        }
    }

    /// Drop any stored forward caches; called at the start of each batch.
    pub fn clear_caches(&mut self) {
        self.caches.clear();
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }

    fn check_features(&self, layout: Layout) -> Result<()> {
        if layout.features != self.features() {
            return Err(Error::shape(format!(
                "batch norm built for {} features, input has {}",
                self.features(),
                layout.features
            )));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let layout = Layout::of(x.shape())?;
        self.check_features(layout)?;
        let n = layout.reduce_count();
        if n < 2 {
            return Err(Error::validation(format!(
                "batch norm needs at least 2 elements per feature in training mode, got {n}"
            )));
        }
        let nf = n as f64;
        let f_count = layout.features;
        let mut mean = vec![0.0; f_count];
        let mut var = vec![0.0; f_count];
        for f in 0..f_count {
            let mut acc = 0.0;
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    acc += x.data()[layout.offset(o, f, i)];
                }
            }
            let mu = acc / nf;
            let mut sq = 0.0;
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    let d = x.data()[layout.offset(o, f, i)] - mu;
                    sq += d * d;
                }
            }
            mean[f] = mu;
            var[f] = sq / nf;
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for f in 0..f_count {
            let g = self.gamma.value.data()[f];
            let b = self.beta.value.data()[f];
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    let idx = layout.offset(o, f, i);
                    let xh = (x.data()[idx] - mean[f]) * inv_std[f];
                    x_hat.data_mut()[idx] = xh;
                    out.data_mut()[idx] = g * xh + b;
                }
            }
        }

        if !self.frozen_stats {
            self.train_batch = layout.outer;
            match self.ema_momentum {
                Some(m) => {
                    for f in 0..f_count {
                        self.running_mean[f] = (1.0 - m) * self.running_mean[f] + m * mean[f];
                        self.running_var[f] = (1.0 - m) * self.running_var[f] + m * var[f];
                    }
                }
                None => {
                    let e = self.updates as f64;
                    for f in 0..f_count {
                        self.running_mean[f] = (e * self.running_mean[f] + mean[f]) / (e + 1.0);
                        self.running_var[f] = (e * self.running_var[f] + var[f]) / (e + 1.0);
                    }
                }
            }
            self.updates += 1;
        }

        self.caches.push(BnCache {
            x_hat,
            inv_std,
            layout,
        });
        Ok(out)
    }

    /// Inference-mode variance: stored average of biased batch variances,
    /// corrected by `Tmb/(Tmb-1)`.
    fn corrected_var(&self, f: usize) -> f64 {
        let correction = if self.train_batch >= 2 {
            self.train_batch as f64 / (self.train_batch as f64 - 1.0)
        } else {
            1.0
        };
        self.running_var[f] * correction
    }

    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let layout = Layout::of(x.shape())?;
        self.check_features(layout)?;
        let mut out = Tensor::zeros(x.shape());
        for f in 0..layout.features {
            let g = self.gamma.value.data()[f];
            let b = self.beta.value.data()[f];
            let mu = self.running_mean[f];
            let inv = 1.0 / (self.corrected_var(f) + self.eps).sqrt();
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    let idx = layout.offset(o, f, i);
                    out.data_mut()[idx] = g * (x.data()[idx] - mu) * inv + b;
                }
            }
        }
        Ok(out)
    }

    /// Backward through the most recent un-consumed train-mode pass (LIFO).
    /// Accumulates gamma/beta gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self.caches.pop().expect("bn backward without forward");
        let cache = &cache;
        let layout = cache.layout;
        let n = layout.reduce_count() as f64;
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for f in 0..layout.features {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    let idx = layout.offset(o, f, i);
                    let dy = grad_out.data()[idx];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.x_hat.data()[idx];
                }
            }
            self.beta.grad.data_mut()[f] += sum_dy;
            self.gamma.grad.data_mut()[f] += sum_dy_xhat;

            let g = self.gamma.value.data()[f];
            let scale = g * cache.inv_std[f];
            for o in 0..layout.outer {
                for i in 0..layout.inner {
                    let idx = layout.offset(o, f, i);
                    let dy = grad_out.data()[idx];
                    let xh = cache.x_hat.data()[idx];
                    grad_in.data_mut()[idx] =
                        scale * (dy - sum_dy / n - xh * sum_dy_xhat / n);
                }
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_batch(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "bn-test");
        let data: Vec<f64> = (0..t * f).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::from_vec(&[t, f], data).unwrap()
    }

    fn batch_moments(out: &Tensor, f: usize) -> (f64, f64) {
        let t = out.shape()[0];
        let col: Vec<f64> = (0..t).map(|i| out.at2(i, f)).collect();
        let mean = col.iter().sum::<f64>() / t as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn standardizes_each_feature() {
        let mut bn = BatchNorm::new(4, "bn");
        let x = random_batch(16, 4, 1);
        let out = bn.forward_train(&x).unwrap();
        for f in 0..4 {
            let (mean, std) = batch_moments(&out, f);
            assert!(mean.abs() < 1e-10, "feature {f} mean {mean}");
            assert!((std - 1.0).abs() < 1e-6, "feature {f} std {std}");
        }
    }

    #[test]
    fn affine_pair_sets_mean_and_std() {
        let mut bn = BatchNorm::new(3, "bn");
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(3.0);
        let x = random_batch(32, 3, 2);
        let out = bn.forward_train(&x).unwrap();
        for f in 0..3 {
            let (mean, std) = batch_moments(&out, f);
            assert!((mean - 3.0).abs() < 1e-10);
            assert!((std - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let mut bn = BatchNorm::new(2, "bn");
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            bn.forward_train(&x),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn running_stats_average_batch_statistics() {
        let mut bn = BatchNorm::new(1, "bn");
        // Two batches with known means 1.0 and 3.0, biased variances 1.0 and 4.0.
        let a = Tensor::from_vec(&[2, 1], vec![0.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 5.0]).unwrap();
        bn.forward_train(&a).unwrap();
        bn.forward_train(&b).unwrap();
        assert!((bn.running_mean[0] - 2.0).abs() < 1e-12);
        assert!((bn.running_var[0] - 2.5).abs() < 1e-12);

        // Inference applies the Tmb/(Tmb-1) correction with Tmb = 2.
        let x = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let y = bn.forward_infer(&x).unwrap();
        let expect = (2.0 - 2.0) / (2.5 * 2.0 + BN_EPSILON).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn frozen_stats_do_not_move() {
        let mut bn = BatchNorm::new(2, "bn");
        bn.frozen_stats = true;
        bn.forward_train(&random_batch(8, 2, 3)).unwrap();
        assert_eq!(bn.updates, 0);
        assert_eq!(bn.running_mean, vec![0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Loss = sum(y * w) for a fixed random weighting w, so dL/dy = w.
        let mut bn = BatchNorm::new(4, "bn");
        bn.frozen_stats = true;
        let x = random_batch(5, 4, 4);
        let mut rng = substream(5, "bn-fd");
        let w: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss = |bn: &mut BatchNorm, x: &Tensor| -> f64 {
            let y = bn.forward_train(x).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };

        let base_grad_out = Tensor::from_vec(&[5, 4], w.clone()).unwrap();
        loss(&mut bn, &x);
        let analytic = bn.backward(&base_grad_out);

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let lp = loss(&mut bn, &xp);
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let lm = loss(&mut bn, &xm);
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }
}
