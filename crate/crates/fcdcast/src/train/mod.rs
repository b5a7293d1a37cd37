//! Mini-batch training loop: Adam with learning-rate decay, elastic-net
//! regularization, chronological validation, and early stopping.
//!
//! One "epoch" here is one mini-batch iteration: each draws `t_mb` samples
//! from a seeded shuffle (reshuffled whenever the pool is exhausted),
//! backpropagates the regularized quadratic loss, and applies one optimizer
//! step. Validation runs every `val_every` iterations on the chronologically
//! last `val_fraction` of training days — never a random split, which would
//! leak temporally correlated samples. The returned model carries the
//! parameters of the best validation checkpoint.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{LstmSample, Sample, SampleSpec};
use crate::models::{
    assemble_static_batch, assemble_target_batch, flatten_step_preds, predict_autoregressive,
    predict_static, Model, ModelNet,
};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::loss::{
    elastic_net_accumulate, elastic_net_penalty, quadratic_loss, quadratic_loss_grad,
};
use crate::nn::Tensor;
use crate::rng::substream;

fn default_t_mb() -> usize {
    50
}
fn default_max_epochs() -> u64 {
    5_000
}
fn default_eta0() -> f64 {
    5e-3
}
fn default_alpha0() -> f64 {
    1e-4
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_patience() -> usize {
    20
}
fn default_val_every() -> u64 {
    100
}
fn default_val_fraction() -> f64 {
    0.1
}

/// Training hyperparameters; the JSON schema of `--config` train files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Mini-batch size (at least 2: batch norm needs a batch).
    #[serde(default = "default_t_mb")]
    pub t_mb: usize,
    /// Mini-batch iterations to run. Desk-scale default; production runs
    /// are an order of magnitude longer.
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u64,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    /// Per-iteration learning-rate decay exponent.
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_lambda")]
    pub lambda_l1: f64,
    #[serde(default = "default_lambda")]
    pub lambda_l2: f64,
    /// Validation checks without improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val_every")]
    pub val_every: u64,
    /// Fraction of training days reserved for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Standard Adam bias correction; off reproduces the cold-start moments.
    #[serde(default)]
    pub adam_bias_correction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_mb < 2 {
            return Err(Error::validation("t_mb must be at least 2"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::validation("val_fraction must be in (0, 1)"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::validation("eta0 must be positive"));
        }
        if self.lambda_l1 < 0.0 || self.lambda_l2 < 0.0 {
            return Err(Error::validation("penalty weights must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            eta0: self.eta0,
            alpha0: self.alpha0,
            bias_correction: self.adam_bias_correction,
            ..AdamConfig::default()
        }
    }
}

/// The training pool: static samples for the dense/convolutional models,
/// step sequences for the recurrent one.
#[derive(Debug, Clone)]
pub enum TrainSet {
    Static(Vec<Sample>),
    Seq(Vec<LstmSample>),
}

impl TrainSet {
    pub fn len(&self) -> usize {
        match self {
            TrainSet::Static(v) => v.len(),
            TrainSet::Seq(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn anchor_slot(&self, idx: usize) -> usize {
        match self {
            TrainSet::Static(v) => v[idx].anchor_slot,
            TrainSet::Seq(v) => v[idx].anchor_slot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    /// Regularized objective of the mini-batch (data loss + penalty).
    pub train_loss: f64,
    /// Learning rate applied at this iteration.
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValRecord {
    pub iter: u64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    CompletedMaxEpochs,
    EarlyStopping,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub iterations: Vec<IterRecord>,
    pub checks: Vec<ValRecord>,
    /// Iteration whose parameters the returned model carries.
    pub best_iteration: u64,
    pub best_val_rmse: Option<f64>,
    pub stop_reason: StopReason,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl TrainLog {
    /// CSV log: `iter,train_loss,val_rmse,eta`, the validation column filled
    /// only on check iterations.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,train_loss,val_rmse,eta")?;
        let mut checks = self.checks.iter().peekable();
        for rec in &self.iterations {
            let val = match checks.peek() {
                Some(c) if c.iter == rec.iter => {
                    let v = c.val_rmse;
                    checks.next();
                    format!("{v}")
                }
                _ => String::new(),
            };
            writeln!(f, "{},{},{},{}", rec.iter, rec.train_loss, val, rec.eta)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Partition sample indices chronologically: the last `val_fraction` of
/// distinct anchor days become validation. With a single distinct day the
/// validation side is empty and early stopping is disabled.
fn chronological_indices(
    set: &TrainSet,
    slots_per_day: usize,
    val_fraction: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut days: Vec<usize> = (0..set.len())
        .map(|i| set.anchor_slot(i) / slots_per_day)
        .collect();
    let mut distinct = days.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let n_val_days = ((distinct.len() as f64) * val_fraction).floor() as usize;
    let n_val_days = n_val_days.min(distinct.len().saturating_sub(1));
    let first_val_day = if n_val_days == 0 {
        usize::MAX
    } else {
        distinct[distinct.len() - n_val_days]
    };
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, day) in days.drain(..).enumerate() {
        if day >= first_val_day {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

fn assemble_seq_batch(samples: &[&LstmSample]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let t_steps = samples[0].t_steps();
    let f0 = samples[0].steps[0].len();
    let n_out = samples[0].n_edges_out;
    let t_mb = samples.len();
    let mut steps = Vec::with_capacity(t_steps);
    let mut targets = Vec::with_capacity(t_steps);
    for tau in 0..t_steps {
        let mut x = Tensor::zeros(&[t_mb, f0]);
        let mut y = Tensor::zeros(&[t_mb, n_out]);
        for (i, s) in samples.iter().enumerate() {
            if s.t_steps() != t_steps || s.steps[tau].len() != f0 {
                return Err(Error::shape("ragged recurrent batch".to_string()));
            }
            x.data_mut()[i * f0..(i + 1) * f0].copy_from_slice(&s.steps[tau]);
            y.data_mut()[i * n_out..(i + 1) * n_out].copy_from_slice(&s.targets[tau]);
        }
        steps.push(x);
        targets.push(y);
    }
    Ok((steps, targets))
}

/// RMSE of the model over samples, in inference mode. With free-flow speeds
/// supplied, each error is scaled to kph by its edge's free-flow speed
/// before pooling.
pub fn validate(
    model: &Model,
    set: &TrainSet,
    indices: Option<&[usize]>,
    spec: &SampleSpec,
    ffs: Option<&[f64]>,
) -> Result<f64> {
    let all: Vec<usize>;
    let idx: &[usize] = match indices {
        Some(i) => i,
        None => {
            all = (0..set.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::validation("validation set is empty"));
    }
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    let scale = |edge_abs: usize| -> f64 {
        match ffs {
            Some(f) => f[edge_abs % f.len()],
            None => 1.0,
        }
    };
    match (set, &model.net) {
        (TrainSet::Static(samples), ModelNet::Feedforward(_)) => {
            for &i in idx {
                let s = &samples[i];
                let pred = predict_static(model, s, spec)?;
                let h = s.horizon;
                for l in 0..s.n_edges_out {
                    let k = scale(s.anchor_edge + l);
                    for t in 0..h {
                        let e = (pred[l * h + t] - s.target[l * h + t]) * k;
                        sq_sum += e * e;
                        count += 1;
                    }
                }
            }
        }
        (TrainSet::Seq(samples), ModelNet::Lstm(net)) => {
            for &i in idx {
                let s = &samples[i];
                let preds = flatten_step_preds(&predict_autoregressive(net, s)?);
                let targets = s.flat_targets();
                let h = s.t_steps();
                for l in 0..s.n_edges_out {
                    let k = scale(s.anchor_edge + l);
                    for t in 0..h {
                        let e = (preds[l * h + t] - targets[l * h + t]) * k;
                        sq_sum += e * e;
                        count += 1;
                    }
                }
            }
        }
        _ => {
            return Err(Error::shape(
                "sample kind does not match the model kind".to_string(),
            ))
        }
    }
    Ok((sq_sum / count as f64).sqrt())
}

struct Shuffler {
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Shuffler {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut s = Shuffler {
            order: indices,
            pos: 0,
            rng: substream(seed, "shuffle"),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, t_mb: usize) -> Vec<usize> {
        if self.pos + t_mb > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + t_mb].to_vec();
        self.pos += t_mb;
        batch
    }
}

/// Train `model` in place; returns the log and the optimizer state (whose
/// moments make checkpoints resumable). The model ends at the best
/// validation checkpoint (or the final iteration when no validation split
/// exists).
pub fn train(
    model: &mut Model,
    set: &TrainSet,
    spec: &SampleSpec,
    slots_per_day: usize,
    cfg: &TrainConfig,
) -> Result<(TrainLog, AdamState)> {
    cfg.validate()?;
    let (train_idx, val_idx) = chronological_indices(set, slots_per_day, cfg.val_fraction);
    if train_idx.len() < cfg.t_mb {
        return Err(Error::validation(format!(
            "{} training samples after the validation split; need at least t_mb = {}",
            train_idx.len(),
            cfg.t_mb
        )));
    }

    let mut adam = AdamState::new(cfg.adam());
    let mut shuffler = Shuffler::new(train_idx.clone(), cfg.rng_seed);
    let mut log = TrainLog {
        iterations: Vec::new(),
        checks: Vec::new(),
        best_iteration: 0,
        best_val_rmse: None,
        stop_reason: StopReason::CompletedMaxEpochs,
        train_samples: train_idx.len(),
        val_samples: val_idx.len(),
    };
    let mut best_state: Option<Checkpoint> = None;
    let mut checks_since_best = 0usize;

    for iter in 1..=cfg.max_epochs {
        let batch_idx = shuffler.next_batch(cfg.t_mb);
        model.zero_grads();
        let eta_used = adam.eta;

        let data_loss = match set {
            TrainSet::Static(samples) => {
                let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &samples[i]).collect();
                let input = assemble_static_batch(model, &batch, spec)?;
                let target = assemble_target_batch(&batch)?;
                let ff = match &mut model.net {
                    ModelNet::Feedforward(ff) => ff,
                    ModelNet::Lstm(_) => {
                        return Err(Error::shape(
                            "static samples cannot train a recurrent model".to_string(),
                        ))
                    }
                };
                let pred = ff.forward_train(&input)?;
                let loss = quadratic_loss(&pred, &target);
                let grad = quadratic_loss_grad(&pred, &target);
                ff.backward(&grad);
                loss
            }
            TrainSet::Seq(samples) => {
                let batch: Vec<&LstmSample> = batch_idx.iter().map(|&i| &samples[i]).collect();
                let (steps, targets) = assemble_seq_batch(&batch)?;
                let net = match &mut model.net {
                    ModelNet::Lstm(net) => net,
                    ModelNet::Feedforward(_) => {
                        return Err(Error::shape(
                            "step sequences cannot train a static model".to_string(),
                        ))
                    }
                };
                let outs = net.forward_train(&steps)?;
                let loss: f64 = outs
                    .iter()
                    .zip(&targets)
                    .map(|(p, t)| quadratic_loss(p, t))
                    .sum();
                let grads: Vec<Tensor> = outs
                    .iter()
                    .zip(&targets)
                    .map(|(p, t)| quadratic_loss_grad(p, t))
                    .collect();
                net.backward(&grads)?;
                loss
            }
        };

        let penalty = elastic_net_penalty(model.params(), cfg.lambda_l1, cfg.lambda_l2);
        let objective = data_loss + penalty;
        if !objective.is_finite() {
            let anchors: Vec<String> = batch_idx
                .iter()
                .map(|&i| format!("({},{})", anchor_edge_of(set, i), set.anchor_slot(i)))
                .collect();
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                detail: format!(
                    "objective = {objective}; offending batch anchors: {}",
                    anchors.join(" ")
                ),
            });
        }

        elastic_net_accumulate(model.params_mut(), cfg.lambda_l1, cfg.lambda_l2);
        let mut params = model.params_mut();
        adam.step(&mut params);
        drop(params);

        log.iterations.push(IterRecord {
            iter,
            train_loss: objective,
            eta: eta_used,
        });

        if !val_idx.is_empty() && iter % cfg.val_every == 0 {
            let val_rmse = validate(model, set, Some(&val_idx), spec, None)?;
            log.checks.push(ValRecord { iter, val_rmse });
            let improved = log.best_val_rmse.map_or(true, |best| val_rmse < best);
            if improved {
                log.best_val_rmse = Some(val_rmse);
                log.best_iteration = iter;
                best_state = Some(Checkpoint {
                    meta: String::new(),
                    entries: model.state_entries(),
                });
                checks_since_best = 0;
            } else {
                checks_since_best += 1;
                if checks_since_best >= cfg.patience {
                    log.stop_reason = StopReason::EarlyStopping;
                    break;
                }
            }
        }
    }

    if let Some(best) = best_state {
        model.load_state(&best)?;
    } else {
        log.best_iteration = log.iterations.last().map_or(0, |r| r.iter);
    }
    Ok((log, adam))
}

fn anchor_edge_of(set: &TrainSet, idx: usize) -> usize {
    match set {
        TrainSet::Static(v) => v[idx].anchor_edge,
        TrainSet::Seq(v) => v[idx].anchor_edge,
    }
}

/// Optimizer state serialized alongside the model for resumable training.
pub fn adam_entries(adam: &AdamState) -> Vec<crate::nn::checkpoint::CheckpointEntry> {
    use crate::nn::checkpoint::CheckpointEntry;
    let mut out = vec![
        CheckpointEntry::scalar("adam.eta", adam.eta),
        CheckpointEntry::scalar("adam.steps", adam.steps as f64),
    ];
    for m in &adam.moments {
        out.push(CheckpointEntry::new(
            format!("adam.{}.m", m.name),
            vec![m.m.len()],
            m.m.clone(),
        ));
        out.push(CheckpointEntry::new(
            format!("adam.{}.v", m.name),
            vec![m.v.len()],
            m.v.clone(),
        ));
    }
    out
}

/// Result of one grid-search candidate.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub index: usize,
    pub val_rmse: f64,
    pub best_iteration: u64,
}

/// Train every candidate and rank by validation RMSE (ascending); ties keep
/// candidate order. Returns the ranking and the winning model.
pub fn grid_search(
    build: impl Fn(usize) -> Result<Model>,
    configs: &[TrainConfig],
    set: &TrainSet,
    spec: &SampleSpec,
    slots_per_day: usize,
) -> Result<(Vec<GridResult>, Model)> {
    if configs.is_empty() {
        return Err(Error::validation("grid search needs at least one config"));
    }
    let mut results = Vec::new();
    let mut best_model: Option<(f64, usize, Model)> = None;
    for (index, cfg) in configs.iter().enumerate() {
        let mut model = build(index)?;
        let (log, _) = train(&mut model, set, spec, slots_per_day, cfg)?;
        let val_rmse = match log.best_val_rmse {
            Some(v) => v,
            None => validate(&model, set, None, spec, None)?,
        };
        results.push(GridResult {
            index,
            val_rmse,
            best_iteration: log.best_iteration,
        });
        let better = match &best_model {
            None => true,
            Some((best, _, _)) => val_rmse < *best,
        };
        if better {
            best_model = Some((val_rmse, index, model));
        }
    }
    results.sort_by(|a, b| a.val_rmse.partial_cmp(&b.val_rmse).unwrap());
    Ok((results, best_model.unwrap().2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig, SLOTS_PER_DAY};
    use crate::featurize::{build_sample, enumerate_samples};
    use crate::models::{Arch, InputMode, ModelConfig};
    use crate::nn::ParamKind;
    use crate::rng::substream;

    fn toy_samples(n_days: usize, stride: usize, seed: u64) -> (TrainSet, SampleSpec) {
        let panel = generate_synthetic(&SyntheticConfig {
            n_edges: 4,
            n_days,
            congestion_amplitude: 0.5,
            noise_std: 0.01,
            rng_seed: seed,
        })
        .unwrap();
        let spec = SampleSpec::reduced();
        let samples: Vec<_> = enumerate_samples(&panel, &spec, stride)
            .into_iter()
            .map(|(e, s)| build_sample(&panel, &spec, e, s).unwrap())
            .collect();
        (TrainSet::Static(samples), spec)
    }

    fn small_model(seed: u64) -> crate::models::Model {
        let mut cfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
        cfg.hidden_size = 8;
        cfg.build(&mut substream(seed, "init")).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            t_mb: 16,
            max_epochs: 200,
            eta0: 5e-3,
            alpha0: 0.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            patience: 50,
            val_every: 50,
            val_fraction: 0.3,
            rng_seed: 7,
            adam_bias_correction: false,
        }
    }

    #[test]
    fn adam_step_descends_a_convex_quadratic() {
        // f(x) = (x - 3)^2 / 2, gradient x - 3.
        let mut p = crate::nn::Param::weight(
            "x",
            crate::nn::Tensor::from_vec(&[1], vec![10.0]).unwrap(),
        );
        let mut adam = AdamState::new(AdamConfig {
            eta0: 1e-2,
            ..AdamConfig::default()
        });
        let f = |x: f64| (x - 3.0) * (x - 3.0) / 2.0;
        let before = f(p.value.data()[0]);
        p.grad.data_mut()[0] = p.value.data()[0] - 3.0;
        adam.step(&mut [&mut p]);
        assert!(f(p.value.data()[0]) < before);
    }

    #[test]
    fn training_loss_trends_downward() {
        let (set, spec) = toy_samples(12, 30, 3);
        let mut model = small_model(1);
        let mut cfg = quick_config();
        cfg.max_epochs = 100;
        let (log, _) = train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        // Least-squares slope of loss against iteration must be negative.
        let n = log.iterations.len() as f64;
        let mean_x = (n - 1.0) / 2.0;
        let mean_y = log.iterations.iter().map(|r| r.train_loss).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, r) in log.iterations.iter().enumerate() {
            let dx = i as f64 - mean_x;
            num += dx * (r.train_loss - mean_y);
            den += dx * dx;
        }
        assert!(num / den < 0.0, "slope {}", num / den);
    }

    #[test]
    fn heavy_ridge_shrinks_weights() {
        let (set, spec) = toy_samples(12, 30, 4);
        let mut model = small_model(2);
        let norm = |m: &crate::models::Model| -> f64 {
            m.params()
                .iter()
                .filter(|p| p.kind == ParamKind::Weight)
                .flat_map(|p| p.value.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let before = norm(&model);
        let mut cfg = quick_config();
        cfg.lambda_l2 = 1e3;
        cfg.max_epochs = 300;
        train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        let after = norm(&model);
        assert!(
            after < 0.15 * before,
            "ridge domination: {before} -> {after}"
        );
    }

    #[test]
    fn ridge_only_updates_shrink_monotonically() {
        // Pure penalty gradient through Adam: the norm must fall every step
        // until it reaches the eta-sized oscillation floor.
        let mut p = crate::nn::Param::weight(
            "w",
            crate::nn::Tensor::from_vec(&[4], vec![0.9, -0.7, 0.5, -0.3]).unwrap(),
        );
        let mut adam = AdamState::new(AdamConfig {
            eta0: 1e-3,
            ..AdamConfig::default()
        });
        let norm =
            |p: &crate::nn::Param| p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut last = norm(&p);
        for _ in 0..100 {
            p.zero_grad();
            elastic_net_accumulate([&mut p], 0.0, 1e3);
            adam.step(&mut [&mut p]);
            let now = norm(&p);
            assert!(now < last + 1e-12, "{now} vs {last}");
            last = now;
        }
    }

    #[test]
    fn same_seed_reproduces_training_exactly() {
        let (set, spec) = toy_samples(12, 30, 5);
        let cfg = quick_config();
        let mut a = small_model(3);
        let mut b = small_model(3);
        let (log_a, _) = train(&mut a, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        let (log_b, _) = train(&mut b, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        assert_eq!(log_a.iterations, log_b.iterations);
        assert_eq!(log_a.checks, log_b.checks);
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn returned_model_matches_best_validation() {
        let (set, spec) = toy_samples(14, 25, 6);
        let mut model = small_model(4);
        let mut cfg = quick_config();
        cfg.max_epochs = 400;
        cfg.val_every = 40;
        cfg.patience = 3;
        let (log, _) = train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        let best = log.best_val_rmse.expect("validation ran");
        let observed_min = log
            .checks
            .iter()
            .map(|c| c.val_rmse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, observed_min);
        // Re-validating the restored model reproduces the best check exactly.
        let (_, val_idx) = chronological_indices(&set, SLOTS_PER_DAY, cfg.val_fraction);
        let revalidated = validate(&model, &set, Some(&val_idx), &spec, None).unwrap();
        assert_eq!(revalidated, best);
    }

    #[test]
    fn insufficient_samples_is_a_validation_error() {
        let (set, spec) = toy_samples(12, 2000, 8);
        let mut model = small_model(5);
        let mut cfg = quick_config();
        cfg.t_mb = 500;
        assert!(matches!(
            train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn validate_is_zero_for_a_perfect_predictor() {
        // Zero weights predict exactly 0; samples with all-zero targets are
        // therefore predicted perfectly.
        let mut model = small_model(6);
        for p in model.params_mut() {
            if p.kind == ParamKind::Weight {
                p.value.fill(0.0);
            }
        }
        let spec = SampleSpec::reduced();
        let sample = crate::featurize::Sample {
            anchor_edge: 0,
            anchor_slot: 4000,
            input: vec![0.3; 32],
            target: vec![0.0; 20],
            n_edges_out: 1,
            horizon: 20,
            pre_anchor: vec![0.3; 4],
        };
        let set = TrainSet::Static(vec![sample]);
        let rmse = validate(&model, &set, None, &spec, None).unwrap();
        assert_eq!(rmse, 0.0);
    }

    #[test]
    fn validate_denormalizes_to_kph() {
        // Constant-0 predictions against constant-1 targets at 65 kph free
        // flow: the error is exactly 65 kph.
        let mut model = small_model(7);
        for p in model.params_mut() {
            if p.kind == ParamKind::Weight {
                p.value.fill(0.0);
            }
        }
        let spec = SampleSpec::reduced();
        let sample = crate::featurize::Sample {
            anchor_edge: 0,
            anchor_slot: 4000,
            input: vec![0.5; 32],
            target: vec![1.0; 20],
            n_edges_out: 1,
            horizon: 20,
            pre_anchor: vec![0.5; 4],
        };
        let set = TrainSet::Static(vec![sample]);
        let rmse = validate(&model, &set, None, &spec, Some(&[65.0])).unwrap();
        assert!((rmse - 65.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_empty_sets() {
        let model = small_model(8);
        let set = TrainSet::Static(vec![]);
        assert!(matches!(
            validate(&model, &set, None, &SampleSpec::reduced(), None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn train_log_csv_schema() {
        let (set, spec) = toy_samples(12, 40, 9);
        let mut model = small_model(9);
        let mut cfg = quick_config();
        cfg.max_epochs = 60;
        cfg.val_every = 30;
        let (log, _) = train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,train_loss,val_rmse,eta");
        assert_eq!(text.lines().count(), 61);
        // Check iterations carry a validation value, others leave it empty.
        let line30 = text.lines().nth(30).unwrap();
        assert!(!line30.split(',').nth(2).unwrap().is_empty());
        let line29 = text.lines().nth(29).unwrap();
        assert!(line29.split(',').nth(2).unwrap().is_empty());
    }

    #[test]
    fn grid_search_single_config_returns_it() {
        let (set, spec) = toy_samples(12, 40, 10);
        let cfg = quick_config();
        let (results, _model) = grid_search(
            |_| Ok(small_model(10)),
            &[cfg],
            &set,
            &spec,
            SLOTS_PER_DAY,
        )
        .unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].index, 0);
    }

    #[test]
    fn grid_search_ranks_crippled_config_last() {
        let (set, spec) = toy_samples(12, 30, 11);
        let sane = quick_config();
        let mut crippled = quick_config();
        crippled.lambda_l1 = 1e3;
        let (results, _model) = grid_search(
            |_| Ok(small_model(11)),
            &[crippled, sane],
            &set,
            &spec,
            SLOTS_PER_DAY,
        )
        .unwrap();
        assert_eq!(results[0].index, 1, "the sane config wins");
        assert!(results[0].val_rmse < results[1].val_rmse);
    }

    #[test]
    fn grid_search_is_deterministic() {
        let (set, spec) = toy_samples(12, 40, 12);
        let configs = vec![quick_config(), {
            let mut c = quick_config();
            c.eta0 = 1e-3;
            c
        }];
        let run = || {
            grid_search(
                |i| Ok(small_model(20 + i as u64)),
                &configs,
                &set,
                &spec,
                SLOTS_PER_DAY,
            )
            .unwrap()
            .0
            .iter()
            .map(|r| (r.index, r.val_rmse))
            .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_day_pools_skip_validation() {
        // All anchors on one day: the chronological split leaves nothing for
        // validation, so training runs to the iteration cap.
        let (set, spec) = toy_samples(12, 30, 13);
        let one_day: Vec<_> = match &set {
            TrainSet::Static(v) => v
                .iter()
                .filter(|s| s.anchor_slot / SLOTS_PER_DAY == 8)
                .cloned()
                .collect(),
            _ => unreachable!(),
        };
        assert!(one_day.len() >= 16);
        let set = TrainSet::Static(one_day);
        let mut model = small_model(14);
        let mut cfg = quick_config();
        cfg.max_epochs = 30;
        let (log, _) = train(&mut model, &set, &spec, SLOTS_PER_DAY, &cfg).unwrap();
        assert!(log.checks.is_empty());
        assert_eq!(log.best_iteration, 30);
        assert_eq!(log.stop_reason, StopReason::CompletedMaxEpochs);
    }
}
