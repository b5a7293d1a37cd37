//! Model assembly: the four shipped architectures, parameter counting, and
//! checkpoint state.
//!
//! * `fnn1` / `fnn3` — one or three hidden layers of a shared width, each a
//!   dense / leaky-ReLU / batch-norm unit, then a dense output with the
//!   [0, 1] clamp.
//! * `vgg` — a 16-weight-layer convolutional stack over the `[8, 32, 32]`
//!   feature maps of the full input: 3x3 convolutions (stride 1, padding 1)
//!   in five blocks with 2x2 max pooling between them, then two dense
//!   layers and the clamped output head.
//! * `lstm` — batch norm on the step input, a single LSTM cell unrolled 20
//!   steps with shared weights, and a shared dense head per step.

pub mod feedforward;
pub mod lstm_net;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{to_cnn_tensor, Sample, SampleSpec};
use crate::nn::batchnorm::BatchNorm;
use crate::nn::checkpoint::{Checkpoint, CheckpointEntry};
use crate::nn::conv::{pool_out_extent, ConvLayer, MaxPoolLayer};
use crate::nn::dense::DenseLayer;
use crate::nn::init::{glorot, glorot_conv, lstm_diagonal};
use crate::nn::lstm::{LstmCell, GATES};
use crate::nn::{Param, ParamKind, Tensor};

pub use feedforward::{Feedforward, Layer};
pub use lstm_net::LstmNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fnn1,
    Fnn3,
    Vgg,
    Lstm,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Fnn1 => "fnn1",
            Arch::Fnn3 => "fnn3",
            Arch::Vgg => "vgg",
            Arch::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fnn1" => Ok(Arch::Fnn1),
            "fnn3" => Ok(Arch::Fnn3),
            "vgg" => Ok(Arch::Vgg),
            "lstm" => Ok(Arch::Lstm),
            other => Err(Error::config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Full,
    Reduced,
}

impl InputMode {
    pub fn name(&self) -> &'static str {
        match self {
            InputMode::Full => "full",
            InputMode::Reduced => "reduced",
        }
    }

    /// Default featurization spec for this mode.
    pub fn sample_spec(&self) -> SampleSpec {
        match self {
            InputMode::Full => SampleSpec::full(),
            InputMode::Reduced => SampleSpec::reduced(),
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InputMode::Full),
            "reduced" => Ok(InputMode::Reduced),
            other => Err(Error::config(format!("unknown mode '{other}'"))),
        }
    }
}

/// One convolutional block of the VGG plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggBlock {
    pub channels: usize,
    pub convs: usize,
}

/// Channel plan for the convolutional model. Convolutions are fixed at 3x3,
/// stride 1, padding 1; pooling at 2x2 with a configurable stride.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggPlan {
    pub blocks: Vec<VggBlock>,
    pub fc: Vec<usize>,
    pub pool_stride: usize,
}

impl Default for VggPlan {
    fn default() -> Self {
        VggPlan {
            blocks: vec![
                VggBlock { channels: 32, convs: 2 },
                VggBlock { channels: 64, convs: 2 },
                VggBlock { channels: 128, convs: 3 },
                VggBlock { channels: 256, convs: 3 },
                VggBlock { channels: 256, convs: 3 },
            ],
            fc: vec![512, 512],
            pool_stride: 2,
        }
    }
}

fn default_hidden() -> usize {
    32
}

fn default_slope() -> f64 {
    0.01
}

fn default_t_steps() -> usize {
    20
}

fn default_lstm_noise() -> f64 {
    1e-2
}

/// Hidden activation choice. The exponential linear unit is available for
/// comparison; leaky ReLU is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    LeakyRelu,
    Elu,
}

/// Model selection plus the knobs each architecture exposes. This is the
/// JSON schema accepted by `--config` model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub mode: InputMode,
    /// Hidden width for the dense and recurrent models.
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// Unrolled steps of the recurrent model.
    #[serde(default = "default_t_steps")]
    pub t_steps: usize,
    /// Noise scale of the recurrent diagonal initialization.
    #[serde(default = "default_lstm_noise")]
    pub lstm_init_noise: f64,
    /// Switch batch-norm running statistics from the epoch-weighted average
    /// to an EMA with this momentum. The default (off) weighs every batch
    /// since the start of training equally, which drags early-training
    /// statistics into inference; the EMA tracks the converged regime.
    #[serde(default)]
    pub bn_ema_momentum: Option<f64>,
    #[serde(default)]
    pub vgg: Option<VggPlan>,
}

impl ModelConfig {
    pub fn new(arch: Arch, mode: InputMode) -> Self {
        ModelConfig {
            arch,
            mode,
            hidden_size: default_hidden(),
            activation: Activation::LeakyRelu,
            leaky_slope: default_slope(),
            t_steps: default_t_steps(),
            lstm_init_noise: default_lstm_noise(),
            bn_ema_momentum: None,
            vgg: None,
        }
    }

    pub fn sample_spec(&self) -> SampleSpec {
        self.mode.sample_spec()
    }

    /// Flat input width of the chosen mode.
    pub fn input_len(&self) -> usize {
        self.sample_spec().input_len()
    }

    /// Total output width (`edges x horizon`).
    pub fn output_len(&self) -> usize {
        let spec = self.sample_spec();
        spec.n_edges_out() * spec.horizon()
    }

    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<Model> {
        build_model(self, rng)
    }
}

/// Dense architecture description.
#[derive(Debug, Clone, Copy)]
pub struct FnnConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub n_hidden: usize,
    pub output_size: usize,
}

/// Recurrent architecture description.
#[derive(Debug, Clone, Copy)]
pub struct LstmConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub t_steps: usize,
    pub output_size: usize,
}

#[derive(Debug, Clone)]
pub enum ModelNet {
    Feedforward(Feedforward),
    Lstm(LstmNet),
}

/// A built architecture plus the configuration that produced it. The config
/// rides along in checkpoints so evaluation can rebuild the exact model.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub net: ModelNet,
}

fn activation_layer(act: Activation, slope: f64) -> Layer {
    match act {
        Activation::LeakyRelu => Layer::LeakyRelu { slope, cache: None },
        Activation::Elu => Layer::Elu { alpha: 1.0, cache: None },
    }
}

/// Stack of `dense -> activation -> batch-norm` units and a clamped dense
/// output, with no bias terms anywhere.
pub fn build_fnn(cfg: &FnnConfig, act: Activation, slope: f64, rng: &mut ChaCha8Rng) -> Feedforward {
    let mut layers = Vec::new();
    let mut f_in = cfg.input_size;
    for i in 0..cfg.n_hidden {
        layers.push(Layer::Dense(DenseLayer::new(Param::weight(
            format!("fc{i}.weight"),
            glorot(f_in, cfg.hidden_size, rng),
        ))));
        layers.push(activation_layer(act, slope));
        layers.push(Layer::BatchNorm(BatchNorm::new(
            cfg.hidden_size,
            &format!("fc{i}.bn"),
        )));
        f_in = cfg.hidden_size;
    }
    layers.push(Layer::Dense(DenseLayer::new(Param::weight(
        "out.weight",
        glorot(f_in, cfg.output_size, rng),
    ))));
    layers.push(Layer::Clamp { cache: None });
    Feedforward {
        layers,
        input_shape: vec![cfg.input_size],
        output_len: cfg.output_size,
    }
}

/// Convolutional stack over `[channels, height, width]` feature maps.
pub fn build_vgg(
    plan: &VggPlan,
    input_shape: [usize; 3],
    output_size: usize,
    act: Activation,
    slope: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Feedforward> {
    let [mut ch, height, width] = input_shape;
    if height != width {
        return Err(Error::config(format!(
            "convolutional input must be square, got {height}x{width}"
        )));
    }
    let mut extent = height;
    let mut layers = Vec::new();
    let mut conv_idx = 0;
    for block in &plan.blocks {
        for _ in 0..block.convs {
            layers.push(Layer::Conv(ConvLayer::new(
                Param::weight(
                    format!("conv{conv_idx}.weight"),
                    glorot_conv(block.channels, ch, 3, rng),
                ),
                1,
                1,
            )));
            layers.push(activation_layer(act, slope));
            layers.push(Layer::BatchNorm(BatchNorm::new(
                block.channels,
                &format!("conv{conv_idx}.bn"),
            )));
            ch = block.channels;
            conv_idx += 1;
        }
        extent = pool_out_extent(extent, 2, plan.pool_stride).map_err(|_| {
            Error::config(format!(
                "spatial extent {extent} cannot be pooled again; too many blocks for the input"
            ))
        })?;
        layers.push(Layer::MaxPool(MaxPoolLayer::new(2, plan.pool_stride)));
    }
    layers.push(Layer::Flatten { cached_shape: None });
    let mut f_in = ch * extent * extent;
    for (i, &size) in plan.fc.iter().enumerate() {
        layers.push(Layer::Dense(DenseLayer::new(Param::weight(
            format!("fc{i}.weight"),
            glorot(f_in, size, rng),
        ))));
        layers.push(activation_layer(act, slope));
        layers.push(Layer::BatchNorm(BatchNorm::new(size, &format!("fc{i}.bn"))));
        f_in = size;
    }
    layers.push(Layer::Dense(DenseLayer::new(Param::weight(
        "out.weight",
        glorot(f_in, output_size, rng),
    ))));
    layers.push(Layer::Clamp { cache: None });
    Ok(Feedforward {
        layers,
        input_shape: input_shape.to_vec(),
        output_len: output_size,
    })
}

/// Recurrent model. Cell weights use the half-diagonal-plus-noise
/// initialization; the shared output head is Glorot like the dense models.
pub fn build_lstm(cfg: &LstmConfig, init_noise: f64, rng: &mut ChaCha8Rng) -> LstmNet {
    let bn = BatchNorm::new(cfg.input_size, "input.bn");
    let w_input = GATES.map(|g| {
        Param::weight(
            format!("lstm.wx.{g}"),
            lstm_diagonal(cfg.input_size, cfg.hidden_size, init_noise, rng),
        )
    });
    let w_hidden = GATES.map(|g| {
        Param::weight(
            format!("lstm.wh.{g}"),
            lstm_diagonal(cfg.hidden_size, cfg.hidden_size, init_noise, rng),
        )
    });
    let head = Param::weight(
        "head.weight",
        glorot(cfg.hidden_size, cfg.output_size, rng),
    );
    LstmNet::new(bn, LstmCell { w_input, w_hidden }, head, cfg.t_steps)
}

/// Build the architecture selected by `config`.
pub fn build_model(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    let spec = config.sample_spec();
    let net = match config.arch {
        Arch::Fnn1 | Arch::Fnn3 => {
            let n_hidden = if config.arch == Arch::Fnn1 { 1 } else { 3 };
            ModelNet::Feedforward(build_fnn(
                &FnnConfig {
                    input_size: spec.input_len(),
                    hidden_size: config.hidden_size,
                    n_hidden,
                    output_size: spec.n_edges_out() * spec.horizon(),
                },
                config.activation,
                config.leaky_slope,
                rng,
            ))
        }
        Arch::Vgg => {
            let full = match spec {
                SampleSpec::Full(f) => f,
                SampleSpec::Reduced(_) => {
                    return Err(Error::config(
                        "the convolutional model requires the full input mode".to_string(),
                    ))
                }
            };
            if full.bf != full.window_width() {
                return Err(Error::config(
                    "feature-map layout needs equal current-day and past-day widths".to_string(),
                ));
            }
            let plan = config.vgg.clone().unwrap_or_default();
            ModelNet::Feedforward(build_vgg(
                &plan,
                [full.df + 1, full.n0, full.bf],
                full.target_len(),
                config.activation,
                config.leaky_slope,
                rng,
            )?)
        }
        Arch::Lstm => ModelNet::Lstm(build_lstm(
            &LstmConfig {
                input_size: spec.input_len(),
                hidden_size: config.hidden_size,
                t_steps: config.t_steps,
                output_size: spec.n_edges_out(),
            },
            config.lstm_init_noise,
            rng,
        )),
    };
    let mut model = Model {
        config: config.clone(),
        net,
    };
    for bn in model.batch_norms_mut() {
        bn.ema_momentum = config.bn_ema_momentum;
    }
    Ok(model)
}

/// Per-layer weight-parameter counts. Batch-norm scale/shift pairs are
/// tallied separately and excluded from the total.
#[derive(Debug, Clone)]
pub struct ParamCount {
    pub rows: Vec<(String, usize)>,
    pub total_weights: usize,
    pub bn_params: usize,
}

pub fn count_parameters(model: &Model) -> ParamCount {
    let mut rows = Vec::new();
    let mut total = 0usize;
    let mut bn = 0usize;
    match &model.net {
        ModelNet::Feedforward(ff) => {
            for layer in &ff.layers {
                let weights: usize = layer
                    .params()
                    .iter()
                    .filter(|p| p.kind == ParamKind::Weight)
                    .map(|p| p.value.len())
                    .sum();
                bn += layer
                    .params()
                    .iter()
                    .filter(|p| p.kind != ParamKind::Weight)
                    .map(|p| p.value.len())
                    .sum::<usize>();
                if weights > 0 {
                    rows.push((layer.label(), weights));
                    total += weights;
                }
            }
        }
        ModelNet::Lstm(net) => {
            for p in net.params() {
                match p.kind {
                    ParamKind::Weight => {
                        rows.push((p.name.clone(), p.value.len()));
                        total += p.value.len();
                    }
                    _ => bn += p.value.len(),
                }
            }
        }
    }
    ParamCount {
        rows,
        total_weights: total,
        bn_params: bn,
    }
}

impl Model {
    pub fn params(&self) -> Vec<&Param> {
        match &self.net {
            ModelNet::Feedforward(ff) => ff.params(),
            ModelNet::Lstm(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.net {
            ModelNet::Feedforward(ff) => ff.params_mut(),
            ModelNet::Lstm(net) => net.params_mut(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        match &self.net {
            ModelNet::Feedforward(ff) => ff.batch_norms(),
            ModelNet::Lstm(net) => vec![&net.bn],
        }
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match &mut self.net {
            ModelNet::Feedforward(ff) => ff.batch_norms_mut(),
            ModelNet::Lstm(net) => vec![&mut net.bn],
        }
    }

    /// Freeze or thaw batch-norm running statistics (gradient checking).
    pub fn set_bn_frozen(&mut self, frozen: bool) {
        for bn in self.batch_norms_mut() {
            bn.frozen_stats = frozen;
        }
    }

    /// Serialize parameters, batch-norm buffers, and the model config.
    pub fn state_entries(&self) -> Vec<CheckpointEntry> {
        let mut entries = Vec::new();
        for p in self.params() {
            entries.push(CheckpointEntry::new(
                format!("p.{}", p.name),
                p.value.shape().to_vec(),
                p.value.data().to_vec(),
            ));
        }
        for bn in self.batch_norms() {
            entries.push(CheckpointEntry::new(
                format!("{}.running_mean", bn.prefix),
                vec![bn.running_mean.len()],
                bn.running_mean.clone(),
            ));
            entries.push(CheckpointEntry::new(
                format!("{}.running_var", bn.prefix),
                vec![bn.running_var.len()],
                bn.running_var.clone(),
            ));
            entries.push(CheckpointEntry::scalar(
                format!("{}.updates", bn.prefix),
                bn.updates as f64,
            ));
            entries.push(CheckpointEntry::scalar(
                format!("{}.train_batch", bn.prefix),
                bn.train_batch as f64,
            ));
        }
        entries
    }

    /// Restore parameters and batch-norm buffers from checkpoint entries.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let entry = ckpt.entry(&format!("p.{}", p.name))?;
            if entry.shape != p.value.shape() {
                return Err(Error::shape(format!(
                    "checkpoint entry '{}' has shape {:?}, model expects {:?}",
                    p.name,
                    entry.shape,
                    p.value.shape()
                )));
            }
            p.value.data_mut().copy_from_slice(&entry.data);
        }
        for bn in self.batch_norms_mut() {
            let mean = ckpt.entry(&format!("{}.running_mean", bn.prefix))?;
            let var = ckpt.entry(&format!("{}.running_var", bn.prefix))?;
            if mean.data.len() != bn.running_mean.len() {
                return Err(Error::shape(format!(
                    "checkpoint batch-norm '{}' width mismatch",
                    bn.prefix
                )));
            }
            bn.running_mean.copy_from_slice(&mean.data);
            bn.running_var.copy_from_slice(&var.data);
            bn.updates = ckpt.scalar(&format!("{}.updates", bn.prefix))? as u64;
            bn.train_batch = ckpt.scalar(&format!("{}.train_batch", bn.prefix))? as usize;
        }
        Ok(())
    }
}

/// Assemble a training/inference batch for a static (non-recurrent) model:
/// flat `[t, f0]` for dense stacks, `[t, c, h, w]` feature maps for the
/// convolutional one.
pub fn assemble_static_batch(
    model: &Model,
    samples: &[&Sample],
    spec: &SampleSpec,
) -> Result<Tensor> {
    let ff = match &model.net {
        ModelNet::Feedforward(ff) => ff,
        ModelNet::Lstm(_) => {
            return Err(Error::shape(
                "recurrent models take step sequences, not static batches".to_string(),
            ))
        }
    };
    let t = samples.len();
    match ff.input_shape.len() {
        1 => {
            let f0 = ff.input_shape[0];
            let mut out = Tensor::zeros(&[t, f0]);
            for (i, s) in samples.iter().enumerate() {
                if s.input.len() != f0 {
                    return Err(Error::shape(format!(
                        "sample input {} does not match model input {f0}",
                        s.input.len()
                    )));
                }
                out.data_mut()[i * f0..(i + 1) * f0].copy_from_slice(&s.input);
            }
            Ok(out)
        }
        3 => {
            let full = match spec {
                SampleSpec::Full(f) => f,
                SampleSpec::Reduced(_) => {
                    return Err(Error::shape(
                        "feature-map batches require the full input mode".to_string(),
                    ))
                }
            };
            let per = ff.input_shape.iter().product::<usize>();
            let mut out = Tensor::zeros(&[t, ff.input_shape[0], ff.input_shape[1], ff.input_shape[2]]);
            for (i, s) in samples.iter().enumerate() {
                let maps = to_cnn_tensor(s, full)?;
                out.data_mut()[i * per..(i + 1) * per].copy_from_slice(maps.data());
            }
            Ok(out)
        }
        other => Err(Error::shape(format!("unsupported input rank {other}"))),
    }
}

/// Stack sample targets into `[t, output_len]`.
pub fn assemble_target_batch(samples: &[&Sample]) -> Result<Tensor> {
    let t = samples.len();
    let width = samples
        .first()
        .map(|s| s.target.len())
        .ok_or_else(|| Error::validation("empty batch"))?;
    let mut out = Tensor::zeros(&[t, width]);
    for (i, s) in samples.iter().enumerate() {
        if s.target.len() != width {
            return Err(Error::shape("ragged target batch".to_string()));
        }
        out.data_mut()[i * width..(i + 1) * width].copy_from_slice(&s.target);
    }
    Ok(out)
}

/// Inference on a single static sample; returns the flat prediction.
pub fn predict_static(model: &Model, sample: &Sample, spec: &SampleSpec) -> Result<Vec<f64>> {
    let batch = assemble_static_batch(model, &[sample], spec)?;
    match &model.net {
        ModelNet::Feedforward(ff) => Ok(ff.forward_infer(&batch)?.into_vec()),
        ModelNet::Lstm(_) => unreachable!("assemble_static_batch rejects recurrent models"),
    }
}

/// Run the recurrent model autoregressively on one sample: input entries
/// that refer to slots at or after the anchor are spliced from earlier
/// predictions instead of the teacher-forced ground truth.
pub fn predict_autoregressive(
    net: &LstmNet,
    sample: &crate::featurize::LstmSample,
) -> Result<Vec<Vec<f64>>> {
    net.predict_with(|tau, preds| {
        let mut x = sample.steps[tau].clone();
        for p in sample.patches.iter().filter(|p| p.tau == tau) {
            x[p.input_index] = preds[p.source_step][p.source_output];
        }
        x
    })
}

/// Flatten per-step predictions to the `[n_out x horizon]` target layout.
pub fn flatten_step_preds(preds: &[Vec<f64>]) -> Vec<f64> {
    let t_steps = preds.len();
    let n_out = preds.first().map(Vec::len).unwrap_or(0);
    let mut out = vec![0.0; n_out * t_steps];
    for (tau, step) in preds.iter().enumerate() {
        for (l, &v) in step.iter().enumerate() {
            out[l * t_steps + tau] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng() -> ChaCha8Rng {
        substream(17, "init")
    }

    #[test]
    fn fnn1_forward_shape_on_zero_input() {
        let mut model = build_fnn(
            &FnnConfig {
                input_size: 32,
                hidden_size: 32,
                n_hidden: 1,
                output_size: 20,
            },
            0.01,
            &mut rng(),
        );
        let x = Tensor::zeros(&[4, 32]);
        let y = model.forward_train(&x).unwrap();
        assert_eq!(y.shape(), &[4, 20]);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fnn3_full_input_weight_count() {
        let cfg = ModelConfig::new(Arch::Fnn3, InputMode::Full);
        let model = cfg.build(&mut rng()).unwrap();
        let count = count_parameters(&model);
        assert_eq!(count.total_weights, 284_672);
    }

    #[test]
    fn fnn1_count_oracle() {
        // 32 -> 64 -> 20: 32*64 + 64*20 = 3328.
        let model = Model {
            config: ModelConfig::new(Arch::Fnn1, InputMode::Reduced),
            net: ModelNet::Feedforward(build_fnn(
                &FnnConfig {
                    input_size: 32,
                    hidden_size: 64,
                    n_hidden: 1,
                    output_size: 20,
                },
                Activation::LeakyRelu,
                0.01,
                &mut rng(),
            )),
        };
        assert_eq!(count_parameters(&model).total_weights, 3328);
    }

    #[test]
    fn dense_4_to_3_counts_12() {
        let model = Model {
            config: ModelConfig::new(Arch::Fnn1, InputMode::Reduced),
            net: ModelNet::Feedforward(build_fnn(
                &FnnConfig {
                    input_size: 4,
                    hidden_size: 3,
                    n_hidden: 1,
                    output_size: 2,
                },
                Activation::LeakyRelu,
                0.01,
                &mut rng(),
            )),
        };
        let count = count_parameters(&model);
        assert_eq!(count.rows[0].1, 12);
    }

    #[test]
    fn lstm_reduced_weight_count_is_8224() {
        // 4 gates x (32x32 spatial + 32x32 temporal) + 32x1 head.
        let cfg = ModelConfig::new(Arch::Lstm, InputMode::Reduced);
        let model = cfg.build(&mut rng()).unwrap();
        assert_eq!(count_parameters(&model).total_weights, 8224);
    }

    #[test]
    fn vgg_builds_640_outputs_with_documented_count() {
        let cfg = ModelConfig::new(Arch::Vgg, InputMode::Full);
        let model = cfg.build(&mut rng()).unwrap();
        let ff = match &model.net {
            ModelNet::Feedforward(ff) => ff,
            _ => unreachable!(),
        };
        assert_eq!(ff.output_len, 640);
        assert_eq!(ff.input_shape, vec![8, 32, 32]);
        // The shipped plan: 13 convolutions + 3 dense layers = 16 weight layers.
        let count = count_parameters(&model);
        assert_eq!(count.rows.len(), 16);
        assert_eq!(count.total_weights, 4_400_384);
    }

    #[test]
    fn vgg_rejects_reduced_mode_and_over_pooling() {
        let cfg = ModelConfig::new(Arch::Vgg, InputMode::Reduced);
        assert!(matches!(cfg.build(&mut rng()), Err(Error::Config(_))));

        let mut cfg = ModelConfig::new(Arch::Vgg, InputMode::Full);
        let mut plan = VggPlan::default();
        plan.blocks.push(VggBlock { channels: 256, convs: 1 });
        cfg.vgg = Some(plan);
        assert!(matches!(cfg.build(&mut rng()), Err(Error::Config(_))));
    }

    #[test]
    fn vgg_small_forward_runs_and_is_clamped() {
        // A toy plan: one block of two convs on an [2, 8, 8] input.
        let plan = VggPlan {
            blocks: vec![VggBlock { channels: 3, convs: 2 }],
            fc: vec![8],
            pool_stride: 2,
        };
        let mut ff = build_vgg(&plan, [2, 8, 8], 5, Activation::LeakyRelu, 0.01, &mut rng()).unwrap();
        let mut r = substream(3, "x");
        let data: Vec<f64> = (0..2 * 2 * 8 * 8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[2, 2, 8, 8], data).unwrap();
        let y = ff.forward_train(&x).unwrap();
        assert_eq!(y.shape(), &[2, 5]);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn conv_block_on_constant_input_is_interior_constant() {
        // Translation invariance on constant fields, away from the padded rim.
        let plan = VggPlan {
            blocks: vec![VggBlock { channels: 4, convs: 1 }],
            fc: vec![],
            pool_stride: 2,
        };
        let ff = build_vgg(&plan, [2, 8, 8], 3, Activation::LeakyRelu, 0.01, &mut rng()).unwrap();
        let x = Tensor::filled(&[1, 2, 8, 8], 0.6);
        // Run just the first conv + activation.
        let conv_out = match &ff.layers[0] {
            Layer::Conv(c) => c.forward_infer(&x).unwrap(),
            _ => unreachable!(),
        };
        for f in 0..4 {
            let center = conv_out.at4(0, f, 4, 4);
            for l in 1..7 {
                for m in 1..7 {
                    assert!((conv_out.at4(0, f, l, m) - center).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lstm_zero_weights_zero_input_gives_zero_hidden() {
        let cfg = ModelConfig::new(Arch::Lstm, InputMode::Reduced);
        let mut model = cfg.build(&mut rng()).unwrap();
        for p in model.params_mut() {
            if p.kind == ParamKind::Weight {
                p.value.fill(0.0);
            }
        }
        let net = match &mut model.net {
            ModelNet::Lstm(net) => net,
            _ => unreachable!(),
        };
        let preds = net
            .predict_with(|_, _| vec![0.0; 32])
            .unwrap();
        // o-gate 0.5 * tanh(0) = 0 hidden, and the zero head keeps outputs 0.
        assert!(preds.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_weights_are_shared_across_steps() {
        let mut cfg = ModelConfig::new(Arch::Lstm, InputMode::Reduced);
        let model_20 = cfg.build(&mut rng()).unwrap();
        cfg.t_steps = 5;
        let model_5 = cfg.build(&mut rng()).unwrap();
        // Unrolling depth does not change the parameter set.
        assert_eq!(
            count_parameters(&model_20).total_weights,
            count_parameters(&model_5).total_weights
        );
        assert_eq!(model_20.params().len(), model_5.params().len());
    }

    #[test]
    fn seeded_builds_are_reproducible() {
        let cfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
        let a = cfg.build(&mut substream(5, "init")).unwrap();
        let b = cfg.build(&mut substream(5, "init")).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn state_round_trip_through_checkpoint() {
        let cfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
        let mut trained = cfg.build(&mut substream(1, "init")).unwrap();
        // Mutate a bit so the restore is observable.
        if let ModelNet::Feedforward(ff) = &mut trained.net {
            let mut r = substream(2, "x");
            let data: Vec<f64> = (0..3 * 32).map(|_| r.gen_range(0.0..1.0)).collect();
            let x = Tensor::from_vec(&[3, 32], data).unwrap();
            ff.forward_train(&x).unwrap();
        }
        let ckpt = Checkpoint {
            meta: serde_json::to_string(&trained.config).unwrap(),
            entries: trained.state_entries(),
        };
        let mut fresh = cfg.build(&mut substream(9, "init")).unwrap();
        fresh.load_state(&ckpt).unwrap();
        for (pa, pb) in trained.params().iter().zip(fresh.params()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let (ta, tb) = (&trained.batch_norms()[0], &fresh.batch_norms()[0]);
        assert_eq!(ta.running_mean, tb.running_mean);
        assert_eq!(ta.updates, tb.updates);
    }

    #[test]
    fn inference_is_locally_linear_between_kinks() {
        // With batch norm in inference mode the dense stack is piecewise
        // linear; a small directional probe must be exactly linear as long
        // as no activation crosses a kink.
        let cfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
        let model = cfg.build(&mut substream(21, "init")).unwrap();
        let ff = match &model.net {
            ModelNet::Feedforward(ff) => ff,
            _ => unreachable!(),
        };
        let x: Vec<f64> = (0..32).map(|i| 0.4 + 0.01 * i as f64).collect();
        let d: Vec<f64> = (0..32).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let eps = 1e-6;
        let probe = |alpha: f64| {
            let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            ff.predict_flat(&xs).unwrap()
        };
        let f0 = probe(0.0);
        let f1 = probe(eps);
        let f2 = probe(2.0 * eps);
        for k in 0..f0.len() {
            let second_diff = f2[k] - 2.0 * f1[k] + f0[k];
            assert!(second_diff.abs() < 1e-12, "output {k}: {second_diff}");
        }
    }

    proptest! {
        /// Model outputs always land in [0, 1], whatever the parameters.
        #[test]
        fn outputs_are_clamped(seed in 0u64..500, scale in 0.1f64..20.0) {
            let cfg = ModelConfig::new(Arch::Fnn1, InputMode::Reduced);
            let mut model = cfg.build(&mut substream(seed, "init")).unwrap();
            for p in model.params_mut() {
                for v in p.value.data_mut() {
                    *v *= scale;
                }
            }
            let ff = match &model.net {
                ModelNet::Feedforward(ff) => ff,
                _ => unreachable!(),
            };
            let mut r = substream(seed, "input");
            let x: Vec<f64> = (0..32).map(|_| r.gen_range(-5.0..5.0)).collect();
            let y = ff.predict_flat(&x).unwrap();
            prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        /// Weight totals match the closed-form expressions.
        #[test]
        fn count_matches_closed_form(
            f0 in 1usize..40,
            fh in 1usize..40,
            out in 1usize..30,
            n_hidden in 1usize..4,
        ) {
            let model = Model {
                config: ModelConfig::new(Arch::Fnn1, InputMode::Reduced),
                net: ModelNet::Feedforward(build_fnn(
                    &FnnConfig { input_size: f0, hidden_size: fh, n_hidden, output_size: out },
                    Activation::LeakyRelu,
                    0.01,
                    &mut substream(0, "init"),
                )),
            };
            let expect = f0 * fh + (n_hidden - 1) * fh * fh + fh * out;
            prop_assert_eq!(count_parameters(&model).total_weights, expect);

            let lstm = Model {
                config: ModelConfig::new(Arch::Lstm, InputMode::Reduced),
                net: ModelNet::Lstm(build_lstm(
                    &LstmConfig { input_size: f0, hidden_size: fh, t_steps: 4, output_size: out },
                    1e-2,
                    &mut substream(0, "init"),
                )),
            };
            let expect = 4 * (f0 * fh + fh * fh) + fh * out;
            prop_assert_eq!(count_parameters(&lstm).total_weights, expect);
        }
    }
}
