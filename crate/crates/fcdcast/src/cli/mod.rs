//! Command-line entry point: generate/ingest -> featurize -> train ->
//! evaluate, plus parameter counting, gradient checking, and manifest-driven
//! reruns.
//!
//! Every command that writes artifacts drops a `<first-output>.manifest.json`
//! next to them recording the exact argument vector, seeds, input digests,
//! and output digests; `fcdcast repro --manifest <file>` re-executes the
//! command and verifies the outputs digest-for-digest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    chronological_split, generate_synthetic, io as data_io, load_panel, mask_night_hours,
    SpeedPanel, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, svg::write_svg};
use crate::featurize::{
    build_lstm_sample, build_sample, enumerate_samples, enumerate_samples_in, SampleSpec,
};
use crate::models::{
    build_fnn, build_lstm, build_vgg, count_parameters, Activation, Arch, FnnConfig, InputMode,
    LstmConfig, Model, ModelConfig, ModelNet, VggBlock, VggPlan,
};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::gradcheck::{gradient_check, CheckBatch, FD_STEP};
use crate::nn::Tensor;
use crate::rng::substream;
use crate::train::{adam_entries, train, TrainConfig, TrainSet};

#[derive(Parser, Debug)]
#[command(
    name = "fcdcast",
    version,
    about = "Road-speed forecasting: synthetic panels, featurization, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic seasonal speed panel.
    Generate {
        #[arg(long)]
        edges: usize,
        #[arg(long)]
        days: usize,
        #[arg(long)]
        seed: u64,
        /// Depth of the commuting congestion dips, in [0, 1].
        #[arg(long, default_value_t = 0.6)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.03)]
        noise_std: f64,
        /// Keep the 23:00-05:00 slots valid instead of masking them.
        #[arg(long)]
        keep_nights: bool,
        #[arg(long, default_value = "panel.bin")]
        out: PathBuf,
    },
    /// Build a panel from speed and free-flow CSV files.
    Ingest {
        /// CSV with header `edge_id,slot,speed_kph`.
        #[arg(long)]
        speeds: PathBuf,
        /// CSV with header `edge_id,ffs_kph`.
        #[arg(long)]
        ffs: PathBuf,
        #[arg(long)]
        keep_nights: bool,
        #[arg(long, default_value = "panel.bin")]
        out: PathBuf,
    },
    /// Cut a panel into supervised samples and cache them.
    Featurize {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the chronological training split of a panel.
    Train {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        mode: String,
        /// One of fnn1, fnn3, vgg, lstm.
        #[arg(long)]
        model: String,
        /// Training hyperparameters (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture knobs (JSON); the --model/--mode flags override its
        /// arch and mode fields.
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        /// Anchor stride in slots during featurization.
        #[arg(long, default_value_t = 5)]
        stride: usize,
        #[arg(long, default_value = "ckpt.fcw")]
        out: PathBuf,
        /// Training log CSV (`iter,train_loss,val_rmse,eta`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the chronological test split.
    Evaluate {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Must match the checkpoint's input mode when given.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
        /// Also render RMSE / Q² charts.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Add constant / changing / standard regime breakdowns.
        #[arg(long)]
        regimes: bool,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long, default_value_t = 5)]
        stride: usize,
        /// Free-flow sidecar CSV for kph reporting; panel default otherwise.
        #[arg(long)]
        ffs: Option<PathBuf>,
        /// Worker threads for inference (deterministic at any count).
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print the per-layer weight-parameter breakdown of a model config.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
    /// Verify analytic gradients against finite differences on a toy model.
    GradientCheck {
        /// One of fnn1, fnn3, vgg, lstm.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run a recorded command and verify its outputs byte-for-byte.
    Repro {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Record of one artifact-producing run, sufficient to reproduce it.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn manifest_path(primary_out: &Path) -> PathBuf {
    let mut name = primary_out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    primary_out.with_file_name(name)
}

fn write_manifest(
    argv: &[String],
    seeds: &[u64],
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> Result<()> {
    let mut input_digests = BTreeMap::new();
    for p in inputs {
        input_digests.insert(p.display().to_string(), sha256_file(p)?);
    }
    let mut out_digests = BTreeMap::new();
    for p in outputs {
        out_digests.insert(p.display().to_string(), sha256_file(p)?);
    }
    let manifest = RunManifest {
        tool: "fcdcast".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv: argv.to_vec(),
        seeds: seeds.to_vec(),
        input_digests,
        outputs: out_digests,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let path = manifest_path(outputs[0]);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse and execute `argv` (including the program name); returns the
/// process exit code. 0 success, 1 usage/validation errors, 2 internal.
pub fn dispatch(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match run(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    match command {
        Command::Generate {
            edges,
            days,
            seed,
            amplitude,
            noise_std,
            keep_nights,
            out,
        } => {
            let cfg = SyntheticConfig {
                n_edges: edges,
                n_days: days,
                congestion_amplitude: amplitude,
                noise_std,
                rng_seed: seed,
            };
            let mut panel = generate_synthetic(&cfg)?;
            if !keep_nights {
                panel = mask_night_hours(panel, 23, 5);
            }
            data_io::write_panel(&panel, &out)?;
            write_manifest(argv, &[seed], &[], &[&out], started)?;
            println!(
                "wrote {}: {} edges x {} slots ({} days)",
                out.display(),
                panel.n_edges(),
                panel.n_slots(),
                panel.n_days()
            );
            Ok(())
        }
        Command::Ingest {
            speeds,
            ffs,
            keep_nights,
            out,
        } => {
            let observations = data_io::read_speeds_csv(&speeds)?;
            let free_flow = data_io::read_ffs_csv(&ffs)?;
            let mut panel = load_panel(observations, &free_flow)?;
            if !keep_nights {
                panel = mask_night_hours(panel, 23, 5);
            }
            data_io::write_panel(&panel, &out)?;
            write_manifest(argv, &[], &[&speeds, &ffs], &[&out], started)?;
            println!(
                "wrote {}: {} edges x {} slots",
                out.display(),
                panel.n_edges(),
                panel.n_slots()
            );
            Ok(())
        }
        Command::Featurize {
            panel,
            mode,
            stride,
            out,
        } => {
            let p = data_io::read_panel(&panel)?;
            let spec = mode.parse::<InputMode>()?.sample_spec();
            let anchors = enumerate_samples(&p, &spec, stride);
            let samples: Vec<_> = anchors
                .iter()
                .map(|&(e, s)| build_sample(&p, &spec, e, s).expect("enumerated anchor"))
                .collect();
            crate::featurize::io::write_samples(&samples, spec.mode_name(), &out)?;
            write_manifest(argv, &[], &[&panel], &[&out], started)?;
            println!("wrote {}: {} samples", out.display(), samples.len());
            Ok(())
        }
        Command::Train {
            panel,
            mode,
            model,
            config,
            model_config,
            train_fraction,
            stride,
            out,
            log,
        } => {
            let p = data_io::read_panel(&panel)?;
            let arch: Arch = model.parse()?;
            let input_mode: InputMode = mode.parse()?;
            let mut model_cfg = match &model_config {
                Some(path) => read_json_file::<ModelConfig>(path)?,
                None => ModelConfig::new(arch, input_mode),
            };
            model_cfg.arch = arch;
            model_cfg.mode = input_mode;
            let train_cfg: TrainConfig = match &config {
                Some(path) => read_json_file(path)?,
                None => TrainConfig::default(),
            };

            let split = chronological_split(&p, train_fraction)?;
            let spec = model_cfg.sample_spec();
            let set = build_train_set(&split.train, &spec, stride, arch, model_cfg.t_steps)?;
            println!(
                "training {} ({} mode) on {} samples from days 0..{}",
                arch.name(),
                input_mode.name(),
                set.len(),
                split.boundary_slot / p.slots_per_day()
            );

            let mut net = model_cfg.build(&mut substream(train_cfg.rng_seed, "init"))?;
            let outcome = train(
                &mut net,
                &set,
                &spec,
                p.slots_per_day(),
                &train_cfg,
            );
            let (log_data, adam) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    if matches!(e, Error::NonFiniteLoss { .. }) {
                        let crash = out.with_extension("crash.fcw");
                        let ckpt = Checkpoint {
                            meta: serde_json::to_string(&model_cfg).unwrap_or_default(),
                            entries: net.state_entries(),
                        };
                        let _ = ckpt.write(&crash);
                        eprintln!("state dumped to {}", crash.display());
                    }
                    return Err(e);
                }
            };

            let meta = serde_json::json!({
                "model": model_cfg,
                "train": train_cfg,
                "best_iteration": log_data.best_iteration,
                "best_val_rmse": log_data.best_val_rmse,
                "stop_reason": format!("{:?}", log_data.stop_reason),
                "boundary_slot": split.boundary_slot,
            });
            let mut entries = net.state_entries();
            entries.extend(adam_entries(&adam));
            let ckpt = Checkpoint {
                meta: meta.to_string(),
                entries,
            };
            ckpt.write(&out)?;
            let log_path = log.unwrap_or_else(|| {
                out.parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join("train_log.csv")
            });
            log_data.write_csv(&log_path)?;

            let mut inputs: Vec<&Path> = vec![&panel];
            if let Some(c) = &config {
                inputs.push(c);
            }
            if let Some(c) = &model_config {
                inputs.push(c);
            }
            write_manifest(
                argv,
                &[train_cfg.rng_seed],
                &inputs,
                &[&out, &log_path],
                started,
            )?;
            match log_data.best_val_rmse {
                Some(v) => println!(
                    "done: best validation rmse {v:.6} at iteration {} ({:?}); wrote {}",
                    log_data.best_iteration, log_data.stop_reason, out.display()
                ),
                None => println!(
                    "done after {} iterations (no validation split); wrote {}",
                    log_data.best_iteration,
                    out.display()
                ),
            }
            Ok(())
        }
        Command::Evaluate {
            panel,
            ckpt,
            mode,
            out,
            svg,
            regimes,
            train_fraction,
            stride,
            ffs,
            threads,
        } => {
            let p = data_io::read_panel(&panel)?;
            let checkpoint = Checkpoint::read(&ckpt)?;
            let meta: serde_json::Value = serde_json::from_str(&checkpoint.meta)
                .map_err(|e| Error::format(format!("checkpoint meta: {e}")))?;
            let model_cfg: ModelConfig = serde_json::from_value(
                meta.get("model").cloned().unwrap_or(meta.clone()),
            )
            .map_err(|e| Error::format(format!("checkpoint model config: {e}")))?;
            if let Some(m) = &mode {
                if m.parse::<InputMode>()? != model_cfg.mode {
                    return Err(Error::config(format!(
                        "--mode {m} does not match the checkpoint's {} input",
                        model_cfg.mode.name()
                    )));
                }
            }
            let mut model = model_cfg.build(&mut substream(0, "init"))?;
            model.load_state(&checkpoint)?;

            let free_flow: Vec<f64> = match &ffs {
                Some(path) => data_io::read_ffs_csv(path)?,
                None => p.free_flow().to_vec(),
            };
            let split = chronological_split(&p, train_fraction)?;
            let spec = model_cfg.sample_spec();
            let mut anchors =
                enumerate_samples_in(&p, &spec, stride, split.boundary_slot, p.n_slots());
            if matches!(model.net, ModelNet::Lstm(_)) {
                anchors.retain(|&(e, s)| {
                    build_lstm_sample(&p, &spec, e, s, model_cfg.t_steps).is_ok()
                });
            }
            println!(
                "evaluating {} test anchors from slot {} on",
                anchors.len(),
                split.boundary_slot
            );
            let report = evaluate_model(
                &model,
                &p,
                &spec,
                &anchors,
                Some(&free_flow),
                regimes,
                threads,
            )?;
            report.write_csv(&out)?;
            let mut outputs: Vec<&Path> = vec![&out];
            if let Some(svg_path) = &svg {
                write_svg(&report, svg_path)?;
                outputs.push(svg_path);
            }
            let mut inputs: Vec<&Path> = vec![&panel, &ckpt];
            if let Some(f) = &ffs {
                inputs.push(f);
            }
            write_manifest(argv, &[], &inputs, &outputs, started)?;
            for curve in &report.curves {
                let q2 = curve
                    .agg_q2
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "undefined".to_string());
                println!(
                    "[{}] rmse {:.4} kph | bench {:.4} kph | q2 {} | mape {:.3}% | n={}",
                    curve.regime,
                    curve.agg_rmse_kph,
                    curve.agg_rmse_bench_kph,
                    q2,
                    curve.agg_mape,
                    curve.n_cases
                );
            }
            Ok(())
        }
        Command::CountParams { config } => {
            let model_cfg: ModelConfig = read_json_file(&config)?;
            let model = model_cfg.build(&mut substream(0, "init"))?;
            let count = count_parameters(&model);
            println!(
                "{} ({} input mode)",
                model_cfg.arch.name(),
                model_cfg.mode.name()
            );
            for (label, n) in &count.rows {
                println!("{label:<28} {n:>10}");
            }
            println!("{:<28} {:>10}", "total weight parameters", count.total_weights);
            println!("{:<28} {:>10}", "batch-norm parameters", count.bn_params);
            Ok(())
        }
        Command::GradientCheck {
            model,
            tolerance,
            seed,
        } => {
            let arch: Arch = model.parse()?;
            let (mut toy, batch) = toy_model_and_batch(arch, seed)?;
            let report = gradient_check(&mut toy, &batch, tolerance)?;
            let verdict = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "{}: max rel err {:.3e} (worst {}, {} elements, fd step {:.0e}) {} {:.0e}: {}",
                arch.name(),
                report.max_rel_err,
                report.worst_param,
                report.n_elements,
                FD_STEP,
                if report.passed() { "<" } else { ">=" },
                tolerance,
                verdict
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Error::shape(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_err
                )))
            }
        }
        Command::Repro { manifest } => {
            let text = std::fs::read_to_string(&manifest)?;
            let recorded: RunManifest = serde_json::from_str(&text)
                .map_err(|e| Error::format(format!("{}: {e}", manifest.display())))?;
            println!("re-running: {}", recorded.argv.join(" "));
            let cli = Cli::try_parse_from(&recorded.argv)
                .map_err(|e| Error::config(format!("recorded argv does not parse: {e}")))?;
            run(cli.command, &recorded.argv)?;
            let mut mismatches = 0;
            for (path, digest) in &recorded.outputs {
                let now = sha256_file(Path::new(path))?;
                let ok = &now == digest;
                println!(
                    "{}: {}",
                    path,
                    if ok { "digest match" } else { "DIGEST MISMATCH" }
                );
                if !ok {
                    mismatches += 1;
                }
            }
            if mismatches > 0 {
                Err(Error::validation(format!(
                    "{mismatches} output(s) differ from the recorded digests"
                )))
            } else {
                Ok(())
            }
        }
    }
}

fn build_train_set(
    train_panel: &SpeedPanel,
    spec: &SampleSpec,
    stride: usize,
    arch: Arch,
    t_steps: usize,
) -> Result<TrainSet> {
    let anchors = enumerate_samples(train_panel, spec, stride);
    if arch == Arch::Lstm {
        let samples: Vec<_> = anchors
            .iter()
            .filter_map(|&(e, s)| build_lstm_sample(train_panel, spec, e, s, t_steps).ok())
            .collect();
        Ok(TrainSet::Seq(samples))
    } else {
        let samples: Vec<_> = anchors
            .iter()
            .map(|&(e, s)| build_sample(train_panel, spec, e, s).expect("enumerated anchor"))
            .collect();
        Ok(TrainSet::Static(samples))
    }
}

/// Desk-scale models for the gradient-check command; finite differences need
/// parameter counts in the hundreds.
pub fn toy_model_and_batch(arch: Arch, seed: u64) -> Result<(Model, CheckBatch)> {
    let mut init = substream(seed, "gradcheck-init");
    let mut data = substream(seed, "gradcheck-data");
    let batch = 5;
    let mut rand_tensor = |shape: &[usize], lo: f64, hi: f64| {
        let len: usize = shape.iter().product();
        let v: Vec<f64> = (0..len).map(|_| data.gen_range(lo..hi)).collect();
        Tensor::from_vec(shape, v).expect("toy tensor")
    };
    match arch {
        Arch::Fnn1 | Arch::Fnn3 => {
            let n_hidden = if arch == Arch::Fnn1 { 1 } else { 3 };
            let net = build_fnn(
                &FnnConfig {
                    input_size: 6,
                    hidden_size: 5,
                    n_hidden,
                    output_size: 3,
                },
                Activation::LeakyRelu,
                0.01,
                &mut init,
            );
            let model = Model {
                config: ModelConfig::new(arch, InputMode::Reduced),
                net: ModelNet::Feedforward(net),
            };
            let input = rand_tensor(&[batch, 6], 0.1, 0.9);
            let target = rand_tensor(&[batch, 3], 0.2, 0.8);
            Ok((model, CheckBatch::Static { input, target }))
        }
        Arch::Vgg => {
            let plan = VggPlan {
                blocks: vec![VggBlock {
                    channels: 3,
                    convs: 2,
                }],
                fc: vec![6],
                pool_stride: 2,
            };
            let net = build_vgg(&plan, [2, 6, 6], 4, Activation::LeakyRelu, 0.01, &mut init)?;
            let model = Model {
                config: ModelConfig::new(arch, InputMode::Full),
                net: ModelNet::Feedforward(net),
            };
            let input = rand_tensor(&[batch, 2, 6, 6], 0.1, 0.9);
            let target = rand_tensor(&[batch, 4], 0.2, 0.8);
            Ok((model, CheckBatch::Static { input, target }))
        }
        Arch::Lstm => {
            let t_steps = 2;
            let net = build_lstm(
                &LstmConfig {
                    input_size: 3,
                    hidden_size: 4,
                    t_steps,
                    output_size: 2,
                },
                1e-2,
                &mut init,
            );
            let model = Model {
                config: ModelConfig::new(arch, InputMode::Reduced),
                net: ModelNet::Lstm(net),
            };
            let steps = (0..t_steps)
                .map(|_| rand_tensor(&[batch, 3], 0.1, 0.9))
                .collect();
            let targets = (0..t_steps)
                .map(|_| rand_tensor(&[batch, 2], 0.2, 0.8))
                .collect();
            Ok((model, CheckBatch::Seq { steps, targets }))
        }
    }
}
