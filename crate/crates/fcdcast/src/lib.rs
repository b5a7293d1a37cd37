//! Road-speed forecasting toolkit.
//!
//! The pipeline runs in five stages, each usable as a library module or
//! through the `fcdcast` command line:
//!
//! 1. [`data`] — ingest or synthesize per-edge speed panels, normalized by
//!    free-flow speed, with night hours masked out.
//! 2. [`featurize`] — cut panels into supervised samples: a wide multi-edge
//!    "full" input, or a compact single-edge "reduced" input built from
//!    quarter-hour averages of the previous week.
//! 3. [`models`] — feedforward, convolutional, and LSTM regressors assembled
//!    from the layer kit in [`nn`].
//! 4. [`train`] — mini-batch gradient descent with Adam, learning-rate decay,
//!    elastic-net regularization, and early stopping.
//! 5. [`eval`] — RMSE / MAPE / Q² against the real-time propagation benchmark
//!    (predicting the last observed speed for every future slot), with
//!    per-horizon curves and speed-regime breakdowns.
//!
//! All floating-point state is `f64` and every source of randomness is seeded,
//! so identical commands produce byte-identical artifacts.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod models;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
