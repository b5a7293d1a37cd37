//! Cutting panels into supervised samples.
//!
//! A sample is anchored at an edge `N` and a slot `T`. Both input schemes
//! look back `b = 1..=B` slots on the current day and attach windows around
//! the same time of day on each of the previous `D` days (day offset
//! `delta*480` slots):
//!
//! * **Full** — `N0` contiguous edges (the edge axis wraps around the ring),
//!   every 3-minute slot in the past-day windows. Flat layout: the
//!   current-day block first, edge-major with `b` ascending (stepping back
//!   in time), then one block per past day `delta = 1..=D`, edge-major with
//!   the window offset `p` ascending. Defaults give 32*(32 + 33*7) wait —
//!   see [`FullInputSpec::input_len`]: `n0*(bf + (p1f+p2f+1)*df)` = 8192
//!   inputs and `n0*hf` = 640 targets.
//! * **Reduced** — a single edge; past-day windows are averaged over `m`
//!   consecutive slots, so each past day contributes a handful of
//!   quarter-hour means. Defaults give `4 + 4*7` = 32 inputs, 20 targets.
//!
//! Targets are the `h = 0..horizon` slots starting at the anchor itself.
//! Every slot a sample touches must be valid; otherwise the anchor is
//! reported unavailable rather than fabricating data.

pub mod io;

use crate::data::SpeedPanel;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Lookback slots used for the speed-regime variation statistic.
pub const REGIME_LOOKBACK: usize = 4;

/// Wide multi-edge input scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FullInputSpec {
    /// Contiguous edges per sample.
    pub n0: usize,
    /// Current-day lookback slots.
    pub bf: usize,
    /// Past days attached to the sample.
    pub df: usize,
    /// Past-day window slots before the anchor time.
    pub p1f: usize,
    /// Past-day window slots after the anchor time.
    pub p2f: usize,
    /// Prediction horizon in slots.
    pub hf: usize,
}

impl Default for FullInputSpec {
    fn default() -> Self {
        FullInputSpec {
            n0: 32,
            bf: 32,
            df: 7,
            p1f: 15,
            p2f: 16,
            hf: 20,
        }
    }
}

impl FullInputSpec {
    pub fn window_width(&self) -> usize {
        self.p1f + self.p2f + 1
    }

    pub fn input_len(&self) -> usize {
        self.n0 * (self.bf + self.window_width() * self.df)
    }

    pub fn target_len(&self) -> usize {
        self.n0 * self.hf
    }
}

/// Compact single-edge input scheme with averaged past-day windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ReducedInputSpec {
    /// Current-day lookback slots.
    pub br: usize,
    /// Past days attached to the sample.
    pub dr: usize,
    /// Averaged-window units before the anchor time.
    pub p1r: usize,
    /// Averaged-window units after the anchor time.
    pub p2r: usize,
    /// Averaging width in slots.
    pub m: usize,
    /// Prediction horizon in slots.
    pub hr: usize,
}

impl Default for ReducedInputSpec {
    fn default() -> Self {
        ReducedInputSpec {
            br: 4,
            dr: 7,
            p1r: 0,
            p2r: 3,
            m: 5,
            hr: 20,
        }
    }
}

impl ReducedInputSpec {
    pub fn window_width(&self) -> usize {
        self.p1r + self.p2r + 1
    }

    pub fn input_len(&self) -> usize {
        self.br + self.window_width() * self.dr
    }

    pub fn target_len(&self) -> usize {
        self.hr
    }
}

/// Either input scheme, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSpec {
    Full(FullInputSpec),
    Reduced(ReducedInputSpec),
}

impl SampleSpec {
    pub fn full() -> Self {
        SampleSpec::Full(FullInputSpec::default())
    }

    pub fn reduced() -> Self {
        SampleSpec::Reduced(ReducedInputSpec::default())
    }

    pub fn input_len(&self) -> usize {
        match self {
            SampleSpec::Full(s) => s.input_len(),
            SampleSpec::Reduced(s) => s.input_len(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            SampleSpec::Full(s) => s.hf,
            SampleSpec::Reduced(s) => s.hr,
        }
    }

    /// Edges covered by the targets: `n0` for full, 1 for reduced.
    pub fn n_edges_out(&self) -> usize {
        match self {
            SampleSpec::Full(s) => s.n0,
            SampleSpec::Reduced(_) => 1,
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            SampleSpec::Full(s) => s.bf,
            SampleSpec::Reduced(s) => s.br,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            SampleSpec::Full(_) => "full",
            SampleSpec::Reduced(_) => "reduced",
        }
    }
}

/// A supervised instance. `input` follows the scheme's flat layout; `target`
/// is `[n_edges_out x horizon]` row-major (edge-major, horizon ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub anchor_edge: usize,
    pub anchor_slot: usize,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub n_edges_out: usize,
    pub horizon: usize,
    /// Anchor-edge speeds just before the anchor, for regime statistics.
    pub pre_anchor: Vec<f64>,
}

/// Why an anchor cannot produce a sample. Not an error: enumeration skips
/// such anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unavailable {
    /// Some required slot falls off the panel.
    OutOfRange,
    /// Some required slot is masked invalid (night hours, missing data).
    InvalidSlot,
}

type Avail<T> = std::result::Result<T, Unavailable>;

/// Fetch a panel value with validity checking. `slot` is signed so callers
/// can do raw offset arithmetic.
fn fetch(panel: &SpeedPanel, edge: usize, slot: i64) -> Avail<f64> {
    if slot < 0 || slot as usize >= panel.n_slots() {
        return Err(Unavailable::OutOfRange);
    }
    let slot = slot as usize;
    if !panel.is_valid(edge, slot) {
        return Err(Unavailable::InvalidSlot);
    }
    Ok(panel.value(edge, slot))
}

fn pre_anchor_window(
    panel: &SpeedPanel,
    edge: usize,
    slot: i64,
    lookback: usize,
) -> Avail<Vec<f64>> {
    let k = lookback.min(REGIME_LOOKBACK);
    let mut out = Vec::with_capacity(k);
    for b in (1..=k).rev() {
        out.push(fetch(panel, edge, slot - b as i64)?);
    }
    Ok(out)
}

/// Build one full-input sample anchored at `(edge, slot)`.
pub fn build_full_sample(
    panel: &SpeedPanel,
    spec: &FullInputSpec,
    edge: usize,
    slot: usize,
) -> Avail<Sample> {
    let l_total = panel.n_edges();
    let day = panel.slots_per_day() as i64;
    let t = slot as i64;
    let mut input = Vec::with_capacity(spec.input_len());

    // Current-day block: edge-major, b ascending (stepping back in time).
    for l in 0..spec.n0 {
        let e = (edge + l) % l_total;
        for b in 1..=spec.bf as i64 {
            input.push(fetch(panel, e, t - b)?);
        }
    }
    // Past days: one block per day offset, edge-major, window offset ascending.
    for delta in 1..=spec.df as i64 {
        for l in 0..spec.n0 {
            let e = (edge + l) % l_total;
            for p in -(spec.p1f as i64)..=(spec.p2f as i64) {
                input.push(fetch(panel, e, t - delta * day + p)?);
            }
        }
    }

    let mut target = Vec::with_capacity(spec.target_len());
    for l in 0..spec.n0 {
        let e = (edge + l) % l_total;
        for h in 0..spec.hf as i64 {
            target.push(fetch(panel, e, t + h)?);
        }
    }

    let pre_anchor = pre_anchor_window(panel, edge, t, spec.bf)?;
    Ok(Sample {
        anchor_edge: edge,
        anchor_slot: slot,
        input,
        target,
        n_edges_out: spec.n0,
        horizon: spec.hf,
        pre_anchor,
    })
}

/// Mean of `m` consecutive slots starting at `start`.
fn window_average(panel: &SpeedPanel, edge: usize, start: i64, m: usize) -> Avail<f64> {
    let mut acc = 0.0;
    for i in 0..m as i64 {
        acc += fetch(panel, edge, start + i)?;
    }
    Ok(acc / m as f64)
}

/// Build one reduced-input sample anchored at `(edge, slot)`.
///
/// The past-day entry labelled `p` averages the `m` slots starting at
/// `T - delta*480 + m*p`, so with defaults the seven previous days each
/// contribute the four quarter-hour means covering the hour being predicted.
pub fn build_reduced_sample(
    panel: &SpeedPanel,
    spec: &ReducedInputSpec,
    edge: usize,
    slot: usize,
) -> Avail<Sample> {
    let day = panel.slots_per_day() as i64;
    let t = slot as i64;
    let mut input = Vec::with_capacity(spec.input_len());
    for b in 1..=spec.br as i64 {
        input.push(fetch(panel, edge, t - b)?);
    }
    for delta in 1..=spec.dr as i64 {
        for p in -(spec.p1r as i64)..=(spec.p2r as i64) {
            let start = t - delta * day + spec.m as i64 * p;
            input.push(window_average(panel, edge, start, spec.m)?);
        }
    }

    let mut target = Vec::with_capacity(spec.hr);
    for h in 0..spec.hr as i64 {
        target.push(fetch(panel, edge, t + h)?);
    }

    let pre_anchor = pre_anchor_window(panel, edge, t, spec.br)?;
    Ok(Sample {
        anchor_edge: edge,
        anchor_slot: slot,
        input,
        target,
        n_edges_out: 1,
        horizon: spec.hr,
        pre_anchor,
    })
}

/// Build a sample under either scheme.
pub fn build_sample(
    panel: &SpeedPanel,
    spec: &SampleSpec,
    edge: usize,
    slot: usize,
) -> Avail<Sample> {
    match spec {
        SampleSpec::Full(s) => build_full_sample(panel, s, edge, slot),
        SampleSpec::Reduced(s) => build_reduced_sample(panel, s, edge, slot),
    }
}

/// All anchors whose sample is fully valid, edge-major, slots stepping by
/// `stride` from the start of the panel.
pub fn enumerate_samples(panel: &SpeedPanel, spec: &SampleSpec, stride: usize) -> Vec<(usize, usize)> {
    enumerate_samples_in(panel, spec, stride, 0, panel.n_slots())
}

/// Anchors restricted to `slot_start <= anchor < slot_end`, stepping by
/// `stride` from `slot_start`. Inputs may still read earlier history; only
/// the anchor (and with it every target) is confined to the range.
pub fn enumerate_samples_in(
    panel: &SpeedPanel,
    spec: &SampleSpec,
    stride: usize,
    slot_start: usize,
    slot_end: usize,
) -> Vec<(usize, usize)> {
    assert!(stride >= 1, "stride must be at least 1");
    let mut anchors = Vec::new();
    for edge in 0..panel.n_edges() {
        let mut slot = slot_start;
        while slot < slot_end.min(panel.n_slots()) {
            if build_sample(panel, spec, edge, slot).is_ok() {
                anchors.push((edge, slot));
            }
            slot += stride;
        }
    }
    anchors
}

/// Reshape a full-input sample into the `[df+1, n0, bf]` feature-map tensor.
/// Channel 0 is the current day ordered oldest to newest along the width;
/// channels `1..=df` are the past-day windows in natural time order.
/// Requires a square layout, `bf == p1f + p2f + 1`.
pub fn to_cnn_tensor(sample: &Sample, spec: &FullInputSpec) -> Result<Tensor> {
    let w = spec.window_width();
    if spec.bf != w {
        return Err(Error::shape(format!(
            "feature-map layout needs bf == p1f+p2f+1, got {} vs {w}",
            spec.bf
        )));
    }
    if sample.input.len() != spec.input_len() {
        return Err(Error::shape(format!(
            "sample carries {} inputs, spec expects {}",
            sample.input.len(),
            spec.input_len()
        )));
    }
    let mut t = Tensor::zeros(&[spec.df + 1, spec.n0, w]);
    // 3-d indexing by hand: ((d * n0) + l) * w + col.
    let at = |d: usize, l: usize, col: usize| (d * spec.n0 + l) * w + col;
    for l in 0..spec.n0 {
        for col in 0..w {
            // Column 0 is the oldest lookback slot, so b = bf - col.
            let b = spec.bf - col;
            t.data_mut()[at(0, l, col)] = sample.input[l * spec.bf + (b - 1)];
        }
    }
    let base = spec.n0 * spec.bf;
    for d in 1..=spec.df {
        for l in 0..spec.n0 {
            for col in 0..w {
                t.data_mut()[at(d, l, col)] =
                    sample.input[base + (d - 1) * spec.n0 * w + l * w + col];
            }
        }
    }
    Ok(t)
}

/// One entry of a step input that refers to a slot at or after the anchor.
/// During training it holds the ground-truth value (teacher forcing); at
/// inference the model's own prediction from `source_step` replaces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmPatch {
    pub tau: usize,
    pub input_index: usize,
    pub source_step: usize,
    pub source_output: usize,
}

/// A recurrent sample: `t_steps` step inputs, per-step targets, and the
/// patch list marking which input entries are future values.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmSample {
    pub anchor_edge: usize,
    pub anchor_slot: usize,
    /// `[t_steps][input_len]`, teacher-forced.
    pub steps: Vec<Vec<f64>>,
    /// `[t_steps][n_edges_out]`.
    pub targets: Vec<Vec<f64>>,
    pub patches: Vec<LstmPatch>,
    pub n_edges_out: usize,
    pub pre_anchor: Vec<f64>,
}

impl LstmSample {
    pub fn t_steps(&self) -> usize {
        self.steps.len()
    }

    /// Targets flattened to the `[n_edges_out x horizon]` layout used by the
    /// static models, for shared evaluation code.
    pub fn flat_targets(&self) -> Vec<f64> {
        let t_steps = self.t_steps();
        let mut out = vec![0.0; self.n_edges_out * t_steps];
        for (tau, step) in self.targets.iter().enumerate() {
            for (l, &v) in step.iter().enumerate() {
                out[l * t_steps + tau] = v;
            }
        }
        out
    }
}

/// Build the step-`tau` input of a recurrent sample. Entries at slots at or
/// after the anchor are teacher-forced from the panel and recorded as
/// patches.
fn lstm_step_input(
    panel: &SpeedPanel,
    spec: &SampleSpec,
    edge: usize,
    slot: i64,
    tau: usize,
    patches: &mut Vec<LstmPatch>,
) -> Avail<Vec<f64>> {
    let l_total = panel.n_edges();
    let day = panel.slots_per_day() as i64;
    let t = slot + tau as i64;
    let mut input = Vec::with_capacity(spec.input_len());
    match spec {
        SampleSpec::Full(s) => {
            for l in 0..s.n0 {
                let e = (edge + l) % l_total;
                for b in 1..=s.bf as i64 {
                    let target_slot = t - b;
                    if target_slot >= slot {
                        patches.push(LstmPatch {
                            tau,
                            input_index: input.len(),
                            source_step: (target_slot - slot) as usize,
                            source_output: l,
                        });
                    }
                    input.push(fetch(panel, e, target_slot)?);
                }
            }
            for delta in 1..=s.df as i64 {
                for l in 0..s.n0 {
                    let e = (edge + l) % l_total;
                    for p in -(s.p1f as i64)..=(s.p2f as i64) {
                        input.push(fetch(panel, e, t - delta * day + p)?);
                    }
                }
            }
        }
        SampleSpec::Reduced(s) => {
            for b in 1..=s.br as i64 {
                let target_slot = t - b;
                if target_slot >= slot {
                    patches.push(LstmPatch {
                        tau,
                        input_index: input.len(),
                        source_step: (target_slot - slot) as usize,
                        source_output: 0,
                    });
                }
                input.push(fetch(panel, edge, target_slot)?);
            }
            for delta in 1..=s.dr as i64 {
                for p in -(s.p1r as i64)..=(s.p2r as i64) {
                    let start = t - delta * day + s.m as i64 * p;
                    input.push(window_average(panel, edge, start, s.m)?);
                }
            }
        }
    }
    Ok(input)
}

/// Build a recurrent sample of `t_steps` steps anchored at `(edge, slot)`.
/// The step-0 input equals the static input of the same anchor.
pub fn build_lstm_sample(
    panel: &SpeedPanel,
    spec: &SampleSpec,
    edge: usize,
    slot: usize,
    t_steps: usize,
) -> Avail<LstmSample> {
    let l_total = panel.n_edges();
    let t = slot as i64;
    let n_out = spec.n_edges_out();
    let mut patches = Vec::new();
    let mut steps = Vec::with_capacity(t_steps);
    let mut targets = Vec::with_capacity(t_steps);
    for tau in 0..t_steps {
        steps.push(lstm_step_input(panel, spec, edge, t, tau, &mut patches)?);
        let mut step_target = Vec::with_capacity(n_out);
        for l in 0..n_out {
            let e = (edge + l) % l_total;
            step_target.push(fetch(panel, e, t + tau as i64)?);
        }
        targets.push(step_target);
    }
    let pre_anchor = pre_anchor_window(panel, edge, t, spec.lookback())?;
    Ok(LstmSample {
        anchor_edge: edge,
        anchor_slot: slot,
        steps,
        targets,
        patches,
        n_edges_out: n_out,
        pre_anchor,
    })
}
