//! Speed panels: ingestion, normalization, night masking, chronological
//! splitting, and a seeded synthetic generator for desk-scale experiments.
//!
//! A panel is a dense `[edges x slots]` matrix of speeds normalized by each
//! edge's free-flow speed, together with a validity mask. Slots are 3-minute
//! intervals, 480 per day. Missing observations and masked night hours stay
//! on the timeline as invalid entries — day-offset arithmetic in the
//! featurizer only works on the uncompressed timeline — and are never read.

pub mod io;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::substream;

/// 3-minute slots in a day.
pub const SLOTS_PER_DAY: usize = 480;

/// Free-flow speed assumed when none is supplied (urban ring road scale).
pub const DEFAULT_FREE_FLOW_KPH: f64 = 65.0;

/// One raw speed observation on an oriented edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObservation {
    pub edge_id: usize,
    pub slot: usize,
    pub speed_kph: f64,
}

/// Normalized speed matrix over `[edges x slots]` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPanel {
    values: Vec<f64>,
    valid: Vec<bool>,
    n_edges: usize,
    n_slots: usize,
    slots_per_day: usize,
    free_flow: Vec<f64>,
}

impl SpeedPanel {
    /// Assemble a panel from parts. `values` and `valid` are edge-major.
    pub fn from_parts(
        values: Vec<f64>,
        valid: Vec<bool>,
        n_edges: usize,
        n_slots: usize,
        slots_per_day: usize,
        free_flow: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n_edges * n_slots || valid.len() != values.len() {
            return Err(Error::shape(format!(
                "panel buffers do not match {n_edges} x {n_slots}"
            )));
        }
        if slots_per_day == 0 {
            return Err(Error::validation("slots_per_day must be positive"));
        }
        if free_flow.len() != n_edges {
            return Err(Error::shape(format!(
                "free-flow vector has {} entries for {n_edges} edges",
                free_flow.len()
            )));
        }
        for (l, s, v) in values.iter().enumerate().filter_map(|(i, &v)| {
            let l = i / n_slots;
            let s = i % n_slots;
            valid[i].then_some((l, s, v))
        }) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "invalid normalized speed {v} at edge {l}, slot {s}"
                )));
            }
        }
        Ok(SpeedPanel {
            values,
            valid,
            n_edges,
            n_slots,
            slots_per_day,
            free_flow,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn slots_per_day(&self) -> usize {
        self.slots_per_day
    }

    pub fn n_days(&self) -> usize {
        self.n_slots / self.slots_per_day
    }

    pub fn free_flow(&self) -> &[f64] {
        &self.free_flow
    }

    #[inline]
    fn idx(&self, edge: usize, slot: usize) -> usize {
        debug_assert!(edge < self.n_edges && slot < self.n_slots);
        edge * self.n_slots + slot
    }

    #[inline]
    pub fn value(&self, edge: usize, slot: usize) -> f64 {
        self.values[self.idx(edge, slot)]
    }

    #[inline]
    pub fn is_valid(&self, edge: usize, slot: usize) -> bool {
        self.valid[self.idx(edge, slot)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Poke a single cell; used by tests and by the ingest path.
    pub fn set(&mut self, edge: usize, slot: usize, value: f64, valid: bool) {
        let idx = self.idx(edge, slot);
        self.values[idx] = value;
        self.valid[idx] = valid;
    }

    /// Hour of day (0-23) of a slot on the raw timeline.
    pub fn hour_of_slot(&self, slot: usize) -> usize {
        (slot % self.slots_per_day) * 24 / self.slots_per_day
    }

    /// Copy of the panel restricted to `slots` (contiguous), keeping the
    /// free-flow vector and day length.
    pub fn slice_slots(&self, start: usize, end: usize) -> SpeedPanel {
        assert!(start <= end && end <= self.n_slots);
        let width = end - start;
        let mut values = Vec::with_capacity(self.n_edges * width);
        let mut valid = Vec::with_capacity(self.n_edges * width);
        for edge in 0..self.n_edges {
            let base = edge * self.n_slots;
            values.extend_from_slice(&self.values[base + start..base + end]);
            valid.extend_from_slice(&self.valid[base + start..base + end]);
        }
        SpeedPanel {
            values,
            valid,
            n_edges: self.n_edges,
            n_slots: width,
            slots_per_day: self.slots_per_day,
            free_flow: self.free_flow.clone(),
        }
    }
}

/// Chronologically disjoint train/test views of one panel.
#[derive(Debug, Clone)]
pub struct PanelSplit {
    pub train: SpeedPanel,
    pub test: SpeedPanel,
    /// First slot of the test period on the original timeline. Test-period
    /// anchors are enumerated on the full panel from this slot so their
    /// inputs can still read pre-boundary history; their targets never do.
    pub boundary_slot: usize,
}

/// Settings for the synthetic seasonal generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub n_edges: usize,
    pub n_days: usize,
    /// Depth of the commuting dips, in fractions of free flow.
    pub congestion_amplitude: f64,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_edges == 0 {
            return Err(Error::validation("n_edges must be at least 1"));
        }
        if self.n_days < 9 {
            return Err(Error::validation(
                "n_days must be at least 9 (a full week of history plus prediction room)",
            ));
        }
        if !(0.0..=1.0).contains(&self.congestion_amplitude) {
            return Err(Error::validation("congestion_amplitude must be in [0, 1]"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::validation("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Build a normalized panel from raw observations and per-edge free-flow
/// speeds. The slot count is rounded up to whole days; unobserved slots are
/// invalid.
pub fn load_panel(
    observations: impl IntoIterator<Item = RawObservation>,
    free_flow: &[f64],
) -> Result<SpeedPanel> {
    let n_edges = free_flow.len();
    if n_edges == 0 {
        return Err(Error::validation("free-flow vector is empty"));
    }
    for (edge, &ffs) in free_flow.iter().enumerate() {
        if !(ffs.is_finite() && ffs > 0.0) {
            return Err(Error::validation(format!(
                "free-flow speed for edge {edge} must be positive, got {ffs}"
            )));
        }
    }
    let obs: Vec<RawObservation> = observations.into_iter().collect();
    let mut max_slot = 0usize;
    for o in &obs {
        if o.edge_id >= n_edges {
            return Err(Error::structure(format!(
                "edge_id {} out of range (panel has {n_edges} edges)",
                o.edge_id
            )));
        }
        if !(o.speed_kph.is_finite() && o.speed_kph >= 0.0) {
            return Err(Error::validation(format!(
                "speed {} kph at edge {}, slot {} must be non-negative",
                o.speed_kph, o.edge_id, o.slot
            )));
        }
        max_slot = max_slot.max(o.slot);
    }
    let n_slots = ((max_slot / SLOTS_PER_DAY) + 1) * SLOTS_PER_DAY;
    let mut panel = SpeedPanel {
        values: vec![0.0; n_edges * n_slots],
        valid: vec![false; n_edges * n_slots],
        n_edges,
        n_slots,
        slots_per_day: SLOTS_PER_DAY,
        free_flow: free_flow.to_vec(),
    };
    for o in &obs {
        panel.set(o.edge_id, o.slot, o.speed_kph / free_flow[o.edge_id], true);
    }
    Ok(panel)
}

/// Mark slots whose time of day falls in `[start_hour, end_hour)` (wrapping
/// midnight) as invalid. Values are untouched; the raw timeline keeps its
/// day alignment. Idempotent.
pub fn mask_night_hours(mut panel: SpeedPanel, start_hour: usize, end_hour: usize) -> SpeedPanel {
    assert!(start_hour < 24 && end_hour < 24, "hours must be in 0..24");
    let in_night = |hour: usize| -> bool {
        if start_hour <= end_hour {
            (start_hour..end_hour).contains(&hour)
        } else {
            hour >= start_hour || hour < end_hour
        }
    };
    let nightly: Vec<bool> = (0..panel.n_slots)
        .map(|s| in_night(panel.hour_of_slot(s)))
        .collect();
    for edge in 0..panel.n_edges {
        for slot in 0..panel.n_slots {
            if nightly[slot] {
                let idx = panel.idx(edge, slot);
                panel.valid[idx] = false;
            }
        }
    }
    panel
}

/// Split on the day boundary nearest to `train_fraction * n_days`. Training
/// slots are `[0, boundary)`, test slots `[boundary, end)`.
pub fn chronological_split(panel: &SpeedPanel, train_fraction: f64) -> Result<PanelSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let days = panel.n_days();
    if days < 2 {
        return Err(Error::validation(format!(
            "panel has {days} full day(s); need at least 2 to split"
        )));
    }
    let boundary_day = ((train_fraction * days as f64).round() as usize).clamp(1, days - 1);
    let boundary_slot = boundary_day * panel.slots_per_day();
    Ok(PanelSplit {
        train: panel.slice_slots(0, boundary_slot),
        test: panel.slice_slots(boundary_slot, panel.n_slots()),
        boundary_slot,
    })
}

/// Deterministic seasonal traffic synthesis.
///
/// Each edge runs at free flow overnight and dips twice on weekdays: a
/// morning rush around 08:30 and a slightly shallower evening rush around
/// 18:00, both Gaussian in time. Dip depth and timing vary smoothly around
/// the ring (the edge axis is cyclic), every 7th day is a quiet day with
/// much weaker dips, and white noise is added on top. Values are clipped to
/// [0.05, 1.2].
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SpeedPanel> {
    cfg.validate()?;
    let mut rng = substream(cfg.rng_seed, "data");
    let n_edges = cfg.n_edges;
    let n_slots = cfg.n_days * SLOTS_PER_DAY;

    // Ring-periodic modulation of dip depth and rush-hour timing.
    let phase_depth: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_depth2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_shift: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let depth_mod: Vec<f64> = (0..n_edges)
        .map(|l| {
            let a = std::f64::consts::TAU * l as f64 / n_edges as f64;
            1.0 + 0.08 * (a + phase_depth).sin() + 0.06 * (2.0 * a + phase_depth2).sin()
        })
        .collect();
    let time_shift: Vec<f64> = (0..n_edges)
        .map(|l| {
            let a = std::f64::consts::TAU * l as f64 / n_edges as f64;
            6.0 * (a + phase_shift).sin()
        })
        .collect();

    const MORNING_CENTER: f64 = 170.0; // 08:30
    const MORNING_SIGMA: f64 = 30.0; // ~1.5 h
    const EVENING_CENTER: f64 = 360.0; // 18:00
    const EVENING_SIGMA: f64 = 35.0;
    const EVENING_DEPTH: f64 = 0.9;
    const QUIET_DAY_FACTOR: f64 = 0.35;

    let mut values = vec![0.0; n_edges * n_slots];
    for edge in 0..n_edges {
        for slot in 0..n_slots {
            let day = slot / SLOTS_PER_DAY;
            let tod = (slot % SLOTS_PER_DAY) as f64;
            let weekly = if day % 7 == 6 { QUIET_DAY_FACTOR } else { 1.0 };
            let cm = MORNING_CENTER + time_shift[edge];
            let ce = EVENING_CENTER + time_shift[edge];
            let dip = (-((tod - cm) / MORNING_SIGMA).powi(2) / 2.0).exp()
                + EVENING_DEPTH * (-((tod - ce) / EVENING_SIGMA).powi(2) / 2.0).exp();
            let noise: f64 = rng.sample(StandardNormal);
            let v = 1.0 - cfg.congestion_amplitude * weekly * depth_mod[edge] * dip
                + cfg.noise_std * noise;
            values[edge * n_slots + slot] = v.clamp(0.05, 1.2);
        }
    }
    SpeedPanel::from_parts(
        values,
        vec![true; n_edges * n_slots],
        n_edges,
        n_slots,
        SLOTS_PER_DAY,
        vec![DEFAULT_FREE_FLOW_KPH; n_edges],
    )
}
