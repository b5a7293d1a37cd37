//! Evaluation: RMSE, MAPE, and the Q² skill score against the real-time
//! propagation benchmark, per horizon and per speed regime.
//!
//! The benchmark (RTPB) predicts the anchor-slot speed for every future
//! slot — what a routing system does with no model at all. The skill score
//!
//! `Q² = 1 - RMSE² / RMSE_bench²`
//!
//! is 1 for a perfect prediction, 0 at benchmark parity, and negative when
//! the model does worse than propagating the last value. Note the h = 0
//! horizon: the benchmark predicts that slot exactly, so its RMSE is 0
//! there and Q² is undefined (reported as an empty field, never infinity).
//!
//! Errors are scaled to kph by each edge's free-flow speed before pooling,
//! so edges with different speed limits contribute commensurate errors.

pub mod svg;

use crate::data::SpeedPanel;
use crate::error::{Error, Result};
use crate::featurize::{build_lstm_sample, build_sample, SampleSpec};
use crate::models::{
    flatten_step_preds, predict_autoregressive, predict_static, Model, ModelNet,
};

/// Ground truth and context for one evaluated anchor.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub anchor_edge: usize,
    pub anchor_slot: usize,
    pub n_edges_out: usize,
    pub horizon: usize,
    /// `[n_edges_out x horizon]` row-major ground truth.
    pub target: Vec<f64>,
    /// Speed at the anchor slot per covered edge; the benchmark prediction.
    pub anchor_speeds: Vec<f64>,
    /// Anchor-edge lookback for the regime variation statistic.
    pub pre_anchor: Vec<f64>,
}

/// Predictions aligned with their cases, plus the benchmark's.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub horizon: usize,
    pub n_edges_out: usize,
    /// Total edges in the panel (for free-flow lookup under edge wrapping).
    pub n_edges_total: usize,
    pub cases: Vec<EvalCase>,
    pub preds: Vec<Vec<f64>>,
    pub bench: Vec<Vec<f64>>,
}

/// The benchmark prediction: the anchor speed, propagated to every horizon.
pub fn rtpb_predict(case: &EvalCase) -> Vec<f64> {
    let mut out = vec![0.0; case.n_edges_out * case.horizon];
    for l in 0..case.n_edges_out {
        for h in 0..case.horizon {
            out[l * case.horizon + h] = case.anchor_speeds[l];
        }
    }
    out
}

/// `Q² = 1 - rmse²/rmse_bench²`; undefined when the benchmark is exact.
pub fn q_score(rmse: f64, rmse_bench: f64) -> Option<f64> {
    if rmse_bench > 0.0 {
        Some(1.0 - (rmse * rmse) / (rmse_bench * rmse_bench))
    } else {
        None
    }
}

/// Per-horizon and aggregate RMSE of `values` against the case targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseCurve {
    pub per_h: Vec<f64>,
    pub aggregate: f64,
}

fn rmse_of(
    set: &PredictionSet,
    indices: &[usize],
    values: &[Vec<f64>],
    ffs: Option<&[f64]>,
) -> Result<RmseCurve> {
    if indices.is_empty() {
        return Err(Error::validation("empty prediction set"));
    }
    let h_max = set.horizon;
    let mut sq = vec![0.0; h_max];
    let mut n = vec![0usize; h_max];
    for &i in indices {
        let case = &set.cases[i];
        let pred = &values[i];
        for l in 0..case.n_edges_out {
            let scale = match ffs {
                Some(f) => f[(case.anchor_edge + l) % set.n_edges_total],
                None => 1.0,
            };
            for h in 0..case.horizon {
                let e = (pred[l * case.horizon + h] - case.target[l * case.horizon + h]) * scale;
                sq[h] += e * e;
                n[h] += 1;
            }
        }
    }
    let per_h: Vec<f64> = sq
        .iter()
        .zip(&n)
        .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
        .collect();
    let total_sq: f64 = sq.iter().sum();
    let total_n: usize = n.iter().sum();
    Ok(RmseCurve {
        per_h,
        aggregate: (total_sq / total_n as f64).sqrt(),
    })
}

/// Per-horizon and aggregate mean absolute percentage error. Entries with
/// near-zero ground truth are excluded and tallied.
#[derive(Debug, Clone, PartialEq)]
pub struct MapeCurve {
    pub per_h: Vec<f64>,
    pub aggregate: f64,
    pub excluded: usize,
}

const MAPE_FLOOR: f64 = 1e-6;

fn mape_of(set: &PredictionSet, indices: &[usize], values: &[Vec<f64>]) -> Result<MapeCurve> {
    if indices.is_empty() {
        return Err(Error::validation("empty prediction set"));
    }
    let h_max = set.horizon;
    let mut acc = vec![0.0; h_max];
    let mut n = vec![0usize; h_max];
    let mut excluded = 0usize;
    for &i in indices {
        let case = &set.cases[i];
        let pred = &values[i];
        for l in 0..case.n_edges_out {
            for h in 0..case.horizon {
                let truth = case.target[l * case.horizon + h];
                if truth.abs() < MAPE_FLOOR {
                    excluded += 1;
                    continue;
                }
                acc[h] += (1.0 - pred[l * case.horizon + h] / truth).abs();
                n[h] += 1;
            }
        }
    }
    let per_h: Vec<f64> = acc
        .iter()
        .zip(&n)
        .map(|(a, &c)| if c > 0 { 100.0 * a / c as f64 } else { 0.0 })
        .collect();
    let total: f64 = acc.iter().sum();
    let total_n: usize = n.iter().sum();
    Ok(MapeCurve {
        per_h,
        aggregate: if total_n > 0 {
            100.0 * total / total_n as f64
        } else {
            0.0
        },
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Constant,
    Changing,
    Standard,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Constant => "constant",
            Regime::Changing => "changing",
            Regime::Standard => "standard",
        }
    }
}

/// Labels per case: the least-varying decile is `constant`, the most-varying
/// decile `changing`, the remaining 80% `standard`.
#[derive(Debug, Clone)]
pub struct RegimeSplit {
    pub labels: Vec<Regime>,
    pub variation: Vec<f64>,
}

/// Standard deviation of the anchor edge's speeds over the lookback plus the
/// prediction window — the sample's variation statistic.
fn variation_stat(case: &EvalCase) -> f64 {
    let mut vals: Vec<f64> = case.pre_anchor.clone();
    vals.extend_from_slice(&case.target[0..case.horizon]);
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Split cases into speed regimes by variation deciles. Quantile ties break
/// by case order.
pub fn regime_split(set: &PredictionSet) -> Result<RegimeSplit> {
    let n = set.cases.len();
    if n < 10 {
        return Err(Error::validation(format!(
            "regime split needs at least 10 cases, got {n}"
        )));
    }
    let variation: Vec<f64> = set.cases.iter().map(variation_stat).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        variation[a]
            .partial_cmp(&variation[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let decile = ((n as f64) * 0.10).round() as usize;
    let mut labels = vec![Regime::Standard; n];
    for &i in &order[..decile] {
        labels[i] = Regime::Constant;
    }
    for &i in &order[n - decile..] {
        labels[i] = Regime::Changing;
    }
    Ok(RegimeSplit { labels, variation })
}

/// One metric table: a named subset of cases measured per horizon.
#[derive(Debug, Clone)]
pub struct MetricCurve {
    pub regime: String,
    pub n_cases: usize,
    pub rmse_kph: Vec<f64>,
    pub rmse_bench_kph: Vec<f64>,
    pub q2: Vec<Option<f64>>,
    pub mape: Vec<f64>,
    pub agg_rmse_kph: f64,
    pub agg_rmse_bench_kph: f64,
    pub agg_q2: Option<f64>,
    pub agg_mape: f64,
    pub mape_excluded: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub horizon: usize,
    pub curves: Vec<MetricCurve>,
}

impl EvalReport {
    pub fn curve(&self, regime: &str) -> Option<&MetricCurve> {
        self.curves.iter().find(|c| c.regime == regime)
    }

    /// CSV rows `horizon,rmse_kph,rmse_bench_kph,q2,mape,regime`, one block
    /// per curve, each closed by an aggregate row with horizon `all`.
    /// Undefined Q² prints as an empty field.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "horizon,rmse_kph,rmse_bench_kph,q2,mape,regime")?;
        let q2s = |q: &Option<f64>| q.map(|v| v.to_string()).unwrap_or_default();
        for curve in &self.curves {
            for h in 0..self.horizon {
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    h,
                    curve.rmse_kph[h],
                    curve.rmse_bench_kph[h],
                    q2s(&curve.q2[h]),
                    curve.mape[h],
                    curve.regime
                )?;
            }
            writeln!(
                f,
                "all,{},{},{},{},{}",
                curve.agg_rmse_kph,
                curve.agg_rmse_bench_kph,
                q2s(&curve.agg_q2),
                curve.agg_mape,
                curve.regime
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

fn curve_for(
    set: &PredictionSet,
    indices: &[usize],
    name: &str,
    ffs: Option<&[f64]>,
) -> Result<MetricCurve> {
    let model_rmse = rmse_of(set, indices, &set.preds, ffs)?;
    let bench_rmse = rmse_of(set, indices, &set.bench, ffs)?;
    let mape = mape_of(set, indices, &set.preds)?;
    let q2: Vec<Option<f64>> = model_rmse
        .per_h
        .iter()
        .zip(&bench_rmse.per_h)
        .map(|(&r, &b)| q_score(r, b))
        .collect();
    Ok(MetricCurve {
        regime: name.to_string(),
        n_cases: indices.len(),
        q2,
        agg_q2: q_score(model_rmse.aggregate, bench_rmse.aggregate),
        rmse_kph: model_rmse.per_h,
        rmse_bench_kph: bench_rmse.per_h,
        mape: mape.per_h,
        agg_rmse_kph: model_rmse.aggregate,
        agg_rmse_bench_kph: bench_rmse.aggregate,
        agg_mape: mape.aggregate,
        mape_excluded: mape.excluded,
    })
}

/// Metric tables over a prediction set: the whole set, plus per-regime
/// tables when requested.
pub fn report_from_predictions(set: &PredictionSet, with_regimes: bool, ffs: Option<&[f64]>) -> Result<EvalReport> {
    let all: Vec<usize> = (0..set.cases.len()).collect();
    let mut curves = vec![curve_for(set, &all, "all", ffs)?];
    if with_regimes {
        let split = regime_split(set)?;
        for regime in [Regime::Constant, Regime::Changing, Regime::Standard] {
            let idx: Vec<usize> = (0..set.cases.len())
                .filter(|&i| split.labels[i] == regime)
                .collect();
            curves.push(curve_for(set, &idx, regime.name(), ffs)?);
        }
    }
    Ok(EvalReport {
        horizon: set.horizon,
        curves,
    })
}

fn case_from_parts(
    panel: &SpeedPanel,
    spec: &SampleSpec,
    edge: usize,
    slot: usize,
    target: Vec<f64>,
    pre_anchor: Vec<f64>,
) -> EvalCase {
    let n_out = spec.n_edges_out();
    let horizon = spec.horizon();
    let anchor_speeds: Vec<f64> = (0..n_out)
        .map(|l| panel.value((edge + l) % panel.n_edges(), slot))
        .collect();
    EvalCase {
        anchor_edge: edge,
        anchor_slot: slot,
        n_edges_out: n_out,
        horizon,
        target,
        anchor_speeds,
        pre_anchor,
    }
}

/// Who produces the predictions under evaluation.
pub enum Predictor<'a> {
    Model(&'a Model),
    /// Evaluate the benchmark against itself (a consistency probe).
    Rtpb,
}

/// Featurize every anchor, run the predictor, and pair each prediction with
/// the benchmark. `threads > 1` splits the anchors into contiguous chunks
/// evaluated in parallel; chunk results are concatenated in order, so the
/// outcome is identical to a sequential run.
pub fn collect_predictions(
    predictor: &Predictor,
    panel: &SpeedPanel,
    spec: &SampleSpec,
    anchors: &[(usize, usize)],
    threads: usize,
) -> Result<PredictionSet> {
    let run_chunk = |chunk: &[(usize, usize)]| -> Result<Vec<(EvalCase, Vec<f64>)>> {
        let mut out = Vec::with_capacity(chunk.len());
        for &(edge, slot) in chunk {
            let (case, pred) = match predictor {
                Predictor::Model(model) => match &model.net {
                    ModelNet::Feedforward(_) => {
                        let sample = build_sample(panel, spec, edge, slot).map_err(|u| {
                            Error::validation(format!(
                                "anchor ({edge},{slot}) is unavailable: {u:?}"
                            ))
                        })?;
                        let pred = predict_static(model, &sample, spec)?;
                        let case = case_from_parts(
                            panel,
                            spec,
                            edge,
                            slot,
                            sample.target,
                            sample.pre_anchor,
                        );
                        (case, pred)
                    }
                    ModelNet::Lstm(net) => {
                        let sample = build_lstm_sample(panel, spec, edge, slot, net.t_steps)
                            .map_err(|u| {
                                Error::validation(format!(
                                    "anchor ({edge},{slot}) is unavailable: {u:?}"
                                ))
                            })?;
                        let pred = flatten_step_preds(&predict_autoregressive(net, &sample)?);
                        let case = case_from_parts(
                            panel,
                            spec,
                            edge,
                            slot,
                            sample.flat_targets(),
                            sample.pre_anchor,
                        );
                        (case, pred)
                    }
                },
                Predictor::Rtpb => {
                    let sample = build_sample(panel, spec, edge, slot).map_err(|u| {
                        Error::validation(format!("anchor ({edge},{slot}) is unavailable: {u:?}"))
                    })?;
                    let case =
                        case_from_parts(panel, spec, edge, slot, sample.target, sample.pre_anchor);
                    let pred = rtpb_predict(&case);
                    (case, pred)
                }
            };
            out.push((case, pred));
        }
        Ok(out)
    };

    let mut rows: Vec<(EvalCase, Vec<f64>)> = Vec::with_capacity(anchors.len());
    if threads <= 1 || anchors.len() < 2 * threads {
        rows = run_chunk(anchors)?;
    } else {
        let chunk_len = anchors.len().div_ceil(threads);
        let chunks: Vec<&[(usize, usize)]> = anchors.chunks(chunk_len).collect();
        let results: Vec<Result<Vec<(EvalCase, Vec<f64>)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|c| scope.spawn(move || run_chunk(c)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            rows.extend(r?);
        }
    }

    let (cases, preds): (Vec<EvalCase>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let bench: Vec<Vec<f64>> = cases.iter().map(rtpb_predict).collect();
    Ok(PredictionSet {
        horizon: spec.horizon(),
        n_edges_out: spec.n_edges_out(),
        n_edges_total: panel.n_edges(),
        cases,
        preds,
        bench,
    })
}

/// End-to-end evaluation of a trained model on the given anchors.
pub fn evaluate_model(
    model: &Model,
    panel: &SpeedPanel,
    spec: &SampleSpec,
    anchors: &[(usize, usize)],
    ffs: Option<&[f64]>,
    with_regimes: bool,
    threads: usize,
) -> Result<EvalReport> {
    if anchors.is_empty() {
        return Err(Error::validation("no anchors to evaluate"));
    }
    let set = collect_predictions(&Predictor::Model(model), panel, spec, anchors, threads)?;
    report_from_predictions(&set, with_regimes, ffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SpeedPanel, SLOTS_PER_DAY};

    fn one_edge_panel(values: Vec<f64>) -> SpeedPanel {
        let n = values.len();
        SpeedPanel::from_parts(values, vec![true; n], 1, n, SLOTS_PER_DAY, vec![65.0]).unwrap()
    }

    /// A single-edge, single-case set with the given target/pred/anchor.
    fn tiny_set(target: Vec<f64>, pred: Vec<f64>, anchor: f64) -> PredictionSet {
        let horizon = target.len();
        let case = EvalCase {
            anchor_edge: 0,
            anchor_slot: 0,
            n_edges_out: 1,
            horizon,
            target,
            anchor_speeds: vec![anchor],
            pre_anchor: vec![anchor; 4],
        };
        let bench = rtpb_predict(&case);
        PredictionSet {
            horizon,
            n_edges_out: 1,
            n_edges_total: 1,
            cases: vec![case],
            preds: vec![pred],
            bench: vec![bench],
        }
    }

    #[test]
    fn rmse_of_perfect_prediction_is_zero() {
        let set = tiny_set(vec![0.5; 20], vec![0.5; 20], 0.5);
        let curve = rmse_of(&set, &[0], &set.preds, None).unwrap();
        assert_eq!(curve.aggregate, 0.0);
        assert!(curve.per_h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rmse_denormalizes_by_free_flow() {
        // One entry with 0.1 normalized error at 65 kph free flow -> 6.5 kph.
        let set = tiny_set(vec![0.5], vec![0.6], 0.5);
        let curve = rmse_of(&set, &[0], &set.preds, Some(&[65.0])).unwrap();
        assert!((curve.aggregate - 6.5).abs() < 1e-12);
    }

    #[test]
    fn rmse_root_mean_square_by_hand() {
        // kph errors {3, 4} over two entries -> sqrt((9+16)/2) = 3.5355.
        let set = tiny_set(vec![0.5, 0.5], vec![0.5 + 3.0 / 65.0, 0.5 + 4.0 / 65.0], 0.5);
        let curve = rmse_of(&set, &[0], &set.preds, Some(&[65.0])).unwrap();
        assert!((curve.aggregate - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn rtpb_broadcasts_the_anchor() {
        let set = tiny_set(vec![0.1; 20], vec![0.0; 20], 0.8);
        assert!(set.bench[0].iter().all(|&v| v == 0.8));
    }

    #[test]
    fn rtpb_is_exact_on_constant_series() {
        let set = tiny_set(vec![0.8; 20], vec![0.0; 20], 0.8);
        let curve = rmse_of(&set, &[0], &set.bench, None).unwrap();
        assert_eq!(curve.aggregate, 0.0);
    }

    #[test]
    fn rtpb_error_grows_linearly_on_a_ramp() {
        // v(tau + h) = v(tau) + c*h: the benchmark is off by exactly |c|*h.
        let c = 0.01;
        let target: Vec<f64> = (0..20).map(|h| 0.5 + c * h as f64).collect();
        let set = tiny_set(target, vec![0.0; 20], 0.5);
        let curve = rmse_of(&set, &[0], &set.bench, None).unwrap();
        for h in 0..20 {
            assert!((curve.per_h[h] - c * h as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn q_score_identities() {
        assert_eq!(q_score(0.0, 2.0), Some(1.0));
        assert_eq!(q_score(2.0, 2.0), Some(0.0));
        assert_eq!(q_score(4.0, 2.0), Some(-3.0));
        assert_eq!(q_score(1.0, 0.0), None);
    }

    #[test]
    fn mape_examples() {
        let set = tiny_set(vec![0.5; 10], vec![0.5; 10], 0.5);
        assert_eq!(mape_of(&set, &[0], &set.preds).unwrap().aggregate, 0.0);

        // Predicting 1.1x the truth everywhere is a 10% error.
        let target = vec![0.4, 0.8, 0.2];
        let pred: Vec<f64> = target.iter().map(|v| 1.1 * v).collect();
        let set = tiny_set(target, pred, 0.5);
        let m = mape_of(&set, &[0], &set.preds).unwrap();
        assert!((m.aggregate - 10.0).abs() < 1e-9);

        // Predicting 0 against truth 1 is 100%.
        let set = tiny_set(vec![1.0], vec![0.0], 0.5);
        assert!((mape_of(&set, &[0], &set.preds).unwrap().aggregate - 100.0).abs() < 1e-12);
    }

    #[test]
    fn mape_excludes_near_zero_truth() {
        let set = tiny_set(vec![0.5, 0.0, 0.5], vec![0.5, 0.9, 0.5], 0.5);
        let m = mape_of(&set, &[0], &set.preds).unwrap();
        assert_eq!(m.excluded, 1);
        assert_eq!(m.aggregate, 0.0);
    }

    fn multi_case_set(variations: &[f64]) -> PredictionSet {
        // Each case's target wiggles with its own amplitude.
        let horizon = 20;
        let mut cases = Vec::new();
        let mut preds = Vec::new();
        for (i, &a) in variations.iter().enumerate() {
            let target: Vec<f64> =
                (0..horizon).map(|h| 0.5 + a * ((h as f64) * 0.7).sin()).collect();
            let case = EvalCase {
                anchor_edge: 0,
                anchor_slot: i,
                n_edges_out: 1,
                horizon,
                target,
                anchor_speeds: vec![0.5],
                pre_anchor: vec![0.5; 4],
            };
            preds.push(case.target.clone());
            cases.push(case);
        }
        let bench = cases.iter().map(rtpb_predict).collect();
        PredictionSet {
            horizon,
            n_edges_out: 1,
            n_edges_total: 1,
            cases,
            preds,
            bench,
        }
    }

    #[test]
    fn regime_split_deciles() {
        let variations: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let set = multi_case_set(&variations);
        let split = regime_split(&set).unwrap();
        let count = |r: Regime| split.labels.iter().filter(|&&l| l == r).count();
        assert_eq!(count(Regime::Constant), 1);
        assert_eq!(count(Regime::Changing), 1);
        assert_eq!(count(Regime::Standard), 8);
        // The flattest case is constant, the wildest changing.
        assert_eq!(split.labels[0], Regime::Constant);
        assert_eq!(split.labels[9], Regime::Changing);
    }

    #[test]
    fn regime_split_breaks_ties_by_case_order() {
        let set = multi_case_set(&[0.0; 10]);
        let split = regime_split(&set).unwrap();
        assert_eq!(split.labels[0], Regime::Constant);
        assert_eq!(split.labels[9], Regime::Changing);
        assert!(split.labels[1..9]
            .iter()
            .all(|&l| l == Regime::Standard));
    }

    #[test]
    fn regime_mean_variation_is_ordered() {
        let variations: Vec<f64> = (0..30).map(|i| (i as f64) * 0.003).collect();
        let set = multi_case_set(&variations);
        let split = regime_split(&set).unwrap();
        let mean_of = |r: Regime| {
            let vals: Vec<f64> = split
                .labels
                .iter()
                .zip(&split.variation)
                .filter(|(l, _)| **l == r)
                .map(|(_, v)| *v)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean_of(Regime::Constant) <= mean_of(Regime::Standard));
        assert!(mean_of(Regime::Standard) <= mean_of(Regime::Changing));
    }

    #[test]
    fn regime_fractions_within_one_sample() {
        let variations: Vec<f64> = (0..47).map(|i| (i as f64) * 0.003).collect();
        let set = multi_case_set(&variations);
        let split = regime_split(&set).unwrap();
        let count = |r: Regime| split.labels.iter().filter(|&&l| l == r).count() as f64;
        assert!((count(Regime::Constant) - 4.7).abs() <= 1.0);
        assert!((count(Regime::Changing) - 4.7).abs() <= 1.0);
        assert!((count(Regime::Standard) - 37.6).abs() <= 2.0);
    }

    #[test]
    fn rtpb_as_model_scores_zero_where_defined() {
        // Evaluating the benchmark against itself: identical RMSE curves, so
        // Q² is exactly 0 at every horizon where it is defined. At h = 0 the
        // benchmark error is exactly 0 and Q² is undefined.
        let n_slots = 9 * SLOTS_PER_DAY;
        let values: Vec<f64> = (0..n_slots)
            .map(|s| 0.6 + 0.3 * ((s as f64) * 0.013).sin())
            .collect();
        let panel = one_edge_panel(values);
        let spec = SampleSpec::reduced();
        let anchors = crate::featurize::enumerate_samples(&panel, &spec, 240);
        assert!(anchors.len() >= 2);
        let set =
            collect_predictions(&Predictor::Rtpb, &panel, &spec, &anchors, 1).unwrap();
        let report = report_from_predictions(&set, false, None).unwrap();
        let curve = report.curve("all").unwrap();
        assert_eq!(curve.q2[0], None, "benchmark is exact at h = 0");
        for h in 1..20 {
            assert_eq!(curve.q2[h], Some(0.0), "horizon {h}");
        }
        assert_eq!(curve.agg_q2, Some(0.0));
    }

    #[test]
    fn noisy_persistence_scores_negative() {
        // A predictor that adds noise to the benchmark is strictly worse.
        let c = 0.004;
        let target: Vec<f64> = (0..20).map(|h| 0.5 + c * h as f64).collect();
        let mut set = tiny_set(target, vec![], 0.5);
        let mut noisy = set.bench[0].clone();
        for (i, v) in noisy.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.26 } else { -0.26 };
        }
        set.preds = vec![noisy];
        let report = report_from_predictions(&set, false, None).unwrap();
        assert!(report.curve("all").unwrap().agg_q2.unwrap() < 0.0);
    }

    #[test]
    fn q2_is_invariant_under_common_rescaling() {
        let c = 0.01;
        let target: Vec<f64> = (0..20).map(|h| 0.5 + c * h as f64).collect();
        let pred: Vec<f64> = target.iter().map(|v| v + 0.05).collect();
        let base = tiny_set(target.clone(), pred.clone(), 0.5);
        let scaled = tiny_set(
            target.iter().map(|v| v * 3.0).collect(),
            pred.iter().map(|v| v * 3.0).collect(),
            1.5,
        );
        let rb = report_from_predictions(&base, false, None).unwrap();
        let rs = report_from_predictions(&scaled, false, None).unwrap();
        for h in 1..20 {
            let (a, b) = (
                rb.curve("all").unwrap().q2[h].unwrap(),
                rs.curve("all").unwrap().q2[h].unwrap(),
            );
            assert!((a - b).abs() < 1e-12, "horizon {h}: {a} vs {b}");
        }
    }

    #[test]
    fn bench_rmse_grows_with_horizon_during_congestion_onset() {
        // On a noiseless seasonal panel, anchors placed on the morning
        // congestion onset see the benchmark degrade monotonically with h.
        let panel = crate::data::generate_synthetic(&crate::data::SyntheticConfig {
            n_edges: 4,
            n_days: 10,
            congestion_amplitude: 0.6,
            noise_std: 0.0,
            rng_seed: 11,
        })
        .unwrap();
        let spec = SampleSpec::reduced();
        // 06:30-07:30, the rising flank of the morning dip.
        let onset: Vec<(usize, usize)> = (0..panel.n_edges())
            .flat_map(|e| {
                (130..150).step_by(5).map(move |tod| (e, 8 * SLOTS_PER_DAY + tod))
            })
            .collect();
        let set = collect_predictions(&Predictor::Rtpb, &panel, &spec, &onset, 1).unwrap();
        let curve = rmse_of(&set, &(0..set.cases.len()).collect::<Vec<_>>(), &set.bench, None)
            .unwrap();
        for h in 1..20 {
            assert!(
                curve.per_h[h] >= curve.per_h[h - 1] - 1e-12,
                "horizon {h}: {} < {}",
                curve.per_h[h],
                curve.per_h[h - 1]
            );
        }
    }

    #[test]
    fn csv_report_has_documented_schema() {
        let set = tiny_set(vec![0.5; 20], vec![0.6; 20], 0.4);
        let report = report_from_predictions(&set, false, Some(&[65.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "horizon,rmse_kph,rmse_bench_kph,q2,mape,regime"
        );
        assert_eq!(text.lines().count(), 1 + 20 + 1);
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'), "LF endings only");
    }

    #[test]
    fn threaded_collection_matches_sequential() {
        let n_slots = 9 * SLOTS_PER_DAY;
        let values: Vec<f64> = (0..n_slots)
            .map(|s| 0.5 + 0.2 * ((s as f64) * 0.017).cos())
            .collect();
        let panel = one_edge_panel(values);
        let spec = SampleSpec::reduced();
        let anchors = crate::featurize::enumerate_samples(&panel, &spec, 97);
        let seq = collect_predictions(&Predictor::Rtpb, &panel, &spec, &anchors, 1).unwrap();
        let par = collect_predictions(&Predictor::Rtpb, &panel, &spec, &anchors, 4).unwrap();
        assert_eq!(seq.preds, par.preds);
        assert_eq!(
            seq.cases.iter().map(|c| c.anchor_slot).collect::<Vec<_>>(),
            par.cases.iter().map(|c| c.anchor_slot).collect::<Vec<_>>()
        );
    }
}
