//! Self-contained SVG line charts: RMSE and Q² against the horizon, one
//! series per metric curve. No external assets, deterministic output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

use super::EvalReport;

const WIDTH: f64 = 640.0;
const CHART_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_V: f64 = 32.0;

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f"];

struct Series<'a> {
    label: String,
    color: &'a str,
    dashed: bool,
    points: Vec<(usize, f64)>,
}

fn chart(out: &mut String, title: &str, y_top: f64, series: &[Series], horizon: usize) {
    let (min, max) = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(_, v)| v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (min, max) = if min.is_finite() && max.is_finite() && max > min {
        (min, max)
    } else {
        (0.0, 1.0)
    };
    let pad = (max - min) * 0.08;
    let (lo, hi) = (min - pad, max + pad);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = CHART_H - 2.0 * MARGIN_V;
    let x_of = |h: usize| MARGIN_L + plot_w * h as f64 / (horizon.max(2) - 1) as f64;
    let y_of = |v: f64| y_top + MARGIN_V + plot_h * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" font-family="sans-serif" font-weight="bold">{}</text>"#,
        MARGIN_L,
        y_top + 16.0,
        title
    );
    // Axes.
    let _ = writeln!(
        out,
        r##"<line x1="{l:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="#333" stroke-width="1"/>"##,
        l = MARGIN_L,
        r = MARGIN_L + plot_w,
        b = y_top + MARGIN_V + plot_h
    );
    let _ = writeln!(
        out,
        r##"<line x1="{l:.1}" y1="{t:.1}" x2="{l:.1}" y2="{b:.1}" stroke="#333" stroke-width="1"/>"##,
        l = MARGIN_L,
        t = y_top + MARGIN_V,
        b = y_top + MARGIN_V + plot_h
    );
    // Y labels.
    for (v, anchor_y) in [(hi, y_top + MARGIN_V + 4.0), (lo, y_top + MARGIN_V + plot_h)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="end">{:.3}</text>"#,
            MARGIN_L - 6.0,
            anchor_y,
            v
        );
    }
    // X labels.
    for h in [0, horizon.saturating_sub(1)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="middle">{}</text>"#,
            x_of(h),
            y_top + MARGIN_V + plot_h + 14.0,
            h
        );
    }
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(h, v)| format!("{:.2},{:.2}", x_of(h), y_of(v)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{} points="{}"/>"#,
            s.color,
            dash,
            pts.join(" ")
        );
        let ly = y_top + MARGIN_V + 12.0 * (i as f64 + 1.0);
        let lx = MARGIN_L + plot_w + 8.0;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.5"{}/>"#,
            lx,
            ly - 3.0,
            lx + 18.0,
            ly - 3.0,
            s.color,
            dash
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif">{}</text>"#,
            lx + 22.0,
            ly,
            s.label
        );
    }
}

/// Render the report as two stacked charts: RMSE (kph) and Q² versus the
/// prediction horizon, one series per regime curve plus the benchmark.
pub fn write_svg(report: &EvalReport, path: &Path) -> Result<()> {
    let horizon = report.horizon;
    let mut rmse_series = Vec::new();
    let mut q2_series = Vec::new();
    for (i, curve) in report.curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        rmse_series.push(Series {
            label: format!("rmse {}", curve.regime),
            color,
            dashed: false,
            points: curve.rmse_kph.iter().copied().enumerate().collect(),
        });
        q2_series.push(Series {
            label: format!("q2 {}", curve.regime),
            color,
            dashed: false,
            points: curve
                .q2
                .iter()
                .enumerate()
                .filter_map(|(h, q)| q.map(|v| (h, v)))
                .collect(),
        });
        if i == 0 {
            rmse_series.push(Series {
                label: "rmse bench".to_string(),
                color: "#555555",
                dashed: true,
                points: curve.rmse_bench_kph.iter().copied().enumerate().collect(),
            });
        }
    }

    let total_h = 2.0 * CHART_H;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{total_h}" viewBox="0 0 {WIDTH} {total_h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    chart(&mut out, "RMSE (kph) vs horizon", 0.0, &rmse_series, horizon);
    chart(&mut out, "Q2 vs horizon", CHART_H, &q2_series, horizon);
    let _ = writeln!(out, "</svg>");

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MetricCurve;

    #[test]
    fn svg_is_self_contained() {
        let curve = MetricCurve {
            regime: "all".to_string(),
            n_cases: 3,
            rmse_kph: (0..20).map(|h| 1.0 + h as f64 * 0.1).collect(),
            rmse_bench_kph: (0..20).map(|h| 1.2 + h as f64 * 0.15).collect(),
            q2: (0..20)
                .map(|h| if h == 0 { None } else { Some(0.1 * h as f64) })
                .collect(),
            mape: vec![5.0; 20],
            agg_rmse_kph: 2.0,
            agg_rmse_bench_kph: 2.5,
            agg_q2: Some(0.36),
            agg_mape: 5.0,
            mape_excluded: 0,
        };
        let report = EvalReport {
            horizon: 20,
            curves: vec![curve],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.svg");
        write_svg(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        // No external assets: nothing fetched, nothing linked.
        assert!(!text.contains("href="));
        assert!(!text.contains("url("));
    }
}
