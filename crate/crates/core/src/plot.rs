//! Byte-reproducible SVG charts: block histograms with fitted mixture
//! components, and the zone regression scatter.
//!
//! All coordinates are written with two decimals on a fixed 800×600 canvas.

use std::fmt::Write as _;

use crate::gmm::{GmmFit, Modality, ModalityDecision};
use crate::height_model::HeightEstimate;
use crate::histogram_stats::Histogram;
use crate::zoning_regression::{zone_points, RegressionResult, ZoneSummary};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const CURVE_POINTS: usize = 200;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    out.push_str("<style>.bar{fill:#b8c4d6;stroke:#5b6b82;stroke-width:0.5}.bar.kept-canopy{fill:#4f9a5a}.bar.kept-ground{fill:#a0703c}.component{fill:none;stroke-width:2}.point{fill:#1f5fa8}.fit{stroke:#c0392b;stroke-width:2}.axis{stroke:#222;stroke-width:1}.grid{stroke:#ddd;stroke-width:1}</style>\n");
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text class="title" x="{:.2}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (bx, by) = (f.px(f.x0), f.py(f.y0));
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{bx:.2}" y1="{by:.2}" x2="{:.2}" y2="{by:.2}"/>"#,
        f.px(f.x1)
    );
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{bx:.2}" y1="{by:.2}" x2="{bx:.2}" y2="{:.2}"/>"#,
        f.py(f.y1)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#,
            f.px(xv),
            by + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#,
            bx - 8.0,
            f.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (f.px(f.x0) + f.px(f.x1)) / 2.0,
        HEIGHT - 20.0,
        escape(x_label)
    );
    let cy = (f.py(f.y0) + f.py(f.y1)) / 2.0;
    let _ = writeln!(
        out,
        r#"<text class="label" x="20" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 20 {cy:.2})">{}</text>"#,
        escape(y_label)
    );
}

/// Which bins to shade as trimmed selections, and optional reference lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrimShading {
    pub canopy_kept: Vec<usize>,
    pub ground_kept: Vec<usize>,
    pub canopy_elevation: Option<f64>,
    pub ground_elevation: Option<f64>,
}

/// Histogram bars overlaid with the selected mixture's component curves, each
/// scaled to counts by `weight * n * bin_width`.
pub fn histogram_svg(
    title: &str,
    hist: &Histogram,
    decision: &ModalityDecision,
    shading: &TrimShading,
) -> String {
    let fit: &GmmFit = match decision.modality {
        Modality::Bimodal => &decision.fit_k2,
        Modality::Unimodal => &decision.fit_k1,
    };
    let n = hist.total as f64;
    let width = hist.bin_width();
    let curve = |c: usize, x: f64| fit.component_log_density(c, x).exp() * n * width;

    let (x0, x1) = (hist.min_edge(), hist.max_edge());
    let peak_curve = (0..fit.k)
        .map(|c| curve(c, fit.means[c].clamp(x0, x1)))
        .fold(0.0, f64::max);
    let peak_bar = hist.counts.iter().copied().max().unwrap_or(0) as f64;
    let frame = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: (peak_bar.max(peak_curve) * 1.08).max(1.0),
    };

    let mut out = String::new();
    open(&mut out, title);
    for (b, &count) in hist.counts.iter().enumerate() {
        let class = if shading.canopy_kept.contains(&b) {
            "bar kept-canopy"
        } else if shading.ground_kept.contains(&b) {
            "bar kept-ground"
        } else {
            "bar"
        };
        let (left, right) = (frame.px(hist.bin_edges[b]), frame.px(hist.bin_edges[b + 1]));
        let top = frame.py(count as f64);
        let _ = writeln!(
            out,
            r#"<rect class="{class}" x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}"/>"#,
            right - left,
            frame.py(0.0) - top
        );
    }
    let colours = ["#a0703c", "#2e7d32"];
    for c in 0..fit.k {
        let colour = if fit.k == 1 { colours[1] } else { colours[c] };
        let _ = write!(
            out,
            r#"<polyline class="component" stroke="{colour}" points=""#
        );
        for i in 0..=CURVE_POINTS {
            let x = x0 + (x1 - x0) * i as f64 / CURVE_POINTS as f64;
            let y = curve(c, x).min(frame.y1);
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.2},{:.2}", frame.px(x), frame.py(y));
        }
        out.push_str("\"/>\n");
    }
    for (class, value) in [
        ("ground-line", shading.ground_elevation),
        ("canopy-line", shading.canopy_elevation),
    ] {
        if let Some(v) = value {
            let x = frame.px(v);
            let _ = writeln!(
                out,
                r##"<line class="{class}" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333" stroke-dasharray="6 4"/>"##,
                frame.py(0.0),
                frame.py(frame.y1)
            );
        }
    }
    axes(&mut out, &frame, "Elevation (m)", "Pixel count");
    out.push_str("</svg>\n");
    out
}

/// Histogram chart for one estimated block, shading the trimmed bins.
pub fn estimate_histogram_svg(est: &HeightEstimate) -> String {
    let d = &est.diagnostics;
    let title = format!(
        "{} ({:?}, DCHM {:.3} m)",
        est.block_id, est.case_used, est.dchm
    );
    histogram_svg(
        &title,
        &d.histogram,
        &d.modality,
        &TrimShading {
            canopy_kept: d.canopy_kept.clone(),
            ground_kept: d.ground_kept.clone(),
            canopy_elevation: Some(est.canopy_elevation),
            ground_elevation: Some(est.ground_elevation),
        },
    )
}

/// Scatter of `(height, yield)` points with the fitted line and its equation.
pub fn regression_svg(
    title: &str,
    result: &RegressionResult,
    labels: &[String],
    points: &[(f64, f64)],
) -> String {
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    for x in [xmin, xmax] {
        let y = result.predict(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        let span = if hi > lo { hi - lo } else { 1.0 };
        (lo - 0.08 * span, hi + 0.08 * span)
    };
    let (x0, x1) = pad(xmin, xmax);
    let (y0, y1) = pad(ymin, ymax);
    let frame = Frame { x0, x1, y0, y1 };

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &frame, "Median DCHM (m)", "Median yield (t/acre)");
    let _ = writeln!(
        out,
        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
        frame.px(xmin),
        frame.py(result.predict(xmin)),
        frame.px(xmax),
        frame.py(result.predict(xmax))
    );
    for (label, &(x, y)) in labels.iter().zip(points) {
        let (cx, cy) = (frame.px(x), frame.py(y));
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{cx:.2}" cy="{cy:.2}" r="5"><title>{}</title></circle>"#,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text class="point-label" x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            cx + 7.0,
            cy - 7.0,
            escape(label)
        );
    }
    let sign = if result.intercept < 0.0 { '-' } else { '+' };
    let _ = writeln!(
        out,
        r#"<text class="equation" x="{:.2}" y="{:.2}">y = {:.2}x {sign} {:.2}, R² = {:.2}</text>"#,
        LEFT + 20.0,
        TOP + 25.0,
        result.slope,
        result.intercept.abs(),
        result.r_squared
    );
    out.push_str("</svg>\n");
    out
}

/// Zone regression chart labelled with treatment-zone abbreviations.
pub fn emit_regression_plot(result: &RegressionResult, summaries: &[ZoneSummary]) -> String {
    let labels: Vec<String> = summaries.iter().map(|z| z.zone.abbreviation()).collect();
    regression_svg(
        "Median yield vs median DCHM by treatment zone",
        result,
        &labels,
        &zone_points(summaries),
    )
}

/// Histogram chart without trim shading.
pub fn emit_histogram_plot(hist: &Histogram, fit: &ModalityDecision) -> String {
    histogram_svg(
        "Block elevation histogram",
        hist,
        fit,
        &TrimShading::default(),
    )
}
