//! Static SVG emitters for the diagnostics: the cost-plane scatter with
//! descent arrows, and simple loss-curve plots. Output is deterministic
//! (no timestamps, fixed float formatting).

use crate::diagnostics::TangentReport;
use crate::error::{Error, Result};
use crate::loss::AggregationMode;

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const SIZE: f64 = 560.0;
const MARGIN: f64 = 64.0;

/// One scatter/quiver SVG per coordinate pair of the cost plane: every
/// patch as a dot at `(phi_jx, phi_jy)`, with an arrow along the descent
/// direction `-w` scaled by `arrow_scale`. For m = 2 that is a single
/// plot, for m = 3 the three 2-D slices.
///
/// Returns `(tag, svg)` pairs, the tag naming the coordinate pair ("0-1").
pub fn tangent_svgs(
    report: &TangentReport,
    labels: &[String],
    arrow_scale: f64,
) -> Result<Vec<(String, String)>> {
    let m = report.phis.ncols();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "the cost plane needs at least two prompts".into(),
        ));
    }
    if labels.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: labels.len(),
        });
    }
    let mut out = Vec::new();
    for jx in 0..m {
        for jy in (jx + 1)..m {
            out.push((
                format!("{jx}-{jy}"),
                tangent_pair_svg(report, labels, arrow_scale, jx, jy)?,
            ));
        }
    }
    Ok(out)
}

/// The scatter/quiver plot for one coordinate pair.
pub fn tangent_pair_svg(
    report: &TangentReport,
    labels: &[String],
    arrow_scale: f64,
    jx: usize,
    jy: usize,
) -> Result<String> {
    let n = report.phis.nrows();
    if n == 0 {
        return Err(Error::Empty("tangent report"));
    }
    // Data bounds over the dots and the arrow tips.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let tip = |i: usize, j: usize| report.phis[(i, j)] - arrow_scale * report.pushforwards[(i, j)];
    for i in 0..n {
        for (k, j) in [jx, jy].into_iter().enumerate() {
            lo[k] = lo[k].min(report.phis[(i, j)]).min(tip(i, j));
            hi[k] = hi[k].max(report.phis[(i, j)]).max(tip(i, j));
        }
    }
    for k in 0..2 {
        let pad = (hi[k] - lo[k]).max(1e-9) * 0.08;
        lo[k] -= pad;
        hi[k] += pad;
    }
    let span = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - lo[0]) / (hi[0] - lo[0]) * span;
    let sy = |v: f64| SIZE - MARGIN - (v - lo[1]) / (hi[1] - lo[1]) * span;

    let (mode_name, eps) = describe_mode(&report.metadata.mode);
    let mut svg = String::with_capacity(4096 + n * 160);
    svg.push_str(&format!(
        "<svg version=\"1.1\" width=\"{SIZE}\" height=\"{SIZE}\" \
         xmlns=\"http://www.w3.org/2000/svg\">\n"
    ));
    svg.push_str(&format!(
        "<!-- mode={mode_name}{eps} objective={} arrow_scale={arrow_scale} -->\n",
        report.metadata.objective
    ));
    svg.push_str(
        "<defs><marker id=\"tip\" markerWidth=\"7\" markerHeight=\"7\" refX=\"5\" refY=\"2.5\" \
         orient=\"auto\"><path d=\"M0,0 L5,2.5 L0,5 z\" fill=\"context-stroke\"/></marker></defs>\n",
    );
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m0}\" y1=\"{m1}\" x2=\"{m0}\" y2=\"{m2}\" stroke=\"black\"/>\n\
         <line x1=\"{m0}\" y1=\"{m1}\" x2=\"{m2}\" y2=\"{m1}\" stroke=\"black\"/>\n",
        m0 = MARGIN,
        m1 = SIZE - MARGIN,
        m2 = SIZE - MARGIN,
    ));
    for (v, at_min) in [(lo[0], true), (hi[0], false)] {
        let x = if at_min { MARGIN } else { SIZE - MARGIN };
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"middle\" \
             font-family=\"monospace\">{v:.3}</text>\n",
            y = SIZE - MARGIN + 18.0,
        ));
    }
    for (v, at_min) in [(lo[1], true), (hi[1], false)] {
        let y = if at_min { SIZE - MARGIN } else { MARGIN };
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"end\" \
             font-family=\"monospace\">{v:.3}</text>\n",
            x = MARGIN - 6.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{cx:.1}\" y=\"{y:.1}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"monospace\">distance to {xl}</text>\n",
        cx = SIZE / 2.0,
        y = SIZE - MARGIN + 40.0,
        xl = xml_escape(&labels[jx]),
    ));
    svg.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{cy:.1}\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"monospace\" transform=\"rotate(-90 {x:.1} {cy:.1})\">distance to {yl}</text>\n",
        x = MARGIN - 40.0,
        cy = SIZE / 2.0,
        yl = xml_escape(&labels[jy]),
    ));
    svg.push_str(&format!(
        "<text x=\"{cx:.1}\" y=\"26\" font-size=\"13\" text-anchor=\"middle\" \
         font-family=\"monospace\">{mode_name}{eps}: tangents on the cost plane</text>\n",
        cx = SIZE / 2.0,
    ));
    // Arrows first so dots sit on top.
    for i in 0..n {
        let color = COLORS[report.assigned[i] % COLORS.len()];
        let x0 = sx(report.phis[(i, jx)]);
        let y0 = sy(report.phis[(i, jy)]);
        let x1 = sx(tip(i, jx));
        let y1 = sy(tip(i, jy));
        if (x1 - x0).abs() > 0.05 || (y1 - y0).abs() > 0.05 {
            svg.push_str(&format!(
                "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" \
                 stroke=\"{color}\" stroke-width=\"1.2\" marker-end=\"url(#tip)\"/>\n"
            ));
        }
    }
    for i in 0..n {
        let color = COLORS[report.assigned[i] % COLORS.len()];
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>\n",
            x = sx(report.phis[(i, jx)]),
            y = sy(report.phis[(i, jy)]),
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Simple multi-series line plot, one polyline per `(label, values)`.
pub fn loss_curves_svg(series: &[(&str, &[f64])]) -> Result<String> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Empty("loss curves"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut longest = 1usize;
    for (_, values) in series {
        longest = longest.max(values.len());
        for &v in *values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let pad = (hi - lo).max(1e-9) * 0.08;
    lo -= pad;
    hi += pad;
    let (w, h) = (640.0, 360.0);
    let margin = 56.0;
    let sx = |i: usize| margin + i as f64 / (longest.max(2) - 1) as f64 * (w - 2.0 * margin);
    let sy = |v: f64| h - margin - (v - lo) / (hi - lo) * (h - 2.0 * margin);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg version=\"1.1\" width=\"{w}\" height=\"{h}\" xmlns=\"http://www.w3.org/2000/svg\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{margin}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{y0}\" x2=\"{margin}\" y2=\"{margin}\" stroke=\"black\"/>\n",
        y0 = h - margin,
        x1 = w - margin,
    ));
    svg.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" font-family=\"monospace\" \
         text-anchor=\"end\">{hi:.4}</text>\n",
        x = margin - 6.0,
        y = margin + 4.0,
    ));
    svg.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" font-family=\"monospace\" \
         text-anchor=\"end\">{lo:.4}</text>\n",
        x = margin - 6.0,
        y = h - margin + 4.0,
    ));
    svg.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"12\" font-family=\"monospace\" \
         text-anchor=\"middle\">iteration</text>\n",
        x = w / 2.0,
        y = h - margin + 32.0,
    ));
    for (s, (label, values)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        let mut path = String::new();
        for (i, &v) in values.iter().enumerate() {
            path.push_str(&format!(
                "{}{:.2} {:.2}",
                if i == 0 { "M" } else { " L" },
                sx(i),
                sy(v)
            ));
        }
        svg.push_str(&format!(
            "<path d=\"{path}\" stroke=\"{color}\" stroke-width=\"1.6\" fill=\"none\"/>\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-size=\"12\" font-family=\"monospace\">{label}</text>\n",
            x = w - margin - 150.0,
            y = margin + 18.0 * s as f64,
            tx = w - margin - 132.0,
            ty = margin + 18.0 * s as f64 + 10.0,
            label = xml_escape(label),
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn describe_mode(mode: &AggregationMode) -> (&'static str, String) {
    match mode {
        AggregationMode::Mean => ("mean", String::new()),
        AggregationMode::OptimalTransport(cfg) => ("ot", format!(" epsilon={}", cfg.epsilon)),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
