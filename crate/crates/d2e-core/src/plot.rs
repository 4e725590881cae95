//! Minimal deterministic SVG line plots: fixed canvas, fixed palette, fixed
//! float formatting, so the same numbers always render byte-identically.

use crate::error::{D2eError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const ML: f64 = 60.0; // left margin
const MT: f64 = 40.0; // top margin
const PW: f64 = 520.0; // plot width
const PH: f64 = 300.0; // plot height
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named line; `ys` pairs with the shared `xs`.
pub struct Series {
    pub label: String,
    pub ys: Vec<f64>,
}

/// Renders labeled line series over shared x values into SVG text.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], series: &[Series]) -> Result<String> {
    if xs.is_empty() || series.is_empty() {
        return Err(D2eError::Contract("plot needs at least one point and one series".into()));
    }
    for s in series {
        if s.ys.len() != xs.len() {
            return Err(D2eError::Dimension(format!(
                "series `{}` has {} points for {} x values",
                s.label,
                s.ys.len(),
                xs.len()
            )));
        }
    }
    let all_finite = xs.iter().all(|v| v.is_finite())
        && series.iter().all(|s| s.ys.iter().all(|v| v.is_finite()));
    if !all_finite {
        return Err(D2eError::Contract("plot values must be finite".into()));
    }

    let (xmin, xmax) = padded_range(xs);
    let mut ally: Vec<f64> = Vec::new();
    for s in series {
        ally.extend_from_slice(&s.ys);
    }
    let (ymin, ymax) = padded_range(&ally);

    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * PW;
    let py = |y: f64| MT + PH - (y - ymin) / (ymax - ymin) * PH;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"15\">{}</text>\n",
        ML + PW / 2.0,
        escape(title)
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MT + PH,
        ML + PW,
        MT + PH
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML:.2}\" y1=\"{MT:.2}\" x2=\"{ML:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MT + PH
    ));

    // five ticks per axis
    for i in 0..5 {
        let f = i as f64 / 4.0;
        let xv = xmin + f * (xmax - xmin);
        let yv = ymin + f * (ymax - ymin);
        svg.push_str(&format!(
            "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"black\"/>\n",
            px(xv),
            MT + PH,
            MT + PH + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            px(xv),
            MT + PH + 18.0,
            tick_label(xv)
        ));
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{1:.2}\" x2=\"{ML:.2}\" y2=\"{1:.2}\" stroke=\"black\"/>\n",
            ML - 5.0,
            py(yv)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            ML - 8.0,
            py(yv) + 4.0,
            tick_label(yv)
        ));
    }

    // axis labels
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
        ML + PW / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 16 {0:.2})\">{1}</text>\n",
        MT + PH / 2.0,
        escape(ylabel)
    ));

    // series lines and legend
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if xs.len() == 1 {
            // A one-point polyline paints nothing; a dot keeps the plot visible.
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>\n",
                px(xs[0]),
                py(s.ys[0]),
                color
            ));
        } else {
            let points: Vec<String> = xs
                .iter()
                .zip(&s.ys)
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                color,
                points.join(" ")
            ));
        }
        let ly = MT + 14.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            ML + PW - 150.0,
            ML + PW - 126.0,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            ML + PW - 120.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Two series on one x axis with independent left/right y scales — for
/// overlaying quantities of different magnitude (e.g. a divergence trace
/// against an accuracy gap).
pub fn dual_axis_plot(
    title: &str,
    xlabel: &str,
    left_label: &str,
    right_label: &str,
    xs: &[f64],
    left: &Series,
    right: &Series,
) -> Result<String> {
    if xs.is_empty() {
        return Err(D2eError::Contract("plot needs at least one point".into()));
    }
    for s in [left, right] {
        if s.ys.len() != xs.len() {
            return Err(D2eError::Dimension(format!(
                "series `{}` has {} points for {} x values",
                s.label,
                s.ys.len(),
                xs.len()
            )));
        }
        if !s.ys.iter().all(|v| v.is_finite()) {
            return Err(D2eError::Contract("plot values must be finite".into()));
        }
    }
    if !xs.iter().all(|v| v.is_finite()) {
        return Err(D2eError::Contract("plot values must be finite".into()));
    }

    let (xmin, xmax) = padded_range(xs);
    let (lmin, lmax) = padded_range(&left.ys);
    let (rmin, rmax) = padded_range(&right.ys);
    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * PW;
    let pyl = |y: f64| MT + PH - (y - lmin) / (lmax - lmin) * PH;
    let pyr = |y: f64| MT + PH - (y - rmin) / (rmax - rmin) * PH;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"15\">{}</text>\n",
        ML + PW / 2.0,
        escape(title)
    ));
    // x axis plus both vertical axes
    svg.push_str(&format!(
        "<line x1=\"{ML:.2}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\" stroke=\"black\"/>\n",
        MT + PH,
        ML + PW
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML:.2}\" y1=\"{MT:.2}\" x2=\"{ML:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        MT + PH
    ));
    svg.push_str(&format!(
        "<line x1=\"{0:.2}\" y1=\"{MT:.2}\" x2=\"{0:.2}\" y2=\"{1:.2}\" stroke=\"black\"/>\n",
        ML + PW,
        MT + PH
    ));

    for i in 0..5 {
        let f = i as f64 / 4.0;
        let xv = xmin + f * (xmax - xmin);
        svg.push_str(&format!(
            "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"black\"/>\n",
            px(xv),
            MT + PH,
            MT + PH + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            px(xv),
            MT + PH + 18.0,
            tick_label(xv)
        ));
        let lv = lmin + f * (lmax - lmin);
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            ML - 8.0,
            pyl(lv) + 4.0,
            PALETTE[0],
            tick_label(lv)
        ));
        let rv = rmin + f * (rmax - rmin);
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"start\" font-family=\"monospace\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            ML + PW + 8.0,
            pyr(rv) + 4.0,
            PALETTE[1],
            tick_label(rv)
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
        ML + PW / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" fill=\"{}\" transform=\"rotate(-90 16 {0:.2})\">{}</text>\n",
        MT + PH / 2.0,
        PALETTE[0],
        escape(left_label)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" fill=\"{}\" transform=\"rotate(90 {0:.2} {1:.2})\">{}</text>\n",
        WIDTH - 12.0,
        MT + PH / 2.0,
        PALETTE[1],
        escape(right_label)
    ));

    for (si, (s, py)) in [(left, &pyl as &dyn Fn(f64) -> f64), (right, &pyr)].iter().enumerate() {
        let color = PALETTE[si];
        if xs.len() == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>\n",
                px(xs[0]),
                py(s.ys[0]),
                color
            ));
        } else {
            let points: Vec<String> = xs
                .iter()
                .zip(&s.ys)
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                color,
                points.join(" ")
            ));
        }
        let ly = MT + 14.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            ML + PW - 150.0,
            ML + PW - 126.0,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            ML + PW - 120.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

fn padded_range(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() || trimmed == "-" {
        "0".to_string()
    } else {
        trimmed.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
