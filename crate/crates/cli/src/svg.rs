//! Static SVG line charts, written by hand so plotting stays dependency-free
//! and byte-deterministic. Two axis modes cover both figure styles: log-y
//! for convergence histories, linear for trade-off curves.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 11] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79",
];

const W: f64 = 880.0;
const H: f64 = 540.0;
const ML: f64 = 78.0;
const MR: f64 = 190.0;
const MT: f64 = 46.0;
const MB: f64 = 58.0;

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s.is_empty() { "0".into() } else { s.into() }
    }
}

/// Tick positions for a linear axis: a 1/2/5 step covering [lo, hi].
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(t);
        t += step;
    }
    out
}

/// Decade ticks for a log axis, thinned to at most eight labels.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let lo_exp = lo.log10().floor() as i32;
    let hi_exp = hi.log10().ceil() as i32;
    let stride = (((hi_exp - lo_exp).max(1) as usize) / 8).max(1);
    (lo_exp..=hi_exp)
        .step_by(stride)
        .map(|e| 10f64.powi(e))
        .collect()
}

/// Renders series as polylines. With `log_y` the y axis is decimal-log and
/// non-positive values are dropped from the drawing (they cannot appear on
/// the axis); the numbers themselves live in the CSVs, the chart is only a
/// view.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_y: bool,
    series: &[Series],
) -> String {
    let pw = W - ML - MR;
    let ph = H - MT - MB;

    let usable = |y: f64| y.is_finite() && (!log_y || y > 0.0);
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && usable(y) {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = if log_y { 0.1 } else { 0.0 };
        y_max = 1.0;
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    if log_y {
        // A floor keeps denormal tails from stretching the axis into noise.
        y_min = y_min.max(y_max * 1e-16).max(1e-300);
        if y_max <= y_min {
            y_max = 10.0 * y_min;
        }
    } else {
        if y_max <= y_min {
            y_max = y_min + 1.0;
        }
        let pad = 0.05 * (y_max - y_min);
        y_min -= pad;
        y_max += pad;
    }

    let x_of = |x: f64| ML + (x - x_min) / (x_max - x_min) * pw;
    let y_of = |y: f64| {
        let f = if log_y {
            (y.log10() - y_min.log10()) / (y_max.log10() - y_min.log10())
        } else {
            (y - y_min) / (y_max - y_min)
        };
        MT + (1.0 - f) * ph
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{W}" height="{H}" fill="#ffffff"/>
<text x="{:.1}" y="26" font-family="sans-serif" font-size="17" text-anchor="middle">{}</text>"##,
        ML + pw / 2.0,
        escape(title)
    );

    // Axes box.
    let _ = writeln!(
        out,
        r##"<rect x="{ML}" y="{MT}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#000000"/>"##
    );

    let x_ticks = linear_ticks(x_min, x_max);
    for t in &x_ticks {
        let x = x_of(*t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{0:.1}" x2="{x:.2}" y2="{1:.1}" stroke="#cccccc"/>
<text x="{x:.2}" y="{2:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{3}</text>"##,
            MT,
            MT + ph,
            MT + ph + 18.0,
            fmt_tick(*t)
        );
    }
    let y_ticks = if log_y {
        log_ticks(y_min, y_max)
    } else {
        linear_ticks(y_min, y_max)
    };
    for t in &y_ticks {
        if *t < y_min || *t > y_max {
            continue;
        }
        let y = y_of(*t);
        let _ = writeln!(
            out,
            r##"<line x1="{0:.1}" y1="{y:.2}" x2="{1:.1}" y2="{y:.2}" stroke="#cccccc"/>
<text x="{2:.1}" y="{3:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{4}</text>"##,
            ML,
            ML + pw,
            ML - 8.0,
            y + 4.0,
            fmt_tick(*t)
        );
    }

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        ML + pw / 2.0,
        H - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        MT + ph / 2.0,
        MT + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            if !(x.is_finite() && usable(y)) {
                continue;
            }
            let _ = write!(path, "{:.2},{:.2} ", x_of(x), y_of(y));
        }
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#,
                path.trim_end()
            );
        }
        let ly = MT + 16.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{0:.1}" y1="{ly:.1}" x2="{1:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>
<text x="{2:.1}" y="{3:.1}" font-family="sans-serif" font-size="13">{4}</text>"#,
            W - MR + 14.0,
            W - MR + 44.0,
            W - MR + 50.0,
            ly + 4.0,
            escape(&s.name)
        );
    }

    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
