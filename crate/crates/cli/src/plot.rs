//! Minimal SVG line plot with a logarithmic y axis.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub color: &'a str,
    pub width: f64,
    pub dashed: bool,
}

const W: f64 = 900.0;
const H: f64 = 560.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Renders `series` against the iteration index. The y range covers the
/// positive values of the series flagged in `range_from` (one decade of margin);
/// other series are clipped to it.
pub fn log_plot(title: &str, series: &[Series], range_from: usize) -> String {
    let positive = |s: &Series| {
        s.values
            .iter()
            .copied()
            .filter(|v| *v > 0.0 && v.is_finite())
            .collect::<Vec<_>>()
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series.iter().take(range_from.max(1)) {
        for v in positive(s) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        lo = 1e-3;
        hi = 1.0;
    }
    let y_min = lo.log10().floor() - 1.0;
    let y_max = hi.log10().ceil() + 1.0;
    let n = series
        .iter()
        .map(|s| s.values.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x_of = |i: usize| LEFT + pw * i as f64 / (n - 1) as f64;
    let y_of = |v: f64| {
        let l = v.log10().clamp(y_min, y_max);
        TOP + ph * (y_max - l) / (y_max - y_min)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    for d in (y_min as i64)..=(y_max as i64) {
        let y = y_of(10f64.powi(d as i32));
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for t in 0..=5 {
        let i = (n - 1) * t / 5;
        let x = x_of(i);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{i}</text>"#,
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration i</text>"#,
        LEFT + pw / 2.0,
        H - 16.0
    );

    for (idx, s) in series.iter().enumerate() {
        let step = (s.values.len() / 2000).max(1);
        let mut points = String::new();
        for (i, &v) in s.values.iter().enumerate().step_by(step) {
            if v > 0.0 && v.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", x_of(i), y_of(v));
            }
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="{}"{dash} points="{}"/>"#,
            s.color,
            s.width,
            points.trim_end()
        );
        let ly = TOP + 14.0 + 18.0 * idx as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="{}"{dash}/>"#,
            lx + 24.0,
            s.color,
            s.width.max(1.5)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
