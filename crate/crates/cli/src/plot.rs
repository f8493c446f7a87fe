//! Static SVG charts with fixed-precision coordinates, so equal data gives equal bytes.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

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

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, yticks: &[(f64, String)]) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=5 {
        let x = f.x0 + (f.x1 - f.x0) * k as f64 / 5.0;
        let px = f.px(x);
        let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{b:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, b + 18.0, tick_label(x));
    }
    for (y, label) in yticks {
        let py = f.py(*y);
        let _ = writeln!(out, r##"<line x1="{l:.1}" y1="{py:.1}" x2="{r:.1}" y2="{py:.1}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, l - 6.0, py + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 10.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn legend(out: &mut String, names: &[(&str, bool)]) {
    for (k, (name, dashed)) in names.iter().enumerate() {
        let y = TOP + 16.0 + 16.0 * k as f64;
        let x = WIDTH - RIGHT - 170.0;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"{dash}/>"#,
            x + 24.0,
            COLORS[k % COLORS.len()]
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 30.0, y + 4.0, escape(name));
    }
}

/// Line chart of several series on shared linear axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter()));
    let pad = 0.05 * (y1 - y0);
    let f = Frame { x0, x1, y0: y0 - pad, y1: y1 + pad };
    let mut out = String::new();
    header(&mut out, title);
    let yticks: Vec<(f64, String)> = (0..=5)
        .map(|k| {
            let y = f.y0 + (f.y1 - f.y0) * k as f64 / 5.0;
            (y, tick_label(y))
        })
        .collect();
    axes(&mut out, &f, xlabel, ylabel, &yticks);
    for (k, s) in series.iter().enumerate() {
        let mut points = String::new();
        for (x, y) in s.x.iter().zip(s.y) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", f.px(*x), f.py(y.clamp(f.y0, f.y1)));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            COLORS[k % COLORS.len()],
            points.trim_end()
        );
    }
    legend(&mut out, &series.iter().map(|s| (s.name, s.dashed)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Markers at `(k, σ_k)` on a log10 axis; non-positive values are left out.
pub fn log_spectrum(title: &str, spectra: &[(&str, &[f64])]) -> String {
    let positive = |v: &&f64| **v > 0.0 && v.is_finite();
    let logs: Vec<f64> = spectra.iter().flat_map(|(_, s)| s.iter().filter(positive).map(|v| v.log10())).collect();
    let (lo, hi) = bounds(logs.iter());
    let (lo, hi) = (lo.floor(), hi.ceil().max(lo.floor() + 1.0));
    let count = spectra.iter().map(|(_, s)| s.len()).max().unwrap_or(1).max(2);
    let f = Frame { x0: 0.5, x1: count as f64 + 0.5, y0: lo, y1: hi };
    let mut out = String::new();
    header(&mut out, title);
    let step = ((hi - lo) / 8.0).ceil().max(1.0);
    let mut yticks = Vec::new();
    let mut e = lo;
    while e <= hi {
        yticks.push((e, format!("1e{}", e as i64)));
        e += step;
    }
    let l = LEFT;
    let b = HEIGHT - BOTTOM;
    let _ = writeln!(out, r#"<rect x="{l:.1}" y="{TOP:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, WIDTH - RIGHT - l, b - TOP);
    for (y, label) in &yticks {
        let py = f.py(*y);
        let _ = writeln!(out, r##"<line x1="{l:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#dddddd"/>"##, WIDTH - RIGHT);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, l - 6.0, py + 4.0);
    }
    let every = count.div_ceil(20);
    for k in (1..=count).filter(|k| (k - 1) % every == 0) {
        let px = f.px(k as f64);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{k}</text>"#, b + 18.0);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">index k</text>"#, (l + WIDTH - RIGHT) / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">Hankel value (log scale)</text>"#,
        (TOP + b) / 2.0,
        (TOP + b) / 2.0
    );
    for (s, (_, values)) in spectra.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        for (k, v) in values.iter().enumerate().filter(|(_, v)| positive(v)) {
            let (px, py) = (f.px((k + 1) as f64), f.py(v.log10()));
            if s == 0 {
                let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3.5" fill="{color}"/>"#);
            } else {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="7" height="7" fill="none" stroke="{color}"/>"#,
                    px - 3.5,
                    py - 3.5
                );
            }
        }
    }
    legend(&mut out, &spectra.iter().map(|(n, _)| (*n, false)).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
