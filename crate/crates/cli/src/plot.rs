//! Minimal SVG line charts and histograms.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub markers: bool,
}

struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, scale: Scale) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (scale == Scale::Linear || *v > 0.0)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        match scale {
            Scale::Linear => {
                if hi - lo < 1e-300 {
                    (lo, hi) = (lo - 0.5, hi + 0.5);
                }
                let pad = 0.05 * (hi - lo);
                Axis { lo: lo - pad, hi: hi + pad, scale }
            }
            Scale::Log => {
                let (l, h) = (lo.log10().floor(), hi.log10().ceil());
                Axis { lo: l, hi: if h > l { h } else { l + 1.0 }, scale }
            }
        }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        let t = match self.scale {
            Scale::Linear => v,
            Scale::Log if v > 0.0 => v.log10(),
            Scale::Log => return None,
        };
        t.is_finite().then(|| (t - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        match self.scale {
            Scale::Log => {
                let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
                let mut out = Vec::new();
                let mut e = self.lo;
                while e <= self.hi + 1e-9 {
                    out.push((10f64.powf(e), format!("1e{}", e as i64)));
                    e += step;
                }
                out
            }
            Scale::Linear => {
                let raw = (self.hi - self.lo) / 6.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
                let mut v = (self.lo / step).ceil() * step;
                let mut out = Vec::new();
                while v <= self.hi + 1e-12 * step {
                    let digits = (-step.log10().floor()).max(0.0) as usize;
                    out.push((v, format!("{:.*}", digits, v + 0.0)));
                    v += step;
                }
                out
            }
        }
    }
}

fn px(ax: &Axis, v: f64) -> Option<f64> {
    ax.unit(v).map(|t| LEFT + t * (WIDTH - LEFT - RIGHT))
}

fn py(ax: &Axis, v: f64) -> Option<f64> {
    ax.unit(v).map(|t| HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, xa: &Axis, ya: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for (v, label) in xa.ticks() {
        if let Some(x) = px(xa, v) {
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#e0e0e0"/>"##);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, y0 + 16.0);
        }
    }
    for (v, label) in ya.ticks() {
        if let Some(y) = py(ya, v) {
            let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
            let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 6.0, y + 4.0);
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

pub fn line_chart(chart: &Chart, series: &[Series]) -> String {
    let xa = Axis::fit(series.iter().flat_map(|s| s.x.iter().copied()), chart.x_scale);
    let ya = Axis::fit(series.iter().flat_map(|s| s.y.iter().copied()), chart.y_scale);
    let mut out = String::new();
    frame(&mut out, chart.title, chart.x_label, chart.y_label, &xa, &ya);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .x
            .iter()
            .zip(s.y)
            .filter_map(|(x, y)| Some((px(&xa, *x)?, py(&ya, *y)?)))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#, path.join(" "));
        if chart.markers {
            for (x, y) in &pts {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
            }
        }
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT - 170.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 24.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(s.label));
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of `values` with `bins` equal-width bins.
pub fn histogram(title: &str, x_label: &str, values: &[f64], bins: usize) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let xa = Axis::fit(finite.iter().copied(), Scale::Linear);
    let bins = bins.max(1);
    let width = (xa.hi - xa.lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let b = (((v - xa.lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let ya = Axis { lo: 0.0, hi: top * 1.05, scale: Scale::Linear };
    let mut out = String::new();
    frame(&mut out, title, x_label, "count", &xa, &ya);
    for (b, c) in counts.iter().enumerate() {
        let lo = xa.lo + b as f64 * width;
        let (x0, x1) = (px(&xa, lo).unwrap(), px(&xa, lo + width).unwrap());
        let (y0, y1) = (py(&ya, 0.0).unwrap(), py(&ya, *c as f64).unwrap());
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" fill-opacity="0.7" stroke="white"/>"##,
            x1 - x0,
            y0 - y1
        );
    }
    out.push_str("</svg>\n");
    out
}
