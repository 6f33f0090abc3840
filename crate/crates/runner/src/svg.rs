//! Minimal SVG charts. The CSV files next to each chart are the
//! authoritative data; these are for eyeballing.

use std::fmt::Write;

use gcalab::metrics::FiveNumber;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Markers,
    Line,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Data range padded by 5%, widened when degenerate.
fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label),
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: bool) {
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let y = f.py(yv);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            W - RIGHT,
            LEFT - 5.0,
            y + 4.0,
            fmt_tick(yv)
        );
        if x_ticks {
            let xv = f.x.0 + t * (f.x.1 - f.x.0);
            let x = f.px(xv);
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 16.0,
                fmt_tick(xv)
            );
        }
    }
}

/// Scatter or line chart; each series gets its own colour and a legend
/// entry.
pub fn chart(c: &Chart) -> String {
    let all = || c.series.iter().flat_map(|s| s.points.iter());
    let f = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| p.1)),
    };
    let mut out = String::new();
    open(&mut out, &c.title, &c.x_label, &c.y_label);
    axes(&mut out, &f, true);
    for (i, s) in c.series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| (f.px(x), f.py(y)))
            .collect();
        if s.style == Style::Line && pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for (x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{colour}" fill-opacity="0.8"/>"#);
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="4" fill="{colour}"/><text x="{}" y="{}">{}</text>"#,
            LEFT + 12.0,
            ly - 4.0,
            LEFT + 20.0,
            ly,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One box per group: whiskers at min and max, box from q1 to q3, a bar
/// at the median.
pub fn boxplot(title: &str, y_label: &str, groups: &[(String, FiveNumber)]) -> String {
    let f = Frame {
        x: (0.0, groups.len().max(1) as f64),
        y: range(groups.iter().flat_map(|(_, s)| [s.min, s.max])),
    };
    let mut out = String::new();
    open(&mut out, title, "", y_label);
    axes(&mut out, &f, false);
    let slot = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (label, s)) in groups.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let cx = f.px(i as f64 + 0.5);
        let half = (slot * 0.25).min(40.0);
        let (ymin, yq1, ymed, yq3, ymax) = (f.py(s.min), f.py(s.q1), f.py(s.median), f.py(s.q3), f.py(s.max));
        let _ = writeln!(
            out,
            r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{ymax:.1}" y2="{yq3:.1}" stroke="#333"/>
<line x1="{cx:.1}" x2="{cx:.1}" y1="{yq1:.1}" y2="{ymin:.1}" stroke="#333"/>
<line x1="{:.1}" x2="{:.1}" y1="{ymax:.1}" y2="{ymax:.1}" stroke="#333"/>
<line x1="{:.1}" x2="{:.1}" y1="{ymin:.1}" y2="{ymin:.1}" stroke="#333"/>
<rect x="{:.1}" y="{yq3:.1}" width="{:.1}" height="{:.1}" fill="{colour}" fill-opacity="0.35" stroke="{colour}"/>
<line x1="{:.1}" x2="{:.1}" y1="{ymed:.1}" y2="{ymed:.1}" stroke="{colour}" stroke-width="2"/>
<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"##,
            cx - half / 2.0,
            cx + half / 2.0,
            cx - half / 2.0,
            cx + half / 2.0,
            cx - half,
            2.0 * half,
            (yq1 - yq3).max(0.5),
            cx - half,
            cx + half,
            H - BOTTOM + 16.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
