//! Minimal deterministic SVG line and scatter plots with linear or log axes.

use std::fmt::Write;

pub const PALETTE: [&str; 16] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a", "#637939", "#8c6d31", "#7b4173", "#3182bd",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Markers,
    LineMarkers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub style: Style,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, color: &str, style: Style, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color: color.to_string(),
            style,
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
    /// Draw `y = x` across the panel.
    pub diagonal: bool,
    /// Fixed y range; data-driven when `None`.
    pub y_range: Option<(f64, f64)>,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_scale: Scale, y_scale: Scale) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_scale,
            y_scale,
            series: Vec::new(),
            diagonal: false,
            y_range: None,
        }
    }

    fn usable(&self, (x, y): (f64, f64)) -> bool {
        x.is_finite()
            && y.is_finite()
            && (self.x_scale == Scale::Linear || x > 0.0)
            && (self.y_scale == Scale::Linear || y > 0.0)
    }

    pub fn has_data(&self) -> bool {
        self.series.iter().any(|s| s.points.iter().any(|&p| self.usable(p)))
    }
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 46.0;

struct Mapping {
    scale: Scale,
    lo: f64,
    hi: f64,
    start: f64,
    end: f64,
}

impl Mapping {
    fn new(scale: Scale, lo: f64, hi: f64, start: f64, end: f64) -> Self {
        let (lo, hi) = match scale {
            Scale::Linear => (lo, hi),
            Scale::Log => (lo.log10(), hi.log10()),
        };
        Self { scale, lo, hi, start, end }
    }

    fn raw(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.log10(),
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.start + (self.raw(v) - self.lo) / (self.hi - self.lo) * (self.end - self.start)
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log => {
                let first = self.lo.ceil() as i32;
                let last = self.hi.floor() as i32;
                let step = ((last - first) / 6 + 1).max(1);
                (first..=last).step_by(step as usize).map(|e| 10f64.powi(e)).collect()
            }
            Scale::Linear => {
                let span = self.hi - self.lo;
                let raw_step = span / 5.0;
                let mag = 10f64.powf(raw_step.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * mag)
                    .find(|s| *s >= raw_step)
                    .unwrap_or(10.0 * mag);
                let mut t = (self.lo / step).ceil() * step;
                let mut out = Vec::new();
                while t <= self.hi + 1e-9 * span {
                    out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
                    t += step;
                }
                out
            }
        }
    }
}

fn padded_range(scale: Scale, values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    match scale {
        Scale::Log => {
            if lo == hi {
                lo /= 2.0;
                hi *= 2.0;
            }
            let pad = (hi / lo).powf(0.05);
            (lo / pad, hi * pad)
        }
        Scale::Linear => {
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    }
}

pub fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        let e = a.log10().floor() as i32;
        let m = v / 10f64.powi(e);
        if (m - m.round()).abs() < 1e-9 && m.round().abs() == 1.0 {
            return format!("{}1e{e}", if v < 0.0 { "-" } else { "" });
        }
        return format!("{m:.1}e{e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let x0 = ox + MARGIN_L;
    let x1 = ox + PANEL_W - MARGIN_R;
    let y0 = oy + PANEL_H - MARGIN_B;
    let y1 = oy + MARGIN_T;
    let pts = || {
        panel
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|&p| panel.usable(p))
    };
    let (xl, xh) = padded_range(panel.x_scale, pts().map(|p| p.0));
    let (yl, yh) = panel.y_range.unwrap_or_else(|| {
        if panel.diagonal {
            padded_range(panel.y_scale, pts().flat_map(|p| [p.0, p.1]))
        } else {
            padded_range(panel.y_scale, pts().map(|p| p.1))
        }
    });
    let (xl, xh) = if panel.diagonal { (xl.min(yl), xh.max(yh)) } else { (xl, xh) };
    let (yl, yh) = if panel.diagonal { (xl, xh) } else { (yl, yh) };
    let mx = Mapping::new(panel.x_scale, xl, xh, x0, x1);
    let my = Mapping::new(panel.y_scale, yl, yh, y0, y1);

    let _ = writeln!(
        out,
        r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000" stroke-width="1"/>"##,
        x1 - x0,
        y0 - y1
    );
    for t in mx.ticks() {
        let x = mx.map(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
            y0 + 4.0,
            y0 + 15.0,
            format_tick(t)
        );
    }
    for t in my.ticks() {
        let y = my.map(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 3.5,
            format_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        oy + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y0 + 34.0,
        escape(&panel.x_label)
    );
    let (lx, ly) = (ox + 14.0, (y0 + y1) / 2.0);
    let _ = writeln!(
        out,
        r#"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
        escape(&panel.y_label)
    );

    let _ = writeln!(
        out,
        r#"<clipPath id="clip{ox:.0}_{oy:.0}"><rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}"/></clipPath><g clip-path="url(#clip{ox:.0}_{oy:.0})">"#,
        x1 - x0,
        y0 - y1
    );
    if panel.diagonal {
        let lo = xl.max(yl);
        let hi = xh.min(yh);
        let _ = writeln!(
            out,
            r##"<line class="guide" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-dasharray="4 3"/>"##,
            mx.map(lo),
            my.map(lo),
            mx.map(hi),
            my.map(hi)
        );
    }
    for s in &panel.series {
        let mapped: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|&p| panel.usable(p))
            .map(|(x, y)| (mx.map(x), my.map(y)))
            .collect();
        if mapped.is_empty() {
            continue;
        }
        if matches!(s.style, Style::Line | Style::Dashed | Style::LineMarkers) && mapped.len() > 1 {
            let path: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if s.style == Style::Dashed { r#" stroke-dasharray="5 3""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                path.join(" "),
                s.color
            );
        }
        if matches!(s.style, Style::Markers | Style::LineMarkers) {
            for (x, y) in &mapped {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.8" fill="{}"/>"#, s.color);
            }
        }
    }
    let _ = writeln!(out, "</g>");

    let labelled: Vec<&Series> = panel.series.iter().filter(|s| !s.label.is_empty()).collect();
    for (i, s) in labelled.iter().enumerate().take(18) {
        let y = y1 + 10.0 + 11.0 * i as f64;
        let x = x1 - 70.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
            x + 12.0,
            s.color,
            x + 15.0,
            y + 3.0,
            escape(&s.label)
        );
    }
}

/// Panels laid out left to right.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let height = PANEL_H + 24.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="16" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, PANEL_W * i as f64, 24.0);
    }
    out.push_str("</svg>\n");
    out
}
