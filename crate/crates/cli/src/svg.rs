//! Minimal static SVG charts built from primitives.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Axis {
    pub label: String,
    pub log: bool,
}

impl Axis {
    pub fn linear(label: &str) -> Self {
        Axis { label: label.into(), log: false }
    }

    pub fn log(label: &str) -> Self {
        Axis { label: label.into(), log: true }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if self.log {
            (v > 0.0 && v.is_finite()).then(|| v.log10())
        } else {
            v.is_finite().then_some(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Line,
    Markers,
    Dashed,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

/// Whiskers at the minimum and maximum, a box between the quartiles and a
/// bar at the median.
#[derive(Debug, Clone)]
pub struct BoxGlyph {
    pub x: f64,
    pub quantiles: [f64; 5],
    pub series: usize,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    pub series: Vec<Series>,
    pub boxes: Vec<BoxGlyph>,
    /// Names for the colours used by `boxes`.
    pub box_labels: Vec<String>,
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

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log && hi - lo >= 1.0 {
        return (lo.ceil() as i64..=hi.floor() as i64).map(|k| k as f64).collect();
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut out = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + 1e-12 * step.abs() {
        out.push(t);
        t += step;
    }
    out
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            return format!("1e{}", r as i64);
        }
        return format!("{:.3}", 10f64.powf(v));
    }
    if v.abs() < 1e-12 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn new(title: &str, x: Axis, y: Axis) -> Self {
        Chart { title: title.into(), x, y, series: Vec::new(), boxes: Vec::new(), box_labels: Vec::new() }
    }

    pub fn with_series(mut self, name: &str, points: Vec<(f64, f64)>, style: Style) -> Self {
        self.series.push(Series { name: name.into(), points, style });
        self
    }

    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.boxes.iter().map(|b| b.x))
            .filter_map(|v| self.x.map(v));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.boxes.iter().flat_map(|b| b.quantiles))
            .filter_map(|v| self.y.map(v));
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);
        let f = Frame { x0, x1, y0, y1 };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let (bx0, bx1, by0, by1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{bx0}" y="{by0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            bx1 - bx0,
            by1 - by0
        );

        for t in ticks(x0, x1, self.x.log) {
            let px = f.px(t);
            let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{by0}" x2="{px:.2}" y2="{by1}" stroke="#dddddd"/>"##);
            let _ = writeln!(
                s,
                r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                by1 + 16.0,
                tick_label(t, self.x.log)
            );
        }
        for t in ticks(y0, y1, self.y.log) {
            let py = f.py(t);
            let _ = writeln!(s, r##"<line x1="{bx0}" y1="{py:.2}" x2="{bx1}" y2="{py:.2}" stroke="#dddddd"/>"##);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                bx0 - 6.0,
                py + 4.0,
                tick_label(t, self.y.log)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (bx0 + bx1) / 2.0,
            HEIGHT - 14.0,
            escape(&self.x.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (by0 + by1) / 2.0,
            escape(&self.y.label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64)> =
                series.points.iter().filter_map(|&(x, y)| Some((f.px(self.x.map(x)?), f.py(self.y.map(y)?)))).collect();
            match series.style {
                Style::Line | Style::Dashed => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let dash = if series.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                        path.join(" ")
                    );
                    for (x, y) in &pts {
                        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
                    }
                }
                Style::Markers => {
                    for (x, y) in &pts {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="none" stroke="{color}" stroke-width="1.5"/>"#
                        );
                    }
                }
            }
            legend(&mut s, i, color, &series.name);
        }

        let n_series = self.series.len();
        for b in &self.boxes {
            let color = COLORS[(n_series + b.series) % COLORS.len()];
            let Some(cx) = self.x.map(b.x).map(|v| f.px(v)) else { continue };
            let q: Vec<Option<f64>> = b.quantiles.iter().map(|v| self.y.map(*v).map(|v| f.py(v))).collect();
            let (Some(lo), Some(q1), Some(med), Some(q3), Some(hi)) = (q[0], q[1], q[2], q[3], q[4]) else { continue };
            let cx = cx + (b.series as f64 - 0.5 * (self.box_labels.len().max(1) - 1) as f64) * 10.0;
            let half = 4.0;
            let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="{color}"/>"#);
            for w in [lo, hi] {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{w:.2}" x2="{:.2}" y2="{w:.2}" stroke="{color}"/>"#,
                    cx - half,
                    cx + half
                );
            }
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{:.2}" fill="white" stroke="{color}"/>"#,
                cx - half,
                q3.min(q1),
                2.0 * half,
                (q1 - q3).abs()
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{med:.2}" x2="{:.2}" y2="{med:.2}" stroke="{color}" stroke-width="2"/>"#,
                cx - half,
                cx + half
            );
        }
        for (j, name) in self.box_labels.iter().enumerate() {
            legend(&mut s, n_series + j, COLORS[(n_series + j) % COLORS.len()], name);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn legend(s: &mut String, i: usize, color: &str, name: &str) {
    let y = TOP + 10.0 + 18.0 * i as f64;
    let x = WIDTH - RIGHT + 12.0;
    let _ = writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 18.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(name));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let mut chart = Chart::new("errors <test>", Axis::linear("n"), Axis::log("err")).with_series(
            "u",
            vec![(1.0, 0.5), (2.0, 0.05), (3.0, 0.0)],
            Style::Line,
        );
        chart.boxes.push(BoxGlyph { x: 2.0, quantiles: [0.01, 0.02, 0.03, 0.04, 0.05], series: 0 });
        chart.box_labels.push("du".into());
        let svg = chart.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("&lt;test&gt;"));
        assert!(svg.contains("<polyline"));
        // the zero error cannot be drawn on a log axis and is skipped
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn log_ticks_are_decades() {
        assert_eq!(ticks(-2.3, 0.4, true), vec![-2.0, -1.0, 0.0]);
    }

    #[test]
    fn linear_ticks_cover_range() {
        let t = ticks(0.0, 10.0, false);
        assert_eq!(t.first(), Some(&0.0));
        assert_eq!(t.last(), Some(&10.0));
    }
}
