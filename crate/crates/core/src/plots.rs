//! Static SVG figures and their data tables.
//!
//! Numbers are written with fixed precision so identical inputs give
//! identical bytes.

use std::fmt::Write as _;

use statrs::distribution::{Continuous, Normal};

use crate::bad_data::GaussianFit;
use crate::critical::{ClusterModel, DaylightWindow, ElbowCurve, ElbowRule, Point2D};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
/// QQ plots keep at most this many points.
pub const QQ_MAX_POINTS: usize = 500;

fn f(x: f64) -> String {
    format!("{x:.2}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

impl Canvas {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y), body: String::new() }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn line(&mut self, class: &str, a: (f64, f64), b: (f64, f64), stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1.5"/>"#,
            f(self.px(a.0)),
            f(self.py(a.1)),
            f(self.px(b.0)),
            f(self.py(b.1))
        );
    }

    fn dot(&mut self, class: &str, p: (f64, f64), r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="{class}" cx="{}" cy="{}" r="{r}" fill="{fill}"/>"#,
            f(self.px(p.0)),
            f(self.py(p.1))
        );
    }

    fn polyline(&mut self, class: &str, pts: &[(f64, f64)], stroke: &str) {
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", f(self.px(x)), f(self.py(y)))).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    fn rect(&mut self, class: &str, x: (f64, f64), y: (f64, f64), fill: &str) {
        let (x0, x1) = (self.px(x.0), self.px(x.1));
        let (y0, y1) = (self.py(y.1), self.py(y.0));
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            f(x0),
            f(y0),
            f(x1 - x0),
            f(y1 - y0)
        );
    }

    fn finish(self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(out, r#"<path class="axes" d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
        for (value, pos) in [(self.x.0, l), (self.x.1, r)] {
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, f(pos), b + 16.0, f(value));
        }
        for (value, pos) in [(self.y.0, b), (self.y.1, t)] {
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, f(pos + 4.0), f(value));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Keeps at most `max` evenly spaced entries, always including both ends.
pub fn thin<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max || max < 2 {
        return items.to_vec();
    }
    let last = items.len() - 1;
    (0..max).map(|i| items[i * last / (max - 1)]).collect()
}

/// Normal QQ scatter with the identity line.
pub fn qq_svg(points: &[(f64, f64)], title: &str) -> String {
    let (lo, hi) = range(points.iter().flat_map(|&(a, b)| [a, b]));
    let mut c = Canvas::new((lo, hi), (lo, hi));
    c.line("identity", (c.x.0, c.x.0), (c.x.1, c.x.1), "#d62728");
    for &p in points {
        c.dot("qq-point", p, 2.0, "#1f77b4");
    }
    c.finish(title, "theoretical quantile (V)", "sample quantile (V)")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Expected count under the fitted Gaussian.
    pub expected: f64,
}

pub fn histogram(values: &[f64], fit: &GaussianFit, bins: usize) -> Vec<HistogramBin> {
    let (lo, hi) = range(values.iter().copied());
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let pdf = Normal::new(fit.mu, fit.sigma).ok();
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let (a, b) = (lo + i as f64 * width, lo + (i + 1) as f64 * width);
            let expected = pdf.map_or(0.0, |d| values.len() as f64 * width * d.pdf(0.5 * (a + b)));
            HistogramBin { lo: a, hi: b, count, expected }
        })
        .collect()
}

/// Histogram bars, the fitted Gaussian scaled to counts, and a vertical
/// marker at the tail threshold.
pub fn histogram_svg(bins: &[HistogramBin], threshold: f64, title: &str) -> String {
    let x = range(bins.iter().flat_map(|b| [b.lo, b.hi]).chain([threshold]));
    let top = bins.iter().map(|b| (b.count as f64).max(b.expected)).fold(0.0, f64::max);
    let mut c = Canvas::new(x, (0.0, top.max(1.0)));
    for b in bins {
        c.rect("bar", (b.lo, b.hi), (0.0, b.count as f64), "#9ecae1");
    }
    let curve: Vec<(f64, f64)> = bins.iter().map(|b| (0.5 * (b.lo + b.hi), b.expected)).collect();
    c.polyline("gaussian", &curve, "#d62728");
    c.line("tail-threshold", (threshold, 0.0), (threshold, c.y.1), "#2ca02c");
    c.finish(title, "voltage (V)", "samples")
}

/// SSE against k, the chosen k circled; the ratio rule also gets its
/// `ratio · SSE1` guide.
pub fn elbow_svg(curve: &ElbowCurve, ratio: f64, title: &str) -> String {
    let pts: Vec<(f64, f64)> = curve.sse_by_k.iter().enumerate().map(|(i, &s)| ((i + 1) as f64, s)).collect();
    let (_, hi) = range(curve.sse_by_k.iter().copied());
    let mut c = Canvas::new((1.0, pts.len().max(2) as f64), (0.0, hi));
    c.polyline("sse", &pts, "#1f77b4");
    for &p in &pts {
        c.dot("sse-point", p, 3.0, "#1f77b4");
    }
    if curve.rule == ElbowRule::SseRatio {
        let guide = ratio * curve.sse_by_k[0];
        c.line("ratio-guide", (c.x.0, guide), (c.x.1, guide), "#7f7f7f");
    }
    let chosen = (curve.chosen_k as f64, curve.sse(curve.chosen_k));
    let _ = writeln!(
        c.body,
        r##"<circle class="chosen-k" cx="{}" cy="{}" r="7" fill="none" stroke="#d62728" stroke-width="2"/>"##,
        f(c.px(chosen.0)),
        f(c.py(chosen.1))
    );
    c.finish(title, "number of clusters k", "SSE")
}

/// Candidates in the (time of day, voltage) plane colored by cluster, one
/// `centroid` cross per cluster, and the daylight window shaded.
pub fn scatter_svg(points: &[Point2D], model: &ClusterModel, daylight: DaylightWindow, title: &str) -> String {
    let y = range(points.iter().map(|p| p.origin.value));
    let mut c = Canvas::new((0.0, 1440.0), y);
    c.rect("daylight", (daylight.start, daylight.end), (c.y.0, c.y.1), "#fff7d6");
    for (p, &a) in points.iter().zip(&model.assignment) {
        c.dot(&format!("point cluster-{a}"), (p.minutes, p.origin.value), 2.0, PALETTE[a % PALETTE.len()]);
    }
    for (i, centroid) in model.centroids.iter().enumerate() {
        let (cx, cy) = (c.px(centroid.minutes), c.py(centroid.volts));
        let _ = writeln!(
            c.body,
            r#"<path class="centroid" data-cluster="{i}" d="M{},{} L{},{} M{},{} L{},{}" stroke="black" stroke-width="3"/>"#,
            f(cx - 7.0),
            f(cy - 7.0),
            f(cx + 7.0),
            f(cy + 7.0),
            f(cx - 7.0),
            f(cy + 7.0),
            f(cx + 7.0),
            f(cy - 7.0)
        );
    }
    c.finish(title, "time of day (min)", "voltage (V)")
}
