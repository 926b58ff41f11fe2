//! Minimal standalone SVG charts: line overlays, scatter plots and violins.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick positions at a 1-2-5 step covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, usize) {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|i| i as f64 * step).collect(), decimals)
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        let pad = (y1 - y0) * 0.05;
        Self {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let d = lo.abs().max(1.0) * 0.5;
        return (lo - d, hi + d);
    }
    (lo, hi)
}

fn open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x_left, x_right, y_bottom, y_top) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = write!(
        out,
        r#"<path d="M{x_left},{y_top} V{y_bottom} H{x_right}" fill="none" stroke="black"/>"#
    );
    let (yt, yd) = nice_ticks(f.y0, f.y1, 6);
    for y in yt {
        let py = f.py(y);
        let _ = write!(
            out,
            r##"<line x1="{}" y1="{py:.2}" x2="{x_left}" y2="{py:.2}" stroke="black"/><line x1="{x_left}" y1="{py:.2}" x2="{x_right}" y2="{py:.2}" stroke="#eeeeee"/><text x="{}" y="{:.2}" text-anchor="end">{y:.yd$}</text>"##,
            x_left - 5.0,
            x_left - 8.0,
            py + 4.0
        );
    }
    if x_ticks {
        let (xt, xd) = nice_ticks(f.x0, f.x1, 8);
        for x in xt {
            let px = f.px(x);
            let _ = write!(
                out,
                r#"<line x1="{px:.2}" y1="{y_bottom}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{x:.xd$}</text>"#,
                y_bottom + 5.0,
                y_bottom + 19.0
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x_left + x_right) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y_top + y_bottom) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = W - RIGHT - 150.0;
        let _ = write!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            color(i),
            x + 26.0,
            y + 4.0,
            escape(name)
        );
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    /// Gaps (`None`) break the line.
    pub points: Vec<(f64, Option<f64>)>,
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(all.clone().map(|p| p.0), all.filter_map(|p| p.1));
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, x_label, y_label, true);
    for (i, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            match y {
                Some(y) => {
                    let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, f.px(x), f.py(y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = write!(
            out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            color(i)
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Scatter plot with an optional least-squares line `(slope, intercept)`.
pub fn scatter_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], fit: Option<(f64, f64)>) -> String {
    let f = Frame::new(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, x_label, y_label, true);
    for &(x, y) in points {
        let _ = write!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.7"/>"#,
            f.px(x),
            f.py(y),
            color(0)
        );
    }
    if let Some((slope, intercept)) = fit {
        let at = |x: f64| (slope * x + intercept).clamp(f.y0, f.y1);
        let _ = write!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
            f.px(f.x0),
            f.py(at(f.x0)),
            f.px(f.x1),
            f.py(at(f.x1)),
            color(1)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Gaussian kernel density on a grid spanning the data, with Silverman's
/// bandwidth.
pub fn kde(values: &[f64], grid: usize) -> Vec<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let (lo, hi) = bounds(values.iter().copied());
    let bw = if sd > 0.0 {
        1.06 * sd * (n as f64).powf(-0.2)
    } else {
        (hi - lo) * 0.05
    };
    let steps = grid.max(2) - 1;
    (0..=steps)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let d = values.iter().map(|v| (-0.5 * ((x - v) / bw).powi(2)).exp()).sum::<f64>();
            (x, d / (n as f64 * bw * (2.0 * std::f64::consts::PI).sqrt()))
        })
        .collect()
}

/// One violin per group, with median (white dot) and mean (black bar).
pub fn violin_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let f = Frame::new(
        [0.0, groups.len() as f64].into_iter(),
        groups.iter().flat_map(|g| g.1.iter().copied()),
    );
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, "", y_label, false);
    let slot = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = write!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            escape(name)
        );
        if values.is_empty() {
            continue;
        }
        let density = kde(values, 64);
        let peak = density.iter().map(|d| d.1).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let half = slot * 0.4;
        let mut d = String::new();
        for (j, &(y, dens)) in density.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, cx + dens / peak * half, f.py(y));
        }
        for &(y, dens) in density.iter().rev() {
            let _ = write!(d, "L{:.2},{:.2} ", cx - dens / peak * half, f.py(y));
        }
        let _ = write!(
            out,
            r#"<path d="{}Z" fill="{}" fill-opacity="0.35" stroke="{}"/>"#,
            d,
            color(i),
            color(i)
        );
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        let mean = values.iter().sum::<f64>() / m as f64;
        let _ = write!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/><circle cx="{cx:.2}" cy="{:.2}" r="4" fill="white" stroke="black"/>"#,
            cx - half * 0.5,
            f.py(mean),
            cx + half * 0.5,
            f.py(mean),
            f.py(median)
        );
    }
    out.push_str("</svg>\n");
    out
}
