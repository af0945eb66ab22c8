//! Minimal self-contained SVG line plots and contour maps.

use std::fmt::Write;

use crate::regularizer::LandscapeGrid;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i32..=self.hi as i32)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let step = nice_step(self.hi - self.lo);
            let mut t = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while t <= self.hi + step * 1e-9 {
                out.push((t, tick_label(t)));
                t += step;
            }
            out
        }
    }
}

/// Line plot with one polyline and marker set per series. Non-positive x
/// values are dropped on a log axis.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_x || x > 0.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied().filter(keep)).collect();
    let xa = Axis::new(all.iter().map(|p| p.0), log_x);
    let ya = Axis::new(all.iter().map(|p| p.1), false);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + xa.frac(x) * pw;
    let sy = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for (v, label) in xa.ticks() {
        let x = sx(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
            TOP + ph,
            TOP + ph + 16.0
        );
    }
    for (v, label) in ya.ticks() {
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = ser.points.iter().copied().filter(keep).collect();
        let dash = if ser.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                path.join(" ")
            );
            for &(x, y) in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Marching-squares iso-lines of a landscape grid over a grey-scale map.
pub fn contour_svg(grid: &LandscapeGrid, levels: usize) -> String {
    let n = grid.resolution();
    let size = 400.0;
    let margin = 50.0;
    let cell = size / n as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &grid.values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || hi <= lo {
        hi = lo.max(0.0) + 1.0;
        lo = hi - 1.0;
    }
    let px = |i: f64| margin + i * cell;
    let py = |j: f64| margin + size - j * cell;

    let mut s = String::new();
    let w = size + 2.0 * margin;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="14">{} penalty landscape</text>"#,
        w / 2.0,
        escape(&grid.kind.to_string())
    );
    for j in 0..n {
        for i in 0..n {
            let v = grid.at(i, j);
            let t = if v.is_finite() { (v - lo) / (hi - lo) } else { 1.0 };
            let g = (255.0 - 175.0 * t).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},255)"/>"#,
                px(i as f64) - cell / 2.0,
                py(j as f64) - cell / 2.0,
                cell,
                cell
            );
        }
    }
    for l in 1..=levels {
        let level = lo + (hi - lo) * l as f64 / (levels + 1) as f64;
        let mut segs = Vec::new();
        for j in 0..n.saturating_sub(1) {
            for i in 0..n.saturating_sub(1) {
                let c = [grid.at(i, j), grid.at(i + 1, j), grid.at(i + 1, j + 1), grid.at(i, j + 1)];
                let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
                let mut cross = Vec::with_capacity(4);
                for e in 0..4 {
                    let (a, b) = (c[e], c[(e + 1) % 4]);
                    if (a < level) != (b < level) {
                        let t = (level - a) / (b - a);
                        let (ca, cb) = (corners[e], corners[(e + 1) % 4]);
                        cross.push((
                            i as f64 + ca.0 + t * (cb.0 - ca.0),
                            j as f64 + ca.1 + t * (cb.1 - ca.1),
                        ));
                    }
                }
                for pair in cross.chunks_exact(2) {
                    segs.push(format!(
                        "M{:.2} {:.2}L{:.2} {:.2}",
                        px(pair[0].0),
                        py(pair[0].1),
                        px(pair[1].0),
                        py(pair[1].1)
                    ));
                }
            }
        }
        if !segs.is_empty() {
            let _ = writeln!(
                s,
                r##"<path d="{}" fill="none" stroke="#222" stroke-width="0.8"/>"##,
                segs.concat()
            );
        }
    }
    let first = grid.axis[0];
    let last = grid.axis[n - 1];
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">x1 in [{}, {}]</text>"#,
        w / 2.0,
        w - 15.0,
        tick_label(first),
        tick_label(last)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">x2</text>"#,
        w / 2.0,
        w / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::{landscape_grid, RegKind};

    #[test]
    fn plot_is_well_formed_and_deterministic() {
        let series = vec![Series {
            label: "L1 <x>".into(),
            points: vec![(1e-4, 0.9), (1e-3, 0.8), (0.0, 0.5)],
            dashed: false,
        }];
        let a = line_plot_svg("t", "lambda", "acc", &series, true);
        assert_eq!(a, line_plot_svg("t", "lambda", "acc", &series, true));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("L1 &lt;x&gt;"));
        assert_eq!(a.matches("<circle").count(), 2);
    }

    #[test]
    fn contour_has_lines() {
        let g = landscape_grid(RegKind::L1, 1.0, 21).unwrap();
        let svg = contour_svg(&g, 6);
        assert_eq!(svg.matches("<path").count(), 6);
    }
}
