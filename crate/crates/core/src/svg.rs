//! Plain SVG figures for sweep traces, baseline comparisons and vector fields.
//!
//! Output is a pure function of the input data: coordinates are printed with a fixed
//! number of decimals and no timestamps or random ids are emitted.

use std::fmt::Write as _;

use crate::landscape::{Arrow, LandscapeTrace};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const NMI_COLOUR: &str = "#d62728";
pub const TEFI_COLOUR: &str = "#1f77b4";
pub const NMI_OPT_COLOUR: &str = "#1f5fbf";
pub const TEFI_OPT_COLOUR: &str = "#e377c2";
pub const COMPOSITE_OPT_COLOUR: &str = "#2ca02c";

/// Linear map from a data interval onto a pixel interval.
#[derive(Debug, Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        Self {
            d0: lo,
            d1: hi,
            p0,
            p1,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| self.d0 + (self.d1 - self.d0) * i as f64 / n as f64)
            .collect()
    }
}

fn bounds(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

fn pad(lo: f64, hi: f64, frac: f64) -> (f64, f64) {
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - span * frac, hi + span * frac)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn label(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

struct Doc {
    body: String,
}

impl Doc {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            body,
            r#"<rect x="0" y="0" width="{WIDTH:.0}" height="{HEIGHT:.0}" fill="white"/>"#
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Self { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dash: bool) {
        let dash = if dash {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width:.2}"{dash}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, fill: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
            escape(s)
        );
    }

    fn rotated_text(&mut self, x: f64, y: f64, fill: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" fill="{fill}" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            escape(s)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn frame(&mut self) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{LEFT:.0}" y="{TOP:.0}" width="{:.0}" height="{:.0}" fill="none" stroke="black"/>"#,
            WIDTH - LEFT - RIGHT,
            HEIGHT - TOP - BOTTOM
        );
    }

    fn x_axis(&mut self, sx: &Scale, title: &str) {
        let y = HEIGHT - BOTTOM;
        for t in sx.ticks(5) {
            let x = sx.map(t);
            self.line(x, y, x, y + 5.0, "black", 1.0, false);
            self.text(x, y + 18.0, "middle", "black", &label(t));
        }
        self.text(WIDTH / 2.0, HEIGHT - 15.0, "middle", "black", title);
    }

    fn y_axis(&mut self, sy: &Scale, title: &str, right: bool, colour: &str) {
        let (x, dx, anchor, tx) = if right {
            (WIDTH - RIGHT, 5.0, "start", WIDTH - 18.0)
        } else {
            (LEFT, -5.0, "end", 18.0)
        };
        for t in sy.ticks(5) {
            let y = sy.map(t);
            self.line(x, y, x + dx, y, "black", 1.0, false);
            self.text(x + dx * 1.6, y + 4.0, anchor, colour, &label(t));
        }
        self.rotated_text(tx, (TOP + HEIGHT - BOTTOM) / 2.0, colour, title);
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn plot_x() -> (f64, f64) {
    (LEFT, WIDTH - RIGHT)
}

fn plot_y() -> (f64, f64) {
    (HEIGHT - BOTTOM, TOP)
}

/// NMI (left axis) and TEFI (right axis) against depth, with dashed lines at the
/// NMI-only, TEFI-only and composite optima.
pub fn landscape_svg(trace: &LandscapeTrace, title: &str) -> String {
    let ok: Vec<_> = trace.ok_points().collect();
    let (px0, px1) = plot_x();
    let (py0, py1) = plot_y();
    let (dmin, dmax) = bounds(trace.points.iter().map(|p| p.depth as f64));
    let sx = Scale::new(dmin, dmax, px0, px1);
    let (t0, t1) = bounds(ok.iter().filter_map(|p| p.tefi));
    let (t0, t1) = pad(t0, t1, 0.05);
    let st = Scale::new(t0, t1, py0, py1);
    let sn = Scale::new(0.0, 1.0, py0, py1);

    let mut doc = Doc::new(title);
    doc.frame();
    doc.x_axis(&sx, "embedding depth");
    doc.y_axis(&sn, "NMI", false, NMI_COLOUR);
    doc.y_axis(&st, "TEFI", true, TEFI_COLOUR);

    let nmi: Vec<_> = ok
        .iter()
        .filter_map(|p| Some((sx.map(p.depth as f64), sn.map(p.nmi?))))
        .collect();
    let tefi: Vec<_> = ok
        .iter()
        .filter_map(|p| Some((sx.map(p.depth as f64), st.map(p.tefi?))))
        .collect();
    doc.polyline(&tefi, TEFI_COLOUR);
    doc.polyline(&nmi, NMI_COLOUR);

    let markers = [
        (trace.argmax_nmi.as_ref(), NMI_OPT_COLOUR, "NMI optimum"),
        (Some(&trace.argmin_tefi), TEFI_OPT_COLOUR, "TEFI optimum"),
        (Some(&trace.composite_opt), COMPOSITE_OPT_COLOUR, "composite optimum"),
    ];
    let mut ly = TOP + 16.0;
    for (opt, colour, name) in markers {
        let Some(opt) = opt else { continue };
        let x = sx.map(opt.depth as f64);
        doc.line(x, py0, x, py1, colour, 1.5, true);
        doc.line(px1 - 170.0, ly - 4.0, px1 - 145.0, ly - 4.0, colour, 1.5, true);
        doc.text(px1 - 140.0, ly, "start", "black", &format!("{name} ({})", opt.depth));
        ly += 16.0;
    }
    doc.finish()
}

/// One row of the baseline-versus-optimized comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub k: usize,
    pub baseline_nmi: f64,
    pub optimized_nmi: f64,
}

pub const BASELINE_COLOUR: &str = "#7f7f7f";
pub const OPTIMIZED_COLOUR: &str = "#2ca02c";

/// Paired bars per item count: cross-sectional baseline and landscape-optimized NMI.
pub fn compare_svg(rows: &[CompareRow], title: &str) -> String {
    let (px0, px1) = plot_x();
    let (py0, py1) = plot_y();
    let sy = Scale::new(0.0, 1.0, py0, py1);
    let mut doc = Doc::new(title);
    doc.frame();
    doc.y_axis(&sy, "mean NMI", false, "black");
    let slot = (px1 - px0) / rows.len().max(1) as f64;
    let bar = slot * 0.35;
    for (i, r) in rows.iter().enumerate() {
        let x = px0 + slot * i as f64 + slot * 0.15;
        for (j, (v, colour)) in [
            (r.baseline_nmi, BASELINE_COLOUR),
            (r.optimized_nmi, OPTIMIZED_COLOUR),
        ]
        .into_iter()
        .enumerate()
        {
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            let top = sy.map(v);
            doc.rect(x + bar * j as f64, top, bar, py0 - top, colour);
        }
        doc.text(x + bar, py0 + 18.0, "middle", "black", &r.k.to_string());
    }
    doc.text(WIDTH / 2.0, HEIGHT - 15.0, "middle", "black", "items per dimension");
    doc.rect(px1 - 150.0, TOP + 8.0, 12.0, 12.0, BASELINE_COLOUR);
    doc.text(px1 - 132.0, TOP + 18.0, "start", "black", "cross-sectional");
    doc.rect(px1 - 150.0, TOP + 26.0, 12.0, 12.0, OPTIMIZED_COLOUR);
    doc.text(px1 - 132.0, TOP + 36.0, "start", "black", "optimized");
    doc.finish()
}

/// Dark blue through green to yellow, `t` in `[0, 1]`.
pub fn ramp_colour(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let i = STOPS
        .windows(2)
        .position(|w| t <= w[1].0)
        .unwrap_or(STOPS.len() - 2);
    let (a, ca) = STOPS[i];
    let (b, cb) = STOPS[i + 1];
    let f = (t - a) / (b - a);
    let c: Vec<u8> = (0..3)
        .map(|j| (ca[j] + (cb[j] - ca[j]) * f).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Arrows in the (TEFI, NMI) plane: colour encodes item count, stroke width encodes
/// depth position.
pub fn vector_field_svg(arrows: &[Arrow], title: &str) -> String {
    let (px0, px1) = plot_x();
    let (py0, py1) = plot_y();
    let (t0, t1) = bounds(arrows.iter().map(|a| a.tefi));
    let (n0, n1) = bounds(arrows.iter().map(|a| a.nmi));
    let (t0, t1) = pad(t0, t1, 0.05);
    let (n0, n1) = pad(n0, n1, 0.05);
    let sx = Scale::new(t0, t1, px0, px1);
    let sy = Scale::new(n0, n1, py0, py1);
    let (k0, k1) = bounds(arrows.iter().map(|a| a.k as f64));
    let (z0, z1) = bounds(arrows.iter().map(|a| a.depth_position));
    let unit = |lo: f64, hi: f64, v: f64| {
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    // longest arrow spans 6% of the plot width
    let longest = arrows
        .iter()
        .map(|a| {
            let dx = sx.map(a.tefi + a.d_tefi) - sx.map(a.tefi);
            let dy = sy.map(a.nmi + a.d_nmi) - sy.map(a.nmi);
            dx.hypot(dy)
        })
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let gain = if longest > 0.0 {
        (px1 - px0) * 0.06 / longest
    } else {
        0.0
    };

    let mut doc = Doc::new(title);
    doc.frame();
    doc.x_axis(&sx, "TEFI");
    doc.y_axis(&sy, "NMI", false, "black");
    for a in arrows {
        let x = sx.map(a.tefi);
        let y = sy.map(a.nmi);
        let dx = (sx.map(a.tefi + a.d_tefi) - x) * gain;
        let dy = (sy.map(a.nmi + a.d_nmi) - y) * gain;
        let colour = ramp_colour(unit(k0, k1, a.k as f64));
        let width = 0.5 + 2.5 * unit(z0, z1, a.depth_position);
        doc.line(x, y, x + dx, y + dy, &colour, width, false);
        let len = dx.hypot(dy);
        if len > 1e-9 {
            let (ux, uy) = (dx / len, dy / len);
            let head = 4.0 + width;
            let (hx, hy) = (x + dx, y + dy);
            let _ = writeln!(
                doc.body,
                r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{colour}"/>"#,
                hx,
                hy,
                hx - head * ux - head * 0.5 * uy,
                hy - head * uy + head * 0.5 * ux,
                hx - head * ux + head * 0.5 * uy,
                hy - head * uy - head * 0.5 * ux,
            );
        }
    }
    if k1 >= k0 {
        for (i, t) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            doc.rect(px1 - 90.0, y - 10.0, 12.0, 12.0, &ramp_colour(t));
            let k = k0 + (k1 - k0) * t;
            doc.text(px1 - 72.0, y, "start", "black", &format!("k = {k:.0}"));
        }
    }
    doc.finish()
}
