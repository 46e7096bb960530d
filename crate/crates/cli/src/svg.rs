//! Minimal deterministic SVG charts. Output depends only on the input
//! numbers: no timestamps, no randomness, fixed float formatting.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Pixel coordinates are rounded to 0.01 so files stay stable and small.
fn px(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

/// `n` evenly spaced values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 {
            lo.abs() * 0.05
        } else {
            0.5
        };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw the x axis in log2 scale.
    pub log2_x: bool,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 34.0;
const BOTTOM: f64 = 48.0;

/// Side-by-side line charts sharing one legend.
pub fn line_panels(title: &str, panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let legend: Vec<&str> = {
        let mut seen = Vec::new();
        for p in panels {
            for s in &p.series {
                if !seen.contains(&s.label.as_str()) {
                    seen.push(s.label.as_str());
                }
            }
        }
        seen
    };
    let height = PANEL_H + 24.0 + 18.0 * legend.len() as f64;
    let mut out = header(width, height);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        px(width / 2.0),
        esc(title)
    );
    for (k, p) in panels.iter().enumerate() {
        panel(&mut out, p, PANEL_W * k as f64, 10.0, &legend);
    }
    for (i, label) in legend.iter().enumerate() {
        let y = PANEL_H + 24.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            px(LEFT),
            px(y),
            px(LEFT + 24.0),
            px(y),
            color(i),
            px(LEFT + 30.0),
            px(y + 4.0),
            esc(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn panel(out: &mut String, p: &Panel, x0: f64, y0: f64, legend: &[&str]) {
    let tx = |x: f64| if p.log2_x { x.log2() } else { x };
    let (xlo, xhi) = padded_range(
        p.series
            .iter()
            .flat_map(|s| s.points.iter().map(|&(x, _)| tx(x))),
    );
    let (ylo, yhi) = padded_range(
        p.series
            .iter()
            .flat_map(|s| s.points.iter().map(|&(_, y)| y)),
    );
    let (pl, pr, pt, pb) = (
        x0 + LEFT,
        x0 + PANEL_W - RIGHT,
        y0 + TOP,
        y0 + PANEL_H - BOTTOM,
    );
    let sx = |x: f64| pl + (tx(x) - xlo) / (xhi - xlo) * (pr - pl);
    let sy = |y: f64| pb - (y - ylo) / (yhi - ylo) * (pb - pt);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        px((pl + pr) / 2.0),
        px(y0 + 18.0),
        esc(&p.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        px(pl),
        px(pt),
        px(pr - pl),
        px(pb - pt)
    );
    for v in ticks(ylo, yhi, 5) {
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"##,
            px(pl),
            px(y),
            px(pr),
            px(y),
            px(pl - 4.0),
            px(y + 3.0),
            tick_label(v)
        );
    }
    for v in ticks(xlo, xhi, 5) {
        let label = if p.log2_x {
            tick_label(v.exp2())
        } else {
            tick_label(v)
        };
        let x = pl + (v - xlo) / (xhi - xlo) * (pr - pl);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            px(x),
            px(pb + 14.0),
            label
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        px((pl + pr) / 2.0),
        px(pb + 32.0),
        esc(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate({} {}) rotate(-90)" text-anchor="middle" font-size="11">{}</text>"#,
        px(x0 + 14.0),
        px((pt + pb) / 2.0),
        esc(&p.y_label)
    );
    for s in &p.series {
        let ci = legend.iter().position(|l| *l == s.label).unwrap_or(0);
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(ci),
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{}" cy="{}" r="2.2" fill="{}"/>"#,
                px(sx(x)),
                px(sy(y)),
                color(ci)
            );
        }
    }
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w = px(width),
        h = px(height)
    )
}

/// Polar trace: each point sits at angle `angle_deg` and radius `radius`.
///
/// The trace path is written in data coordinates (`x = r cos θ`,
/// `y = r sin θ`, full precision) and mapped to pixels by a transform, so
/// the radius can be recovered exactly from the path data.
pub fn polar(title: &str, angle_deg: &[f64], radius: &[f64], lambdas: &[f64]) -> String {
    let size = 420.0;
    let (cx, cy, span) = (50.0, size - 50.0, size - 100.0);
    let pts: Vec<(f64, f64)> = angle_deg
        .iter()
        .zip(radius)
        .map(|(&a, &r)| {
            let t = a.to_radians();
            (r * t.cos(), r * t.sin())
        })
        .collect();
    let extent = pts
        .iter()
        .fold(0.0f64, |m, &(x, y)| m.max(x.abs()).max(y.abs()));
    let scale = if extent > 0.0 { span / extent } else { 1.0 };
    let r_max = radius.iter().copied().fold(0.0f64, f64::max);
    let a_max = angle_deg.iter().copied().fold(0.0f64, f64::max);

    let mut out = header(size, size);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        px(size / 2.0),
        esc(title)
    );
    // axes: the A direction (angle 0) and the direction of the last point
    let _ = writeln!(
        out,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999"/>"##,
        px(cx),
        px(cy),
        px(cx + span),
        px(cy)
    );
    if let Some(&(x, y)) = pts.last() {
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ccc" stroke-dasharray="4 3"/>"##,
            px(cx),
            px(cy),
            px(cx + x * scale),
            px(cy - y * scale)
        );
    }
    let d: Vec<String> = pts
        .iter()
        .enumerate()
        .map(|(i, (x, y))| format!("{}{x} {y}", if i == 0 { "M" } else { "L" }))
        .collect();
    let _ = writeln!(
        out,
        r##"<path id="trace" transform="matrix({s} 0 0 -{s} {cx} {cy})" fill="none" stroke="#1f77b4" stroke-width="2" vector-effect="non-scaling-stroke" d="{d}"/>"##,
        s = scale,
        cx = cx,
        cy = cy,
        d = d.join(" ")
    );
    for (i, (&(x, y), l)) in pts.iter().zip(lambdas).enumerate() {
        if i == 0 || i + 1 == pts.len() || (l * 4.0).fract() == 0.0 {
            let _ = writeln!(
                out,
                r##"<circle cx="{}" cy="{}" r="2.5" fill="#d62728"/><text x="{}" y="{}" font-size="9">λ={}</text>"##,
                px(cx + x * scale),
                px(cy - y * scale),
                px(cx + x * scale + 4.0),
                px(cy - y * scale - 4.0),
                tick_label(*l)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11">radius: Manhattan distance from A (max {})</text>"#,
        px(cx),
        px(size - 22.0),
        tick_label(r_max)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11">angle: degrees from A (max {})</text>"#,
        px(cx),
        px(size - 8.0),
        tick_label(a_max)
    );
    out.push_str("</svg>\n");
    out
}

/// Labeled scatter plot.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(String, f64, f64)]) -> String {
    let (w, h) = (PANEL_W + 120.0, PANEL_H);
    let (xlo, xhi) = padded_range(points.iter().map(|p| p.1));
    let (ylo, yhi) = padded_range(points.iter().map(|p| p.2));
    let (pl, pr, pt, pb) = (LEFT, w - RIGHT - 120.0, TOP, h - BOTTOM);
    let sx = |x: f64| pl + (x - xlo) / (xhi - xlo) * (pr - pl);
    let sy = |y: f64| pb - (y - ylo) / (yhi - ylo) * (pb - pt);
    let mut out = header(w, h);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        px(w / 2.0),
        esc(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
        px(pl),
        px(pt),
        px(pr - pl),
        px(pb - pt)
    );
    for v in ticks(ylo, yhi, 5) {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            px(pl - 4.0),
            px(sy(v) + 3.0),
            tick_label(v)
        );
    }
    for v in ticks(xlo, xhi, 5) {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            px(sx(v)),
            px(pb + 14.0),
            tick_label(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        px((pl + pr) / 2.0),
        px(pb + 32.0),
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle" font-size="11">{}</text>"#,
        px((pt + pb) / 2.0),
        esc(y_label)
    );
    for (i, (label, x, y)) in points.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="3.5" fill="{}"/><text x="{}" y="{}" font-size="9">{}</text>"#,
            px(sx(*x)),
            px(sy(*y)),
            color(i),
            px(sx(*x) + 5.0),
            px(sy(*y) - 4.0),
            esc(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Parses the `d` attribute of the `trace` path written by [`polar`] back
/// into data-space points.
pub fn polar_path_points(svg: &str) -> Option<Vec<(f64, f64)>> {
    let start = svg.find(r#"id="trace""#)?;
    let rest = &svg[start..];
    let d0 = rest.find(" d=\"")? + 4;
    let d1 = rest[d0..].find('"')? + d0;
    let nums: Vec<f64> = rest[d0..d1]
        .split(|c: char| c == 'M' || c == 'L' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    if !nums.len().is_multiple_of(2) {
        return None;
    }
    Some(nums.chunks(2).map(|c| (c[0], c[1])).collect())
}
