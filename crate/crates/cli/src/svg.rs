//! Hand-written SVG charts. Output depends only on the inputs; numbers are
//! printed with fixed precision so re-rendering gives identical bytes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;

/// Series colours: blue and green first, as in the composition-only versus
/// composition-plus-environment comparison.
const PALETTE: [&str; 6] = ["#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#d62728"];

pub struct Series {
    pub name: String,
    /// One value per group; `None` draws no bar.
    pub values: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick positions covering `[lo, hi]` with a 1/2/5 × 10ᵏ step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

/// Grouped bars: one group per `groups` entry, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, groups: &[String], series: &[Series]) -> String {
    let values = series.iter().flat_map(|s| s.values.iter().flatten().copied());
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    hi += pad;
    if lo < 0.0 {
        lo -= pad;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    header(&mut s, title);
    for t in ticks(lo, hi) {
        let _ = writeln!(s, r##"<line x1="{LEFT:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="#dddddd"/>"##, y(t), WIDTH - RIGHT);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y(t) + 4.0, label(t));
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        escape(y_label)
    );

    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + 0.1 * group_w;
        for (k, ser) in series.iter().enumerate() {
            if let Some(v) = ser.values.get(g).copied().flatten() {
                let (top, bottom) = (y(v.max(0.0)), y(v.min(0.0)));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {}</title></rect>"#,
                    x0 + k as f64 * bar_w,
                    top,
                    bar_w,
                    bottom - top,
                    PALETTE[k % PALETTE.len()],
                    escape(&ser.name),
                    label(v)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + (g as f64 + 0.5) * group_w,
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        );
    }
    let _ = writeln!(s, r#"<line x1="{LEFT:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="black"/>"#, y(0.0), WIDTH - RIGHT);

    for (k, ser) in series.iter().enumerate() {
        let lx = LEFT + k as f64 * 170.0;
        let ly = HEIGHT - 22.0;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#, ly - 10.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 16.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// True-versus-predicted scatter with the identity line.
pub fn scatter(title: &str, points: &[(f64, f64)]) -> String {
    let (mut lo, mut hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(t, p)| (a.min(t).min(p), b.max(t).max(p)));
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + plot_w * (v - lo) / (hi - lo);
    let py = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    header(&mut s, title);
    for t in ticks(lo, hi) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(t) + 4.0, label(t));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, px(t), TOP + plot_h + 18.0, label(t));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.1}" y="{TOP:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    );
    for &(t, p) in points {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" fill-opacity="0.7"/>"##, px(t), py(p));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">true</text>"#, LEFT + plot_w / 2.0, HEIGHT - 30.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">predicted</text>"#,
        TOP + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}
