//! Minimal SVG line/band/interval charts for the estimate report.

use std::fmt::Write;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Pointwise `(lo, hi)` band drawn under the line.
    pub band: Option<Vec<(f64, f64)>>,
    /// Draw vertical interval bars instead of a band.
    pub bars: Option<Vec<(f64, f64)>>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
    pub zero_line: bool,
}

const W: f64 = 380.0;
const H: f64 = 300.0;
const ML: f64 = 60.0;
const MR: f64 = 15.0;
const MT: f64 = 30.0;
const MB: f64 = 45.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, x0: f64) {
    let xs = panel.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (xmin, xmax) = extent(xs);
    let mut ys: Vec<f64> = Vec::new();
    for s in &panel.series {
        ys.extend(s.points.iter().map(|p| p.1));
        for iv in s.band.iter().chain(s.bars.iter()) {
            ys.extend(iv.iter().flat_map(|&(a, b)| [a, b]));
        }
    }
    if panel.zero_line {
        ys.push(0.0);
    }
    let (ymin, ymax) = extent(ys.into_iter());
    let px = |x: f64| x0 + ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
    let py = |y: f64| MT + (ymax - y) / (ymax - ymin) * (H - MT - MB);

    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{MT:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        x0 + ML,
        W - ML - MR,
        H - MT - MB
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        x0 + W / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        x0 + ML + (W - ML - MR) / 2.0,
        H - 8.0,
        escape(&panel.x_label)
    );
    for i in 0..=4 {
        let y = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{:.3}</text>"#,
            x0 + ML - 4.0,
            py(y) + 3.0,
            y
        );
        let x = xmin + (xmax - xmin) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{:.2}</text>"#,
            px(x),
            H - MB + 14.0,
            x
        );
    }
    if panel.zero_line {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            x0 + ML,
            py(0.0),
            x0 + W - MR,
            py(0.0)
        );
    }
    for (k, s) in panel.series.iter().enumerate() {
        if let Some(band) = &s.band {
            let mut pts: Vec<String> = s
                .points
                .iter()
                .zip(band)
                .map(|(p, b)| format!("{:.2},{:.2}", px(p.0), py(b.1)))
                .collect();
            pts.extend(
                s.points
                    .iter()
                    .zip(band)
                    .rev()
                    .map(|(p, b)| format!("{:.2},{:.2}", px(p.0), py(b.0))),
            );
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" "),
                s.color
            );
        }
        if let Some(bars) = &s.bars {
            for (p, b) in s.points.iter().zip(bars) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
                    py(b.0),
                    py(b.1),
                    s.color,
                    x = px(p.0)
                );
            }
        } else {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                pts.join(" "),
                s.color
            );
        }
        for p in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                px(p.0),
                py(p.1),
                s.color
            );
        }
        let ly = MT + 12.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="10" fill="{}">{}</text>"#,
            x0 + ML + 6.0,
            s.color,
            escape(&s.name)
        );
    }
}

/// Renders panels side by side. `comment` goes into a leading XML comment.
pub fn render(panels: &[Panel], comment: &str) -> String {
    let width = W * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(out, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{H:.0}" viewBox="0 0 {width:.0} {H:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_panel_and_handles_flat_series() {
        let panel = |title: &str| Panel {
            title: title.into(),
            x_label: "t".into(),
            series: vec![Series {
                name: "a<b".into(),
                color: "black",
                points: vec![(1.0, 0.0), (2.0, 0.0)],
                band: Some(vec![(0.0, 0.0), (0.0, 0.0)]),
                bars: None,
            }],
            zero_line: true,
        };
        let svg = render(&[panel("one"), panel("two"), panel("three")], "x -- y");
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
        assert!(svg.starts_with("<!-- x - - y -->"));
    }
}
