//! Standalone SVG scatter plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::io::csv::PointTable;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterStyle {
    pub width: u32,
    pub height: u32,
    pub point_radius: f64,
    /// Half-width of the square data window centred on the origin.
    pub extent: f64,
    pub title: Option<String>,
}

impl Default for ScatterStyle {
    fn default() -> Self {
        Self {
            width: 480,
            height: 480,
            point_radius: 1.5,
            extent: 3.0,
            title: None,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders points grouped by label, one `<g class="mode-…">` per label
/// (a single `points` group when unlabelled).
pub fn scatter_svg(table: &PointTable, style: &ScatterStyle) -> String {
    let (w, h) = (f64::from(style.width), f64::from(style.height));
    let e = style.extent;
    let sx = |x: f64| (x + e) / (2.0 * e) * w;
    let sy = |y: f64| (e - y) / (2.0 * e) * h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        s,
        r##"<g class="axes" stroke="#444444" stroke-width="1"><line x1="0" y1="{:.2}" x2="{w:.2}" y2="{:.2}"/><line x1="{:.2}" y1="0" x2="{:.2}" y2="{h:.2}"/></g>"##,
        sy(0.0),
        sy(0.0),
        sx(0.0),
        sx(0.0)
    )
    .unwrap();
    if let Some(title) = &style.title {
        writeln!(s, r#"<text x="8" y="18" font-family="sans-serif" font-size="14">{}</text>"#, escape(title)).unwrap();
    }

    let mut groups: BTreeMap<Option<usize>, Vec<[f64; 2]>> = BTreeMap::new();
    for (i, p) in table.points.iter().enumerate() {
        let key = table.labels.as_ref().map(|l| l[i]);
        groups.entry(key).or_default().push(*p);
    }
    for (label, pts) in &groups {
        let (class, color) = match label {
            Some(l) => (format!("mode-{l}"), PALETTE[l % PALETTE.len()]),
            None => ("points".to_string(), PALETTE[0]),
        };
        writeln!(s, r#"<g class="{class}" fill="{color}">"#).unwrap();
        for p in pts {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{}"/>"#, sx(p[0]), sy(p[1]), style.point_radius).unwrap();
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
