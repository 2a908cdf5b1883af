//! Minimal SVG figures. Every figure also renders a CSV twin holding the
//! plotted numbers, one row per point or cell.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Line,
    Points,
    LinePoints,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub mark: Mark,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>, color: &str, mark: Mark) -> Self {
        Self {
            name: name.into(),
            points,
            color: color.into(),
            mark,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, xl: &str, yl: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            out,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            r - l,
            b - t
        );
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * f64::from(i) / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * f64::from(i) / 4.0;
            let (sx, sy) = (self.px(fx), self.py(fy));
            let _ = writeln!(
                out,
                r##"<line x1="{sx:.2}" y1="{b}" x2="{sx:.2}" y2="{}" stroke="#333"/><text x="{sx:.2}" y="{}" font-size="11" text-anchor="middle">{fx:.3}</text>"##,
                b + 5.0,
                b + 18.0
            );
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{sy:.2}" x2="{l}" y2="{sy:.2}" stroke="#333"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end">{fy:.3}</text>"##,
                l - 5.0,
                l - 8.0,
                sy + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="30" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 15.0,
            escape(xl)
        );
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(yl)
        );
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

impl Figure {
    fn frame(&self) -> Frame {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        Frame {
            x: self.x_range.unwrap_or_else(|| range_of(all().map(|p| p.0))),
            y: self.y_range.unwrap_or_else(|| range_of(all().map(|p| p.1))),
        }
    }

    pub fn to_svg(&self) -> String {
        let f = self.frame();
        let mut out = header(WIDTH, HEIGHT);
        f.axes(&mut out, &self.title, &self.x_label, &self.y_label);
        let inside = |p: &(f64, f64)| p.0.is_finite() && p.1.is_finite();
        for s in &self.series {
            if matches!(s.mark, Mark::Line | Mark::LinePoints) && s.points.len() > 1 {
                let path: Vec<String> = s
                    .points
                    .iter()
                    .filter(|p| inside(p))
                    .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    path.join(" "),
                    s.color
                );
            }
            if matches!(s.mark, Mark::Points | Mark::LinePoints) {
                for p in s.points.iter().filter(|p| inside(p)) {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                        f.px(p.0),
                        f.py(p.1),
                        s.color
                    );
                }
            }
        }
        for (i, s) in self.series.iter().enumerate().filter(|(_, s)| !s.name.is_empty()).take(12) {
            let y = MARGIN + 14.0 * i as f64 + 10.0;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                y - 9.0,
                s.color,
                WIDTH - MARGIN - 135.0,
                y,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,x,y\n");
        for s in &self.series {
            for (x, y) in &s.points {
                let _ = writeln!(out, "{},{x},{y}", s.name.replace(',', ";"));
            }
        }
        out
    }
}

/// Heat map of `counts[i][j]` with rows along the vertical axis.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, x_edges: &[f64], y_edges: &[f64], counts: &[Vec<usize>]) -> (String, String) {
    let f = Frame {
        x: (x_edges[0], x_edges[x_edges.len() - 1]),
        y: (y_edges[0], y_edges[y_edges.len() - 1]),
    };
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut svg = header(WIDTH, HEIGHT);
    let mut csv = format!("{y_label}_lo,{y_label}_hi,{x_label}_lo,{x_label}_hi,count\n");
    for (i, row) in counts.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            let (x0, x1, y0, y1) = (x_edges[j], x_edges[j + 1], y_edges[i], y_edges[i + 1]);
            let _ = writeln!(csv, "{y0},{y1},{x0},{x1},{c}");
            let shade = 255.0 - 235.0 * (*c as f64 / max);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({s},{s},255)"/>"#,
                f.px(x0),
                f.py(y1),
                f.px(x1) - f.px(x0),
                f.py(y0) - f.py(y1),
                s = shade.round() as u8
            );
        }
    }
    f.axes(&mut svg, title, x_label, y_label);
    svg.push_str("</svg>\n");
    (svg, csv)
}

/// One tile of an image strip.
#[derive(Clone, Debug)]
pub struct Tile {
    pub pixels: Vec<f64>,
    pub shape: [usize; 2],
    pub caption: String,
    pub highlight: bool,
}

/// Row of grayscale images; highlighted tiles get a gray bar beneath.
pub fn image_strip(title: &str, tiles: &[Tile]) -> (String, String) {
    let cell = 4.0;
    let gap = 12.0;
    let tile_w = tiles.iter().map(|t| t.shape[1]).max().unwrap_or(1) as f64 * cell;
    let tile_h = tiles.iter().map(|t| t.shape[0]).max().unwrap_or(1) as f64 * cell;
    let w = gap + tiles.len() as f64 * (tile_w + gap);
    let h = tile_h + 80.0;
    let mut svg = header(w.max(200.0), h);
    let mut csv = String::from("tile,caption,highlight\n");
    let _ = writeln!(svg, r#"<text x="{gap}" y="18" font-size="13">{}</text>"#, escape(title));
    for (k, t) in tiles.iter().enumerate() {
        let ox = gap + k as f64 * (tile_w + gap);
        let oy = 28.0;
        let _ = writeln!(csv, "{k},{},{}", t.caption.replace(',', ";"), t.highlight);
        for r in 0..t.shape[0] {
            for c in 0..t.shape[1] {
                let v = (t.pixels[r * t.shape[1] + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                let _ = write!(
                    svg,
                    r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({v},{v},{v})"/>"#,
                    ox + c as f64 * cell,
                    oy + r as f64 * cell
                );
            }
        }
        svg.push('\n');
        if t.highlight {
            let _ = writeln!(
                svg,
                r##"<rect x="{ox}" y="{}" width="{tile_w}" height="6" fill="#999"/>"##,
                oy + tile_h + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            ox + tile_w / 2.0,
            oy + tile_h + 24.0,
            escape(&t.caption)
        );
    }
    svg.push_str("</svg>\n");
    (svg, csv)
}

/// Writes `<stem>.svg` and its `<stem>.csv` twin.
pub fn write_figure(dir: &Path, stem: &str, svg: &str, csv: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (s, c) = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
    fs::write(&s, svg)?;
    fs::write(&c, csv)?;
    Ok(vec![s, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_renders_every_point() {
        let fig = Figure {
            title: "a < b".into(),
            series: vec![
                Series::new("one", vec![(0.0, 0.0), (1.0, 1.0)], PALETTE[0], Mark::LinePoints),
                Series::new("two", vec![(0.5, 0.2)], PALETTE[1], Mark::Points),
            ],
            ..Default::default()
        };
        let svg = fig.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt; b"));
        assert_eq!(fig.to_csv().lines().count(), 4);
    }

    #[test]
    fn heatmap_has_one_row_per_cell() {
        let (svg, csv) = heatmap("h", "x0", "k", &[0.0, 1.0, 2.0], &[0.0, 1.0], &[vec![3, 0]]);
        assert_eq!(csv.lines().count(), 3);
        assert!(svg.contains("<rect"));
    }
}
