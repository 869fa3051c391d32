//! CSV and SVG writers. Every SVG gets a sidecar CSV with the plotted numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use cvxgrid::grid::GridDomain;

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(seed: Option<u64>, columns: &[&str]) -> Self {
        let mut text = String::from("# schema=1\n");
        if let Some(s) = seed {
            writeln!(text, "# seed={s}").unwrap();
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Shortest round-trip form. Missing values are empty fields.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn color(t: f64) -> String {
    // blue → yellow ramp
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t) as u8;
    let g = (60.0 + 170.0 * t) as u8;
    let b = (160.0 - 120.0 * t) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// One square per grid point, in domain coordinates. `None` cells are grey.
pub fn heatmap_svg(grid: &GridDomain, values: &[Option<f64>], title: &str) -> String {
    let (lo, hi) = grid.domain().bbox();
    let w = (hi[0] - lo[0]).max(1e-12);
    let ht = (hi[1] - lo[1]).max(1e-12);
    let size = 600.0;
    let scale = size / w.max(ht);
    let (vmin, vmax) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let cell = grid.h() * scale;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        w * scale + 20.0,
        ht * scale + 40.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="10" y="18" font-size="14">{title} [{vmin:.4e}, {vmax:.4e}]</text>"#
    )
    .unwrap();
    let rot = grid.theta().to_degrees();
    for (i, v) in values.iter().enumerate() {
        let p = grid.embed(i);
        let cx = 10.0 + (p[0] - lo[0]) * scale;
        let cy = 30.0 + (hi[1] - p[1]) * scale;
        let fill = v.map_or("#bbbbbb".to_string(), |v| color((v - vmin) / span));
        writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="{fill}" transform="rotate({:.3} {cx:.3} {cy:.3})"/>"#,
            cx - cell / 2.0,
            cy - cell / 2.0,
            -rot
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.svg` and `<stem>.csv`.
pub fn write_heatmap(dir: &Path, stem: &str, grid: &GridDomain, values: &[Option<f64>], title: &str) -> Result<()> {
    let mut csv = Csv::new(None, &["index", "a", "b", "x", "y", "value"]);
    for (i, v) in values.iter().enumerate() {
        let z = grid.point(i);
        let p = grid.embed(i);
        csv.row(&[
            i.to_string(),
            z.a.to_string(),
            z.b.to_string(),
            num(p[0]),
            num(p[1]),
            opt(v.map(num)),
        ]);
    }
    csv.write(&dir.join(format!("{stem}.csv")))?;
    let svg = heatmap_svg(grid, values, title);
    fs::write(dir.join(format!("{stem}.svg")), svg).with_context(|| format!("writing {stem}.svg"))
}

/// Log-log scatter of `(x, y)` pairs.
pub fn scatter_svg(points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> String {
    let size = 480.0;
    let pad = 50.0;
    let lx: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let (x0, x1, y0, y1) = lx.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    let sx = if x1 > x0 { size / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { size / (y1 - y0) } else { 1.0 };
    let mut s = String::new();
    let total = size + 2.0 * pad;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-size="13">log {xlabel}</text>"#,
        total - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="5" y="{}" font-size="13">log {ylabel}</text>"#,
        pad - 10.0
    )
    .unwrap();
    for &(x, y) in &lx {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            pad + (x - x0) * sx,
            pad + size - (y - y0) * sy
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_scatter(dir: &Path, stem: &str, points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> Result<()> {
    let mut csv = Csv::new(None, &[xlabel, ylabel]);
    for &(x, y) in points {
        csv.row(&[num(x), num(y)]);
    }
    csv.write(&dir.join(format!("{stem}.csv")))?;
    fs::write(dir.join(format!("{stem}.svg")), scatter_svg(points, xlabel, ylabel))
        .with_context(|| format!("writing {stem}.svg"))
}
