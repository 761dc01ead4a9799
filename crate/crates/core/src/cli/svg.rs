//! Static SVG scatter of biplot coordinates.

use std::fmt::Write;

use crate::mmca::BiplotCoords;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 70.0;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Maps `[lo, hi]` onto the plot span, flipping the axis when `flip` is set.
struct Axis {
    lo: f64,
    hi: f64,
    flip: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, flip: bool) -> Self {
        let (mut lo, mut hi) = values.fold((0.0_f64, 0.0_f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, flip }
    }

    fn map(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        let t = if self.flip { 1.0 - t } else { t };
        MARGIN + t * (SIZE - 2.0 * MARGIN)
    }
}

/// One circle per row point (class `row`) and one square marker with a text
/// label per category (class `category`), plotted on dimensions `dims`
/// (zero-based). Axis titles carry the singular values `d`.
pub fn render_svg(coords: &BiplotCoords, labels: &[String], dims: (usize, usize), d: &[f64]) -> String {
    let (a, b) = dims;
    let xs = coords.rows.column(a).iter().chain(coords.categories.column(a).iter()).copied().collect::<Vec<_>>();
    let ys = coords.rows.column(b).iter().chain(coords.categories.column(b).iter()).copied().collect::<Vec<_>>();
    let x_axis = Axis::fit(xs.into_iter(), false);
    let y_axis = Axis::fit(ys.into_iter(), true);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let lo = MARGIN;
    let hi = SIZE - MARGIN;
    let _ = writeln!(s, r#"<rect x="{lo}" y="{lo}" width="{w}" height="{w}" fill="none" stroke="black"/>"#, w = hi - lo);
    let x0 = x_axis.map(0.0);
    let y0 = y_axis.map(0.0);
    let _ = writeln!(s, r##"<line x1="{lo}" y1="{y0:.3}" x2="{hi}" y2="{y0:.3}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##);
    let _ = writeln!(s, r##"<line x1="{x0:.3}" y1="{lo}" x2="{x0:.3}" y2="{hi}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##);
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{:.3}" y="{:.3}" text-anchor="middle">Dimension {} (d = {:.4})</text>"#,
        SIZE / 2.0,
        SIZE - MARGIN / 3.0,
        a + 1,
        d.get(a).copied().unwrap_or(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{:.3}" y="{:.3}" text-anchor="middle" transform="rotate(-90 {:.3} {:.3})">Dimension {} (d = {:.4})</text>"#,
        MARGIN / 3.0,
        SIZE / 2.0,
        MARGIN / 3.0,
        SIZE / 2.0,
        b + 1,
        d.get(b).copied().unwrap_or(0.0)
    );
    for row in coords.rows.row_iter() {
        let _ = writeln!(
            s,
            r##"<circle class="row" cx="{:.3}" cy="{:.3}" r="2.5" fill="#4477aa" fill-opacity="0.6"/>"##,
            x_axis.map(row[a]),
            y_axis.map(row[b])
        );
    }
    for (label, row) in labels.iter().zip(coords.categories.row_iter()) {
        let (x, y) = (x_axis.map(row[a]), y_axis.map(row[b]));
        let _ = writeln!(
            s,
            r##"<rect class="category" x="{:.3}" y="{:.3}" width="6" height="6" fill="#cc3311"/>"##,
            x - 3.0,
            y - 3.0
        );
        let _ = writeln!(s, r#"<text class="category-label" x="{:.3}" y="{:.3}">{}</text>"#, x + 5.0, y - 5.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}
