//! SVG output. Segments are colored by drawing order on a black to yellow
//! ramp so the stroke topology is visible at a glance.

use std::fmt::Write as _;

use crate::sketch::{Sketch, PEN_UP};

/// Ramp color for position `u` in `[0, 1]`: black at 0, yellow at 1.
pub fn topology_color(u: f64) -> (u8, u8, u8) {
    let c = (u.clamp(0.0, 1.0) * 255.0).round() as u8;
    (c, c, 0)
}

/// Per-point drawing index, the value the ramp is keyed on.
pub fn topology_index(sketch: &Sketch) -> Vec<usize> {
    (0..sketch.len()).collect()
}

/// Renders sketches side by side in one SVG, each in a `cell`-pixel square.
pub fn render_svg(sketches: &[Sketch], cell: f64) -> String {
    let pad = 0.08 * cell;
    let width = cell * sketches.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{cell}" viewBox="0 0 {width} {cell}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, sk) in sketches.iter().enumerate() {
        let (x0, y0, x1, y1) = sk.bounding_box();
        let side = (x1 - x0).max(y1 - y0).max(1e-9);
        let scale = (cell - 2.0 * pad) / side;
        let ox = k as f64 * cell + pad;
        let map = |x: f64, y: f64| (ox + (x - x0) * scale, pad + (y - y0) * scale);
        let p = sk.points();
        let denom = (p.len().max(2) - 1) as f64;
        let _ = writeln!(out, r#"<g stroke-width="2" stroke-linecap="round" fill="none">"#);
        for i in 1..p.len() {
            if p[i - 1].pen == PEN_UP {
                continue;
            }
            let (ax, ay) = map(p[i - 1].x, p[i - 1].y);
            let (bx, by) = map(p[i].x, p[i].y);
            let (r, g, b) = topology_color(i as f64 / denom);
            let _ = writeln!(
                out,
                r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{bx:.2}" y2="{by:.2}" stroke="rgb({r},{g},{b})"/>"#
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(topology_color(0.0), (0, 0, 0));
        assert_eq!(topology_color(1.0), (255, 255, 0));
        assert_eq!(topology_color(7.0), (255, 255, 0));
    }

    #[test]
    fn pen_lifts_break_the_path() {
        let s = Sketch::from_triples(&[(0.0, 0.0, -1), (1.0, 0.0, 1), (0.0, 1.0, -1), (1.0, 1.0, 1)]).unwrap();
        let svg = render_svg(&[s.clone(), s], 100.0);
        assert_eq!(svg.matches("<line").count(), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
