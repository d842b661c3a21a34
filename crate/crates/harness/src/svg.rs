//! Scatter plots of weighted planar configurations over density contours.

use std::fmt::Write as _;
use std::path::Path;

use msip_core::msip::ParticleConfiguration;
use msip_core::TargetDensity;

use crate::error::{HarnessError, Result};

const GRID: usize = 200;
const PLOT: f64 = 400.0;
const LEFT: f64 = 50.0;
const TOP: f64 = 20.0;
const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 470.0;
/// Contour levels as fractions of the largest density on the grid.
const LEVELS: [f64; 6] = [0.02, 0.1, 0.25, 0.5, 0.75, 0.9];

const NEGATIVE: [f64; 3] = [33.0, 102.0, 172.0];
const NEUTRAL: [f64; 3] = [247.0, 247.0, 247.0];
const POSITIVE: [f64; 3] = [178.0, 24.0, 43.0];

/// Diverging color for `t ∈ [−1, 1]`: blue below zero, red above.
pub fn diverging_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let end = if t < 0.0 { NEGATIVE } else { POSITIVE };
    let a = t.abs();
    let c: Vec<u8> = (0..3).map(|k| (NEUTRAL[k] + a * (end[k] - NEUTRAL[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    /// Bounding box of `points`, widened by 20% about its centre.
    fn around(points: &[[f64; 2]]) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if !(x0 <= x1 && y0 <= y1) {
            (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
        }
        let widen = |lo: f64, hi: f64| {
            let c = 0.5 * (lo + hi);
            let h = (0.6 * (hi - lo)).max(1e-3 * (1.0 + c.abs()));
            (c - h, c + h)
        };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * PLOT
    }

    fn py(&self, y: f64) -> f64 {
        TOP + (self.y1 - y) / (self.y1 - self.y0) * PLOT
    }

    fn grid_x(&self, i: usize) -> f64 {
        self.x0 + (self.x1 - self.x0) * i as f64 / (GRID - 1) as f64
    }

    fn grid_y(&self, j: usize) -> f64 {
        self.y0 + (self.y1 - self.y0) * j as f64 / (GRID - 1) as f64
    }
}

/// Line segments of the `level` set of `f` (indexed `[j][i]`, `j` along y).
fn marching_squares(f: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segs = Vec::new();
    let lerp = |a: f64, b: f64| if a == b { 0.5 } else { (level - a) / (b - a) };
    for j in 0..GRID - 1 {
        for i in 0..GRID - 1 {
            // corners counter-clockwise from bottom-left
            let v = [f[j][i], f[j][i + 1], f[j + 1][i + 1], f[j + 1][i]];
            let case = v.iter().enumerate().fold(0, |acc, (k, x)| acc | (usize::from(*x >= level) << k));
            if case == 0 || case == 15 {
                continue;
            }
            let (x, y) = (i as f64, j as f64);
            let edge = |e: usize| match e {
                0 => (x + lerp(v[0], v[1]), y),
                1 => (x + 1.0, y + lerp(v[1], v[2])),
                2 => (x + 1.0 - lerp(v[2], v[3]), y + 1.0),
                _ => (x, y + 1.0 - lerp(v[3], v[0])),
            };
            let centre_high = v.iter().sum::<f64>() / 4.0 >= level;
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(2, 3)],
                5 if centre_high => &[(3, 2), (0, 1)],
                5 => &[(3, 0), (1, 2)],
                10 if centre_high => &[(3, 0), (1, 2)],
                _ => &[(0, 1), (2, 3)],
            };
            for &(a, b) in pairs {
                segs.push([edge(a), edge(b)]);
            }
        }
    }
    segs
}

/// Renders the configuration as an SVG document.
///
/// Weights are normalized to sum to one when possible and colored on a
/// diverging scale centred at zero, scaled by the largest magnitude.
pub fn render_scatter_svg(pc: &ParticleConfiguration, target: &TargetDensity) -> Result<String> {
    if pc.dim() != 2 || target.dim() != 2 {
        return Err(HarnessError::UnsupportedDimension(if pc.dim() != 2 { pc.dim() } else { target.dim() }));
    }
    let w = pc.normalized_weights().unwrap_or_else(|_| pc.w.clone());
    let w_max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut points: Vec<[f64; 2]> = pc.y.row_iter().map(|r| [r[0], r[1]]).collect();
    if let Some(modes) = target.modes() {
        points.extend(modes.row_iter().map(|r| [r[0], r[1]]));
    }
    let frame = Frame::around(&points);

    let logp: Vec<Vec<f64>> = (0..GRID)
        .map(|j| (0..GRID).map(|i| target.log_density(&[frame.grid_x(i), frame.grid_y(j)])).collect())
        .collect();
    let top = logp.iter().flatten().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let density: Vec<Vec<f64>> = logp
        .iter()
        .map(|row| row.iter().map(|v| if top.is_finite() { (v - top).exp() } else { 0.0 }).collect())
        .collect();

    let mut s = String::new();
    let sx = PLOT / (GRID - 1) as f64;
    let w_ = |s: &mut String, args: std::fmt::Arguments| s.write_fmt(args).expect("writing to a String");
    w_(
        &mut s,
        format_args!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        ),
    );
    w_(&mut s, format_args!("<title>{} — {} particles</title>\n", xml_escape(target.name()), pc.len()));
    w_(
        &mut s,
        format_args!(
            "<defs>\n<linearGradient id=\"weight-scale\" x1=\"0\" y1=\"0\" x2=\"0\" y2=\"1\">\n<stop offset=\"0\" stop-color=\"{}\"/>\n<stop offset=\"0.5\" stop-color=\"{}\"/>\n<stop offset=\"1\" stop-color=\"{}\"/>\n</linearGradient>\n<clipPath id=\"plot-area\"><rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{PLOT}\" height=\"{PLOT}\"/></clipPath>\n</defs>\n",
            diverging_color(1.0),
            diverging_color(0.0),
            diverging_color(-1.0)
        ),
    );
    w_(&mut s, format_args!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
    w_(&mut s, format_args!("<g clip-path=\"url(#plot-area)\" fill=\"none\">\n"));
    for (k, level) in LEVELS.iter().enumerate() {
        let segs = marching_squares(&density, *level);
        if segs.is_empty() {
            continue;
        }
        let grey = 200 - 25 * k as u8;
        w_(&mut s, format_args!("<path stroke=\"#{grey:02x}{grey:02x}{grey:02x}\" stroke-width=\"1\" d=\""));
        for [a, b] in segs {
            let (ax, ay) = (LEFT + a.0 * sx, TOP + PLOT - a.1 * sx);
            let (bx, by) = (LEFT + b.0 * sx, TOP + PLOT - b.1 * sx);
            w_(&mut s, format_args!("M{ax:.2} {ay:.2}L{bx:.2} {by:.2}"));
        }
        w_(&mut s, format_args!("\"/>\n"));
    }
    w_(&mut s, format_args!("</g>\n"));
    w_(
        &mut s,
        format_args!("<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{PLOT}\" height=\"{PLOT}\" fill=\"none\" stroke=\"black\"/>\n"),
    );
    // axis extents
    let label_y = TOP + PLOT + 15.0;
    w_(&mut s, format_args!("<text x=\"{LEFT}\" y=\"{label_y}\">{:.3}</text>\n", frame.x0));
    w_(
        &mut s,
        format_args!("<text x=\"{}\" y=\"{label_y}\" text-anchor=\"end\">{:.3}</text>\n", LEFT + PLOT, frame.x1),
    );
    w_(
        &mut s,
        format_args!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n", LEFT - 4.0, TOP + PLOT, frame.y0),
    );
    w_(
        &mut s,
        format_args!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n", LEFT - 4.0, TOP + 10.0, frame.y1),
    );

    w_(&mut s, format_args!("<g stroke=\"black\" stroke-width=\"0.5\">\n"));
    for (i, row) in pc.y.row_iter().enumerate() {
        let t = if w_max > 0.0 { w[i] / w_max } else { 0.0 };
        w_(
            &mut s,
            format_args!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"><title>w = {:.6e}</title></circle>\n",
                frame.px(row[0]),
                frame.py(row[1]),
                diverging_color(t),
                w[i]
            ),
        );
    }
    w_(&mut s, format_args!("</g>\n"));

    // legend
    let lx = LEFT + PLOT + 30.0;
    let (ly, lh) = (TOP + 20.0, 200.0);
    w_(&mut s, format_args!("<text x=\"{lx}\" y=\"{}\">weight</text>\n", ly - 8.0));
    w_(
        &mut s,
        format_args!("<rect x=\"{lx}\" y=\"{ly}\" width=\"16\" height=\"{lh}\" fill=\"url(#weight-scale)\" stroke=\"black\" stroke-width=\"0.5\"/>\n"),
    );
    for (frac, value) in [(0.0, w_max), (0.5, 0.0), (1.0, -w_max)] {
        w_(
            &mut s,
            format_args!("<text x=\"{}\" y=\"{:.1}\">{:.3e}</text>\n", lx + 22.0, ly + frac * lh + 4.0, value),
        );
    }
    w_(&mut s, format_args!("</svg>\n"));
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_scatter_svg(pc: &ParticleConfiguration, target: &TargetDensity, path: &Path) -> Result<()> {
    let svg = render_scatter_svg(pc, target)?;
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use msip_core::make_benchmark;
    use nalgebra::{DMatrix, DVector};

    fn config(y: &[f64], w: &[f64]) -> ParticleConfiguration {
        ParticleConfiguration {
            y: DMatrix::from_row_slice(w.len(), y.len() / w.len(), y),
            w: DVector::from_row_slice(w),
            log_weight_scale: 0.0,
        }
    }

    #[test]
    fn colors_diverge_around_zero() {
        assert_eq!(diverging_color(0.0), "#f7f7f7");
        assert_eq!(diverging_color(1.0), "#b2182b");
        assert_eq!(diverging_color(-1.0), "#2166ac");
        assert_ne!(diverging_color(0.5), diverging_color(-0.5));
    }

    #[test]
    fn equal_weights_share_one_color() {
        let t = make_benchmark("gmm5-aniso-2d", 2, 0).unwrap();
        let svg = render_scatter_svg(&config(&[0.0, 1.0, 2.0, 3.0, -4.0, 5.0], &[2.0, 2.0, 2.0]), &t).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("fill=\"#b2182b\"><title>").count(), 3);
    }

    #[test]
    fn negative_weights_are_blue() {
        let t = make_benchmark("himmelblau", 2, 0).unwrap();
        let svg = render_scatter_svg(&config(&[0.0, 1.0, 2.0, 3.0], &[1.5, -0.5]), &t).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        // normalized weights 1.5 and -0.5: the second maps to -1/3
        assert!(svg.contains(&format!("fill=\"{}\"><title>", diverging_color(-1.0 / 3.0))));
    }

    #[test]
    fn contours_are_drawn() {
        let t = make_benchmark("gmm5-aniso-2d", 2, 0).unwrap();
        let svg = render_scatter_svg(&config(&[0.0, 8.0], &[1.0]), &t).unwrap();
        assert!(svg.matches("<path").count() >= 4);
    }

    #[test]
    fn other_dimensions_are_rejected() {
        let t = make_benchmark("gmm", 3, 0).unwrap();
        assert!(render_scatter_svg(&config(&[0.0, 1.0, 2.0], &[1.0]), &t).is_err());
    }

    #[test]
    fn marching_squares_on_a_cone() {
        // circle of radius 50 cells around the grid centre
        let f: Vec<Vec<f64>> = (0..GRID)
            .map(|j| (0..GRID).map(|i| -((i as f64 - 99.5).hypot(j as f64 - 99.5))).collect())
            .collect();
        let segs = marching_squares(&f, -50.0);
        let len: f64 = segs.iter().map(|[a, b]| (a.0 - b.0).hypot(a.1 - b.1)).sum();
        assert!((len - 2.0 * std::f64::consts::PI * 50.0).abs() < 1.0, "{len}");
        for [a, _] in &segs {
            assert!(((a.0 - 99.5).hypot(a.1 - 99.5) - 50.0).abs() < 0.05);
        }
    }
}
