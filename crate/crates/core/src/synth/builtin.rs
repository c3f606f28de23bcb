//! Embedded fonts so the whole pipeline runs without external assets.
//!
//! Two families ship with the crate: a stroke skeleton font (lowercase
//! alphanumerics plus a little punctuation) rendered under several styles,
//! and a 5x9 bitmap font. Skeleton coordinates are in em units with the
//! baseline at `y = 0` and `y` pointing up.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

const X: f64 = 0.48; // x-height
const H: f64 = 0.72; // ascender
const G: f64 = 0.68; // digit height
const DESC: f64 = -0.18;

/// Canvas spans this em range vertically (top, bottom).
pub(crate) const EM_TOP: f64 = 0.84;
pub(crate) const EM_BOTTOM: f64 = -0.26;

#[derive(Clone, Copy, Debug)]
enum Prim {
    Line(f64, f64, f64, f64),
    /// center, radii, start and end angle in degrees; direction follows the sign of the sweep.
    Arc(f64, f64, f64, f64, f64, f64),
    Ellipse(f64, f64, f64, f64),
    Dot(f64, f64),
    Poly(&'static [(f64, f64)]),
}

use Prim::*;

fn skeleton(c: char) -> Option<&'static [Prim]> {
    let prims: &'static [Prim] = match c {
        'a' => &[Ellipse(0.2, 0.24, 0.2, 0.24), Line(0.4, 0.0, 0.4, X)],
        'b' => &[Line(0.0, 0.0, 0.0, H), Ellipse(0.2, 0.24, 0.2, 0.24)],
        'c' => &[Arc(0.22, 0.24, 0.22, 0.24, 40.0, 320.0)],
        'd' => &[Ellipse(0.2, 0.24, 0.2, 0.24), Line(0.4, 0.0, 0.4, H)],
        'e' => &[Line(0.01, 0.24, 0.43, 0.24), Arc(0.22, 0.24, 0.22, 0.24, 0.0, 320.0)],
        'f' => &[
            Line(0.14, 0.0, 0.14, 0.58),
            Arc(0.27, 0.58, 0.13, 0.14, 180.0, 20.0),
            Line(0.02, 0.46, 0.3, 0.46),
        ],
        'g' => &[
            Ellipse(0.2, 0.24, 0.2, 0.24),
            Line(0.4, X, 0.4, 0.0),
            Arc(0.2, 0.0, 0.2, 0.18, 0.0, -160.0),
        ],
        'h' => &[
            Line(0.0, 0.0, 0.0, H),
            Arc(0.2, 0.28, 0.2, 0.2, 180.0, 0.0),
            Line(0.4, 0.28, 0.4, 0.0),
        ],
        'i' => &[Line(0.04, 0.0, 0.04, X), Dot(0.04, 0.62)],
        'j' => &[
            Line(0.18, X, 0.18, 0.0),
            Arc(0.06, 0.0, 0.12, 0.18, 0.0, -150.0),
            Dot(0.18, 0.62),
        ],
        'k' => &[
            Line(0.0, 0.0, 0.0, H),
            Line(0.34, X, 0.0, 0.16),
            Line(0.11, 0.25, 0.36, 0.0),
        ],
        'l' => &[Line(0.04, 0.0, 0.04, H)],
        'm' => &[
            Line(0.0, 0.0, 0.0, X),
            Arc(0.15, 0.3, 0.15, 0.18, 180.0, 0.0),
            Line(0.3, 0.3, 0.3, 0.0),
            Arc(0.45, 0.3, 0.15, 0.18, 180.0, 0.0),
            Line(0.6, 0.3, 0.6, 0.0),
        ],
        'n' => &[
            Line(0.0, 0.0, 0.0, X),
            Arc(0.2, 0.28, 0.2, 0.2, 180.0, 0.0),
            Line(0.4, 0.28, 0.4, 0.0),
        ],
        'o' => &[Ellipse(0.22, 0.24, 0.22, 0.24)],
        'p' => &[Line(0.0, X, 0.0, DESC), Ellipse(0.2, 0.24, 0.2, 0.24)],
        'q' => &[Ellipse(0.2, 0.24, 0.2, 0.24), Line(0.4, X, 0.4, DESC)],
        'r' => &[Line(0.0, 0.0, 0.0, X), Arc(0.22, 0.26, 0.22, 0.22, 180.0, 50.0)],
        's' => &[
            Arc(0.19, 0.36, 0.18, 0.12, 20.0, 270.0),
            Arc(0.19, 0.12, 0.19, 0.12, 90.0, -160.0),
        ],
        't' => &[
            Line(0.12, 0.64, 0.12, 0.08),
            Arc(0.24, 0.08, 0.12, 0.08, 180.0, 300.0),
            Line(0.0, X, 0.28, X),
        ],
        'u' => &[
            Line(0.0, X, 0.0, 0.2),
            Arc(0.2, 0.2, 0.2, 0.2, 180.0, 360.0),
            Line(0.4, X, 0.4, 0.0),
        ],
        'v' => &[Poly(&[(0.0, X), (0.21, 0.0), (0.42, X)])],
        'w' => &[Poly(&[(0.0, X), (0.15, 0.0), (0.3, 0.36), (0.45, 0.0), (0.6, X)])],
        'x' => &[Line(0.0, 0.0, 0.42, X), Line(0.0, X, 0.42, 0.0)],
        'y' => &[Line(0.0, X, 0.22, 0.02), Line(0.44, X, 0.12, DESC)],
        'z' => &[Poly(&[(0.02, X), (0.4, X), (0.02, 0.0), (0.42, 0.0)])],
        '0' => &[Ellipse(0.22, 0.34, 0.22, 0.34)],
        '1' => &[
            Line(0.2, 0.0, 0.2, G),
            Line(0.2, G, 0.05, 0.54),
            Line(0.04, 0.0, 0.36, 0.0),
        ],
        '2' => &[
            Arc(0.21, 0.48, 0.2, 0.2, 160.0, -35.0),
            Line(0.374, 0.365, 0.0, 0.0),
            Line(0.0, 0.0, 0.42, 0.0),
        ],
        '3' => &[
            Arc(0.2, 0.51, 0.18, 0.17, 150.0, -90.0),
            Arc(0.2, 0.17, 0.21, 0.17, 90.0, -150.0),
        ],
        '4' => &[
            Line(0.32, 0.0, 0.32, G),
            Line(0.32, G, 0.0, 0.2),
            Line(0.0, 0.2, 0.44, 0.2),
        ],
        '5' => &[
            Line(0.4, G, 0.06, G),
            Line(0.06, G, 0.03, 0.38),
            Arc(0.2, 0.21, 0.21, 0.21, 140.0, -140.0),
        ],
        '6' => &[
            Ellipse(0.22, 0.21, 0.21, 0.21),
            Arc(0.43, 0.21, 0.43, 0.47, 180.0, 105.0),
        ],
        '7' => &[Line(0.0, G, 0.42, G), Line(0.42, G, 0.14, 0.0)],
        '8' => &[Ellipse(0.21, 0.51, 0.17, 0.17), Ellipse(0.21, 0.17, 0.21, 0.17)],
        '9' => &[
            Ellipse(0.21, 0.47, 0.21, 0.21),
            Arc(0.0, 0.47, 0.42, 0.47, 0.0, -80.0),
        ],
        '.' => &[Dot(0.05, 0.04)],
        ',' => &[Dot(0.05, 0.04), Line(0.07, 0.03, 0.02, -0.1)],
        '-' => &[Line(0.0, 0.24, 0.28, 0.24)],
        '\'' => &[Line(0.04, H, 0.04, 0.56)],
        _ => return None,
    };
    Some(prims)
}

/// Rows of the 5x9 bitmap font, top to bottom. Rows 0..7 sit above the
/// baseline, rows 7..9 are descender space.
fn bitmap_rows(c: char) -> Option<[&'static str; 9]> {
    const E: &str = ".....";
    let rows = match c {
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.", E, E],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.", E, E],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####", E, E],
        '3' => ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###.", E, E],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.", E, E],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###.", E, E],
        '6' => ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.", E, E],
        '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...", E, E],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.", E, E],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..", E, E],
        'a' => [E, E, ".###.", "....#", ".####", "#...#", ".####", E, E],
        'b' => ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####.", E, E],
        'c' => [E, E, ".###.", "#....", "#....", "#...#", ".###.", E, E],
        'd' => ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####", E, E],
        'e' => [E, E, ".###.", "#...#", "#####", "#....", ".###.", E, E],
        'f' => ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#...", E, E],
        'g' => [E, E, ".####", "#...#", "#...#", ".####", "....#", "#...#", ".###."],
        'h' => ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#", E, E],
        'i' => ["..#..", E, ".##..", "..#..", "..#..", "..#..", ".###.", E, E],
        'j' => ["...#.", E, "..##.", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
        'k' => ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", E, E],
        'l' => [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.", E, E],
        'm' => [E, E, "##.#.", "#.#.#", "#.#.#", "#...#", "#...#", E, E],
        'n' => [E, E, "#.##.", "##..#", "#...#", "#...#", "#...#", E, E],
        'o' => [E, E, ".###.", "#...#", "#...#", "#...#", ".###.", E, E],
        'p' => [E, E, "####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'q' => [E, E, ".####", "#...#", "#...#", ".####", "....#", "....#", "....#"],
        'r' => [E, E, "#.##.", "##..#", "#....", "#....", "#....", E, E],
        's' => [E, E, ".####", "#....", ".###.", "....#", "####.", E, E],
        't' => [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##.", E, E],
        'u' => [E, E, "#...#", "#...#", "#...#", "#..##", ".##.#", E, E],
        'v' => [E, E, "#...#", "#...#", "#...#", ".#.#.", "..#..", E, E],
        'w' => [E, E, "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", E, E],
        'x' => [E, E, "#...#", ".#.#.", "..#..", ".#.#.", "#...#", E, E],
        'y' => [E, E, "#...#", "#...#", "#...#", ".####", "....#", "#...#", ".###."],
        'z' => [E, E, "#####", "...#.", "..#..", ".#...", "#####", E, E],
        '.' => [E, E, E, E, E, E, "..#..", E, E],
        ',' => [E, E, E, E, E, "..#..", "..#..", ".#...", E],
        '-' => [E, E, E, E, "####.", E, E, E, E],
        '\'' => ["..#..", "..#..", E, E, E, E, E, E, E],
        _ => return None,
    };
    Some(rows)
}

/// Rendering parameters applied to the stroke skeletons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeStyle {
    /// Stroke width in em.
    pub weight: f64,
    /// Horizontal shear per em of height.
    pub slant: f64,
    pub width_scale: f64,
    /// Serif foot length in em; 0 disables serifs.
    pub serif: f64,
    /// Segments used to approximate a full ellipse.
    pub arc_segments: usize,
    /// Amplitude of edge raggedness relative to the stroke radius.
    pub roughness: f64,
}

impl StrokeStyle {
    const fn plain(weight: f64) -> Self {
        StrokeStyle {
            weight,
            slant: 0.0,
            width_scale: 1.0,
            serif: 0.0,
            arc_segments: 40,
            roughness: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BuiltinKind {
    Stroke(StrokeStyle),
    Bitmap { width_scale: f64 },
}

/// Names of the embedded font styles.
pub const BUILTIN_FONTS: &[&str] = &[
    "sans",
    "sans-bold",
    "light-wide",
    "oblique",
    "serif",
    "angular",
    "pixel",
    "book",
    "typewriter",
    "rounded",
];

pub(crate) fn builtin_kind(name: &str) -> Option<BuiltinKind> {
    let s = StrokeStyle::plain;
    let kind = match name {
        "sans" => BuiltinKind::Stroke(s(0.075)),
        "sans-bold" => BuiltinKind::Stroke(s(0.12)),
        "light-wide" => BuiltinKind::Stroke(StrokeStyle { width_scale: 1.22, ..s(0.05) }),
        "oblique" => BuiltinKind::Stroke(StrokeStyle { slant: 0.22, ..s(0.08) }),
        "serif" => BuiltinKind::Stroke(StrokeStyle { serif: 0.09, ..s(0.07) }),
        "angular" => BuiltinKind::Stroke(StrokeStyle {
            width_scale: 0.85,
            arc_segments: 6,
            ..s(0.085)
        }),
        "pixel" => BuiltinKind::Bitmap { width_scale: 1.0 },
        "book" => BuiltinKind::Stroke(StrokeStyle {
            serif: 0.06,
            width_scale: 1.05,
            ..s(0.065)
        }),
        "typewriter" => BuiltinKind::Stroke(StrokeStyle {
            serif: 0.07,
            width_scale: 1.1,
            roughness: 0.35,
            ..s(0.07)
        }),
        "rounded" => BuiltinKind::Stroke(StrokeStyle {
            slant: 0.08,
            width_scale: 0.95,
            ..s(0.1)
        }),
        _ => return None,
    };
    Some(kind)
}

pub(crate) fn supports(kind: &BuiltinKind, c: char) -> bool {
    match kind {
        BuiltinKind::Stroke(_) => skeleton(c).is_some(),
        BuiltinKind::Bitmap { .. } => bitmap_rows(c).is_some(),
    }
}

/// Inked geometry of one glyph in em units, ready for rasterizing.
pub(crate) struct GlyphShape {
    segments: Vec<[f64; 4]>,
    dots: Vec<(f64, f64, f64)>,
    cells: Vec<[f64; 4]>,
    radius: f64,
    roughness: f64,
    /// Horizontal ink extent (min, max) in em.
    pub x_range: (f64, f64),
}

pub(crate) fn shape(kind: &BuiltinKind, c: char) -> Option<GlyphShape> {
    match kind {
        BuiltinKind::Stroke(style) => stroke_shape(style, skeleton(c)?),
        BuiltinKind::Bitmap { width_scale } => bitmap_shape(*width_scale, &bitmap_rows(c)?),
    }
}

fn stroke_shape(style: &StrokeStyle, prims: &[Prim]) -> Option<GlyphShape> {
    let mut polylines: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut dots = Vec::new();
    let arc_points = |cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64| {
        let sweep = (a1 - a0).abs() / 360.0;
        let n = ((style.arc_segments as f64 * sweep).ceil() as usize).max(2);
        (0..=n)
            .map(|k| {
                let a = (a0 + (a1 - a0) * k as f64 / n as f64) * PI / 180.0;
                (cx + rx * a.cos(), cy + ry * a.sin())
            })
            .collect::<Vec<_>>()
    };
    for p in prims {
        match *p {
            Line(x0, y0, x1, y1) => {
                polylines.push(vec![(x0, y0), (x1, y1)]);
                if style.serif > 0.0 && (x1 - x0).abs() < 0.05 {
                    for (x, y) in [(x0, y0), (x1, y1)] {
                        let at_edge = [0.0, X, H, G, DESC].iter().any(|e| (y - e).abs() < 1e-9);
                        if at_edge {
                            let half = style.serif / 2.0;
                            polylines.push(vec![(x - half, y), (x + half, y)]);
                        }
                    }
                }
            }
            Arc(cx, cy, rx, ry, a0, a1) => polylines.push(arc_points(cx, cy, rx, ry, a0, a1)),
            Ellipse(cx, cy, rx, ry) => polylines.push(arc_points(cx, cy, rx, ry, 0.0, 360.0)),
            Dot(x, y) => dots.push((x, y, style.weight * 0.85)),
            Poly(points) => polylines.push(points.to_vec()),
        }
    }
    let tx = |(x, y): (f64, f64)| (x * style.width_scale + style.slant * y, y);
    let mut segments = Vec::new();
    for line in &polylines {
        for w in line.windows(2) {
            let a = tx(w[0]);
            let b = tx(w[1]);
            segments.push([a.0, a.1, b.0, b.1]);
        }
    }
    let dots: Vec<_> = dots
        .into_iter()
        .map(|(x, y, r)| {
            let (x, y) = tx((x, y));
            (x, y, r)
        })
        .collect();
    let radius = style.weight / 2.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &segments {
        lo = lo.min(s[0].min(s[2]) - radius);
        hi = hi.max(s[0].max(s[2]) + radius);
    }
    for &(x, _, r) in &dots {
        lo = lo.min(x - r);
        hi = hi.max(x + r);
    }
    if !lo.is_finite() {
        return None;
    }
    Some(GlyphShape {
        segments,
        dots,
        cells: Vec::new(),
        radius,
        roughness: style.roughness,
        x_range: (lo, hi),
    })
}

fn bitmap_shape(width_scale: f64, rows: &[&str; 9]) -> Option<GlyphShape> {
    let cell_h = H / 7.0;
    let cell_w = 0.09 * width_scale;
    let mut cells = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            if ch == '#' {
                let top = H - r as f64 * cell_h;
                let x0 = c as f64 * cell_w;
                cells.push([x0, top - cell_h, x0 + cell_w, top]);
            }
        }
    }
    if cells.is_empty() {
        return None;
    }
    let lo = cells.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c[2]).fold(f64::NEG_INFINITY, f64::max);
    Some(GlyphShape {
        segments: Vec::new(),
        dots: Vec::new(),
        cells,
        radius: 0.0,
        roughness: 0.0,
        x_range: (lo, hi),
    })
}

fn segment_distance(px: f64, py: f64, s: &[f64; 4]) -> f64 {
    let (dx, dy) = (s[2] - s[0], s[3] - s[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - s[0]) * dx + (py - s[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (s[0] + t * dx - px, s[1] + t * dy - py);
    (qx * qx + qy * qy).sqrt()
}

/// Deterministic value noise in [-1, 1].
fn noise(x: f64, y: f64) -> f64 {
    let xi = (x * 37.0).floor() as i64;
    let yi = (y * 37.0).floor() as i64;
    let mut h = (xi.wrapping_mul(73_856_093) ^ yi.wrapping_mul(19_349_663)) as u64;
    h ^= h >> 13;
    h = h.wrapping_mul(0x5bd1_e995);
    h ^= h >> 15;
    (h % 2001) as f64 / 1000.0 - 1.0
}

impl GlyphShape {
    /// Ink coverage in [0, 1] for a pixel of side `px` em centered at (x, y).
    pub(crate) fn coverage(&self, x: f64, y: f64, px: f64) -> f64 {
        let mut best = 0.0f64;
        if !self.cells.is_empty() {
            for c in &self.cells {
                let ox = (x + px / 2.0).min(c[2]) - (x - px / 2.0).max(c[0]);
                let oy = (y + px / 2.0).min(c[3]) - (y - px / 2.0).max(c[1]);
                if ox > 0.0 && oy > 0.0 {
                    best += ox * oy / (px * px);
                }
            }
            return best.min(1.0);
        }
        let radius = if self.roughness > 0.0 {
            self.radius * (1.0 + self.roughness * noise(x, y))
        } else {
            self.radius
        };
        let mut d = f64::INFINITY;
        for s in &self.segments {
            d = d.min(segment_distance(x, y, s) - radius);
        }
        for &(dx, dy, r) in &self.dots {
            d = d.min(((x - dx).powi(2) + (y - dy).powi(2)).sqrt() - r);
        }
        // Linear ramp one pixel wide around the outline.
        (0.5 - d / px).clamp(0.0, 1.0)
    }
}
