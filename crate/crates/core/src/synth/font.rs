//! Font sources: embedded styles, scalable TTF/OTF files, or a directory of
//! pre-rendered per-glyph PNGs keyed by codepoint (`0061.png` for `a`).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ab_glyph::{Font, FontArc, PxScale, ScaleFont};
use serde::{Deserialize, Serialize};

use super::builtin::{self, BuiltinKind, EM_BOTTOM, EM_TOP};
use crate::error::{Error, Result};
use crate::types::{normalize_crop, BBox, GrayImage};

/// Letter spacing between glyphs of one label, in em.
const TRACKING: f64 = 0.08;

/// How a font is referenced from configuration files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FontSpec {
    Builtin(String),
    Ttf(std::path::PathBuf),
    PngDir(std::path::PathBuf),
}

impl FontSpec {
    pub fn open(&self) -> Result<FontSource> {
        match self {
            FontSpec::Builtin(name) => FontSource::builtin(name),
            FontSpec::Ttf(path) => FontSource::from_ttf(path),
            FontSpec::PngDir(path) => FontSource::from_png_dir(path),
        }
    }

    pub fn referenced_path(&self) -> Option<&Path> {
        match self {
            FontSpec::Builtin(_) => None,
            FontSpec::Ttf(p) | FontSpec::PngDir(p) => Some(p),
        }
    }
}

#[derive(Clone)]
enum Backend {
    Builtin(BuiltinKind),
    Ttf(FontArc),
    Bitmaps(Arc<HashMap<char, GrayImage>>),
}

/// A renderable font. Cloning is cheap.
#[derive(Clone)]
pub struct FontSource {
    font_id: String,
    backend: Backend,
}

impl fmt::Debug for FontSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FontSource({})", self.font_id)
    }
}

/// A single rendered character on a canvas whose rows line up with the
/// em box: row 0 is the em top, the baseline is shared by every glyph of
/// the same `size`.
#[derive(Clone, Debug)]
pub struct RenderedChar {
    pub image: GrayImage,
    /// Ink extent on `image` (pixels darker than 0.5).
    pub ink: BBox,
}

impl FontSource {
    pub fn builtin(name: &str) -> Result<Self> {
        let kind = builtin::builtin_kind(name)
            .ok_or_else(|| Error::Config(format!("unknown builtin font '{name}'")))?;
        Ok(FontSource {
            font_id: name.to_string(),
            backend: Backend::Builtin(kind),
        })
    }

    pub fn from_ttf(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let font = FontArc::try_from_vec(bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(FontSource {
            font_id: stem(path),
            backend: Backend::Ttf(font),
        })
    }

    pub fn from_png_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut glyphs = HashMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let name = stem(&path);
            let Some(c) = u32::from_str_radix(name.trim_start_matches(['u', 'U']), 16)
                .ok()
                .and_then(char::from_u32)
            else {
                log::warn!("skipping {}: file name is not a hex codepoint", path.display());
                continue;
            };
            glyphs.insert(c, GrayImage::load_png(&path)?);
        }
        Ok(FontSource {
            font_id: stem(dir),
            backend: Backend::Bitmaps(Arc::new(glyphs)),
        })
    }

    pub fn id(&self) -> &str {
        &self.font_id
    }

    /// Whether every character of `label` can be drawn. Whitespace never can.
    pub fn supports(&self, label: &str) -> bool {
        !label.is_empty() && label.chars().all(|c| self.supports_char(c))
    }

    fn supports_char(&self, c: char) -> bool {
        if c.is_whitespace() {
            return false;
        }
        match &self.backend {
            Backend::Builtin(kind) => builtin::supports(kind, c),
            Backend::Ttf(font) => font.glyph_id(c).0 != 0,
            Backend::Bitmaps(map) => map.contains_key(&c),
        }
    }

    fn missing(&self, label: &str) -> Error {
        Error::GlyphMissing {
            font: self.font_id.clone(),
            label: label.to_string(),
        }
    }

    /// Renders one character on a canvas `size` pixels tall.
    pub fn render_char(&self, c: char, size: usize) -> Result<RenderedChar> {
        if !self.supports_char(c) || size < 4 {
            return Err(self.missing(&c.to_string()));
        }
        let image = match &self.backend {
            Backend::Builtin(kind) => render_builtin(kind, c, size),
            Backend::Ttf(font) => render_ttf(font, c, size),
            Backend::Bitmaps(map) => render_bitmap(&map[&c], size),
        };
        let ink = image.ink_bbox(0.5).ok_or_else(|| self.missing(&c.to_string()))?;
        Ok(RenderedChar { image, ink })
    }

    /// Renders a whole label (one or more characters) left to right,
    /// `size` pixels tall.
    pub fn render_text(&self, label: &str, size: usize) -> Result<GrayImage> {
        if !self.supports(label) {
            return Err(self.missing(label));
        }
        let glyphs = label
            .chars()
            .map(|c| self.render_char(c, size))
            .collect::<Result<Vec<_>>>()?;
        let gap = (TRACKING * em_px(size)).round() as usize;
        let pad = 2;
        let width = glyphs.iter().map(|g| g.ink.width()).sum::<usize>()
            + gap * (glyphs.len() - 1)
            + 2 * pad;
        let mut canvas = vec![1.0f32; width * size];
        let mut pen = pad;
        for g in &glyphs {
            blit_min(&mut canvas, width, &g.image, &g.ink, pen, g.ink.y0);
            pen += g.ink.width() + gap;
        }
        GrayImage::new(width, size, canvas)
    }

    /// `size`x`size` render with the ink centered; labels wider than the
    /// square are scaled down to fit.
    pub fn render_glyph(&self, label: &str, size: usize) -> Result<GrayImage> {
        if size < 8 {
            return Err(Error::Config(format!("glyph size {size} below minimum 8")));
        }
        let text = self.render_text(label, size)?;
        let ink = text.ink_bbox(0.5).ok_or_else(|| self.missing(label))?;
        let scale = (size as f64 / text.width() as f64).min(1.0);
        let (cx, cy) = ink.center();
        let half = size as f64 / 2.0;
        GrayImage::from_fn(size, size, |x, y| {
            let fx = (x as f64 + 0.5 - half) / scale + cx - 0.5;
            let fy = (y as f64 + 0.5 - half) / scale + cy - 0.5;
            text.sample(fx, fy, 1.0)
        })
    }
}

/// Tight-box crop of a clean render, normalized the same way the decoder
/// normalizes localized boxes.
pub fn exemplar_crop(font: &FontSource, label: &str, render_size: usize, crop_size: usize) -> Result<GrayImage> {
    let text = font.render_text(label, render_size)?;
    let ink = text.ink_bbox(0.5).ok_or_else(|| font.missing(label))?;
    let tight = crate::types::crop(&text, &ink)?;
    Ok(normalize_crop(&tight, crop_size, crate::CROP_MARGIN))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("font")
        .to_string()
}

fn em_px(size: usize) -> f64 {
    size as f64 / (EM_TOP - EM_BOTTOM)
}

/// Darker-wins compositing of `src[region]` onto `dst` at (`x`, `y`).
pub(crate) fn blit_min(dst: &mut [f32], dst_width: usize, src: &GrayImage, region: &BBox, x: usize, y: usize) {
    let dst_height = dst.len() / dst_width;
    for sy in region.y0..region.y1 {
        let ty = y + sy - region.y0;
        if ty >= dst_height {
            break;
        }
        for sx in region.x0..region.x1 {
            let tx = x + sx - region.x0;
            if tx >= dst_width {
                break;
            }
            let d = &mut dst[ty * dst_width + tx];
            *d = d.min(src.get(sx, sy));
        }
    }
}

fn render_builtin(kind: &BuiltinKind, c: char, size: usize) -> GrayImage {
    let shape = builtin::shape(kind, c).expect("supported glyph has a shape");
    let em = em_px(size);
    let pad = 2.0;
    let width = ((shape.x_range.1 - shape.x_range.0) * em + 2.0 * pad).ceil().max(1.0) as usize;
    let px = 1.0 / em;
    let pixels = (0..size)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let ex = (x as f64 + 0.5 - pad) / em + shape.x_range.0;
            let ey = EM_TOP - (y as f64 + 0.5) / em;
            1.0 - shape.coverage(ex, ey, px) as f32
        })
        .collect();
    GrayImage::from_clamped(width, size, pixels).expect("canvas dimensions are positive")
}

fn render_ttf(font: &FontArc, c: char, size: usize) -> GrayImage {
    let scale = PxScale::from(size as f32 * 0.92);
    let scaled = font.as_scaled(scale);
    let baseline = (size as f32 - (scaled.ascent() - scaled.descent())) / 2.0 + scaled.ascent();
    let glyph = scaled.scaled_glyph(c);
    let pad = 2usize;
    let blank = || GrayImage::filled(1, size, 1.0).expect("positive size");
    let Some(outlined) = font.outline_glyph(glyph) else {
        return blank();
    };
    let bounds = outlined.px_bounds();
    let width = (bounds.width().ceil() as usize + 2 * pad).max(1);
    let mut canvas = vec![1.0f32; width * size];
    let top = bounds.min.y + baseline;
    outlined.draw(|x, y, cov| {
        let tx = x as usize + pad;
        let ty = top.floor() as i64 + y as i64;
        if ty >= 0 && (ty as usize) < size && tx < width {
            let p = &mut canvas[ty as usize * width + tx];
            *p = p.min(1.0 - cov.clamp(0.0, 1.0));
        }
    });
    GrayImage::from_clamped(width, size, canvas).unwrap_or_else(|_| blank())
}

fn render_bitmap(cell: &GrayImage, size: usize) -> GrayImage {
    let scale = size as f64 / cell.height() as f64;
    let width = ((cell.width() as f64 * scale).round() as usize).max(1);
    GrayImage::from_fn(width, size, |x, y| {
        cell.sample((x as f64 + 0.5) / scale - 0.5, (y as f64 + 0.5) / scale - 0.5, 1.0)
    })
    .expect("positive dimensions")
}
