//! Shared domain types: grayscale rasters, boxes, reading direction, the
//! glyph catalog and labeled crops, plus the small set of pixel and geometry
//! primitives that every other module builds on.
//!
//! Intensity convention: `0.0` is black ink, `1.0` is white background.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!("pixel value {p} outside [0,1]")));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from raw values, clamping each into `[0, 1]`.
    /// NaN becomes background.
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) };
        }
        GrayImage::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::from_clamped(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Full-image box.
    pub fn bounds(&self) -> BBox {
        BBox {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    /// Tight box around pixels darker than `threshold`, if any.
    pub fn ink_bbox(&self, threshold: f32) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            for (x, &p) in row.iter().enumerate() {
                if p < threshold {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then_some(BBox { x0, y0, x1, y1 })
    }

    /// Median of the one-pixel border, used as the fill for padding.
    pub fn border_level(&self) -> f32 {
        let (w, h) = (self.width, self.height);
        let mut border = Vec::with_capacity(2 * (w + h));
        for x in 0..w {
            border.push(self.get(x, 0));
            border.push(self.get(x, h - 1));
        }
        for y in 0..h {
            border.push(self.get(0, y));
            border.push(self.get(w - 1, y));
        }
        border.sort_by(f32::total_cmp);
        border[border.len() / 2]
    }

    /// Bilinear sample at a continuous pixel-center coordinate; outside the
    /// raster the `fill` value is used.
    pub fn sample(&self, fx: f64, fy: f64, fill: f32) -> f32 {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let at = |x: i64, y: i64| -> f32 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                fill
            } else {
                self.pixels[y as usize * self.width + x as usize]
            }
        };
        if tx == 0.0 && ty == 0.0 {
            return at(xi, yi);
        }
        let top = at(xi, yi) * (1.0 - tx) + at(xi + 1, yi) * tx;
        let bottom = at(xi, yi + 1) * (1.0 - tx) + at(xi + 1, yi + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        crate::imageio::read_png(path.as_ref())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::imageio::write_png(self, path.as_ref())
    }
}

/// Axis-aligned integer box with the top-left origin; `x1`/`y1` are exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Bounds {
                box_desc: format!("({x0},{y0},{x1},{y1})"),
                width: x1.saturating_sub(x0),
                height: y1.saturating_sub(y0),
            });
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    /// Rounds real coordinates to the nearest pixel edge.
    pub fn from_f64(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = |v: f64| v.round().max(0.0) as usize;
        BBox::new(r(x0), r(y0), r(x1), r(y1))
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn translate(&self, dx: usize, dy: usize) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Extent along the reading axis and across it, as `(start, end)` pairs.
    pub(crate) fn along(&self, direction: TextDirection) -> (usize, usize) {
        match direction {
            TextDirection::HorizontalLtr => (self.x0, self.x1),
            TextDirection::VerticalTtb => (self.y0, self.y1),
        }
    }

    pub(crate) fn across(&self, direction: TextDirection) -> (usize, usize) {
        match direction {
            TextDirection::HorizontalLtr => (self.y0, self.y1),
            TextDirection::VerticalTtb => (self.x0, self.x1),
        }
    }

    /// COCO `[x, y, width, height]`.
    pub fn to_coco(&self) -> [usize; 4] {
        [self.x0, self.y0, self.width(), self.height()]
    }

    pub fn from_coco(b: [usize; 4]) -> Result<Self> {
        BBox::new(b[0], b[1], b[0] + b[2], b[1] + b[3])
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextDirection {
    #[default]
    HorizontalLtr,
    VerticalTtb,
}

/// Copies the region `bbox` out of `image`.
pub fn crop(image: &GrayImage, bbox: &BBox) -> Result<GrayImage> {
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 || !bbox.fits_within(image.width, image.height) {
        return Err(Error::Bounds {
            box_desc: bbox.to_string(),
            width: image.width,
            height: image.height,
        });
    }
    let mut pixels = Vec::with_capacity(bbox.area());
    for y in bbox.y0..bbox.y1 {
        pixels.extend_from_slice(&image.pixels[y * image.width + bbox.x0..y * image.width + bbox.x1]);
    }
    Ok(GrayImage {
        width: bbox.width(),
        height: bbox.height(),
        pixels,
    })
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Pads `image` to a square with its border level (never stretching) and
/// resamples it to `size`x`size`, leaving `margin` pixels of background on
/// the long side. Downscaling averages a supersampled grid.
pub fn normalize_crop(image: &GrayImage, size: usize, margin: usize) -> GrayImage {
    let fill = image.border_level();
    let side = image.width.max(image.height) as f64;
    let inner = (size.saturating_sub(2 * margin)).max(1) as f64;
    let scale = inner / side;
    let offset_x = (size as f64 - image.width as f64 * scale) / 2.0;
    let offset_y = (size as f64 - image.height as f64 * scale) / 2.0;
    let sub = (1.0 / scale).ceil().clamp(1.0, 8.0) as usize;
    let mut pixels = Vec::with_capacity(size * size);
    for oy in 0..size {
        for ox in 0..size {
            let mut acc = 0.0f32;
            for sy in 0..sub {
                for sx in 0..sub {
                    let px = ox as f64 + (sx as f64 + 0.5) / sub as f64;
                    let py = oy as f64 + (sy as f64 + 0.5) / sub as f64;
                    let fx = (px - offset_x) / scale - 0.5;
                    let fy = (py - offset_y) / scale - 0.5;
                    acc += image.sample(fx, fy, fill);
                }
            }
            pixels.push((acc / (sub * sub) as f32).clamp(0.0, 1.0));
        }
    }
    GrayImage {
        width: size,
        height: size,
        pixels,
    }
}

/// Where a training crop came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropSource {
    FontRender,
    TargetAnnotation,
    Silver,
}

#[derive(Clone, Debug)]
pub struct LabeledCrop {
    pub image: GrayImage,
    pub class_id: usize,
    pub source: CropSource,
}

/// Dense, gap-free mapping between class ids and their string labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphCatalog {
    labels: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl GlyphCatalog {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut lookup = HashMap::with_capacity(labels.len());
        for (id, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Config(format!("catalog entry {id} is empty")));
            }
            if lookup.insert(label.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate catalog label {label:?}")));
            }
        }
        Ok(GlyphCatalog { labels, lookup })
    }

    /// Caseless alphanumerics: `0-9` then `a-z`.
    pub fn alphanumeric() -> Self {
        let labels = ('0'..='9').chain('a'..='z').map(String::from);
        GlyphCatalog::new(labels).expect("static catalog is valid")
    }

    /// One label per non-empty line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GlyphCatalog::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.labels.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, class_id: usize) -> Option<&str> {
        self.labels.get(class_id).map(String::as_str)
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.lookup.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.labels.iter().enumerate().map(|(i, l)| (i, l.as_str()))
    }

    /// Order-sensitive digest of the labels.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for l in &self.labels {
            h.update(l.as_bytes());
            h.update([0u8]);
        }
        hex16(&h.finalize())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
