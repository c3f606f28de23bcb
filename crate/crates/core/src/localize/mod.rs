//! Character and word localization behind a swappable [`Localizer`]
//! interface. [`ClassicalLocalizer`] binarizes with Otsu's threshold, takes
//! 8-connected ink components, drops specks and merges fragments that
//! belong to one glyph (the dot of an `i`, a diacritic). Words are runs of
//! characters separated by gaps smaller than a fraction of the median
//! character width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, GrayImage, TextDirection};

/// Boolean ink mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    ink: Vec<bool>,
}

impl BinaryMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.ink.iter().filter(|&&b| b).count()
    }
}

const BINS: usize = 256;

fn bin_of(p: f32) -> usize {
    ((p.clamp(0.0, 1.0) * (BINS - 1) as f32).round()) as usize
}

/// Otsu threshold bin: pixels in bins `<= t` form the dark class.
/// `None` when the histogram has a single populated bin.
fn otsu_bin(image: &GrayImage) -> Option<usize> {
    let mut hist = [0u64; BINS];
    for &p in image.pixels() {
        hist[bin_of(p)] += 1;
    }
    if hist.iter().filter(|&&h| h > 0).count() < 2 {
        return None;
    }
    let total = image.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    Some(best.1)
}

/// Otsu binarization with ink = true. Dark-background images are read with
/// flipped polarity; a constant image has no ink.
pub fn binarize(image: &GrayImage) -> BinaryMask {
    let (width, height) = (image.width(), image.height());
    let Some(t) = otsu_bin(image) else {
        return BinaryMask {
            width,
            height,
            ink: vec![false; width * height],
        };
    };
    let dark_background = bin_of(image.border_level()) <= t;
    let ink = image
        .pixels()
        .iter()
        .map(|&p| (bin_of(p) <= t) != dark_background)
        .collect();
    BinaryMask { width, height, ink }
}

/// Tunable constants of the classical localizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    /// Components smaller than this many pixels are noise.
    pub min_area: usize,
    /// Two components merge when their reading-axis extents overlap by
    /// at least this fraction of the shorter one...
    pub merge_overlap: f64,
    /// ...and the gap between them across the line is below this fraction
    /// of the median component extent across the line.
    pub merge_gap: f64,
    /// A new word starts when the gap exceeds this multiple of the median
    /// character width.
    pub word_gap_factor: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            min_area: 4,
            merge_overlap: 0.5,
            merge_gap: 0.25,
            word_gap_factor: 0.5,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_overlap >= 0.0 && self.merge_overlap <= 1.0) {
            return Err(Error::Config("localizer.merge_overlap must lie in [0, 1]".into()));
        }
        if !(self.merge_gap >= 0.0) || !(self.word_gap_factor > 0.0) {
            return Err(Error::Config(
                "localizer.merge_gap must be >= 0 and word_gap_factor > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Boxes for one line image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizerOutput {
    pub char_boxes: Vec<BBox>,
    /// Empty unless word boxes were requested.
    pub word_boxes: Vec<BBox>,
    pub direction: TextDirection,
}

/// Anything that can find character (and optionally word) boxes.
pub trait Localizer: Send + Sync {
    fn localize(&self, image: &GrayImage, direction: TextDirection, words: bool) -> Result<LocalizerOutput>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassicalLocalizer {
    pub config: LocalizerConfig,
}

impl ClassicalLocalizer {
    pub fn new(config: LocalizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(ClassicalLocalizer { config })
    }
}

impl Localizer for ClassicalLocalizer {
    fn localize(&self, image: &GrayImage, direction: TextDirection, words: bool) -> Result<LocalizerOutput> {
        if words && direction != TextDirection::HorizontalLtr {
            return Err(Error::Unsupported("word localization is horizontal-only".into()));
        }
        let char_boxes = chars_with(image, direction, &self.config);
        let word_boxes = if words {
            group_words(&char_boxes, self.config.word_gap_factor)
        } else {
            Vec::new()
        };
        Ok(LocalizerOutput {
            char_boxes,
            word_boxes,
            direction,
        })
    }
}

/// Character boxes with the default constants; unordered.
pub fn localize_chars(image: &GrayImage, direction: TextDirection) -> Vec<BBox> {
    chars_with(image, direction, &LocalizerConfig::default())
}

/// Word boxes of a horizontal line with the default constants.
pub fn localize_words(image: &GrayImage, direction: TextDirection) -> Result<Vec<BBox>> {
    Ok(ClassicalLocalizer::default().localize(image, direction, true)?.word_boxes)
}

/// Bounding boxes of the 8-connected ink components with at least
/// `min_area` pixels.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Vec<BBox> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask.ink[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0usize;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = ny * w + nx;
                    if mask.ink[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            out.push(BBox { x0, y0, x1, y1 });
        }
    }
    out
}

fn median(mut values: Vec<usize>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

fn gap(a: (usize, usize), b: (usize, usize)) -> usize {
    b.0.saturating_sub(a.1).max(a.0.saturating_sub(b.1))
}

fn should_merge(a: &BBox, b: &BBox, direction: TextDirection, cross_median: f64, cfg: &LocalizerConfig) -> bool {
    let (aa, ba) = (a.along(direction), b.along(direction));
    let shorter = (aa.1 - aa.0).min(ba.1 - ba.0) as f64;
    let shared = overlap(aa, ba) as f64;
    shared > 0.0 && shared >= cfg.merge_overlap * shorter
        && (gap(a.across(direction), b.across(direction)) as f64) < cfg.merge_gap * cross_median
}

fn chars_with(image: &GrayImage, direction: TextDirection, cfg: &LocalizerConfig) -> Vec<BBox> {
    let mut boxes = connected_components(&binarize(image), cfg.min_area);
    let cross_median = median(boxes.iter().map(|b| {
        let (s, e) = b.across(direction);
        e - s
    }).collect());
    loop {
        let mut merged = false;
        'scan: for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if should_merge(&boxes[i], &boxes[j], direction, cross_median, cfg) {
                    boxes[i] = boxes[i].union(&boxes[j]);
                    boxes.swap_remove(j);
                    merged = true;
                    break 'scan;
                }
            }
        }
        if !merged {
            return boxes;
        }
    }
}

/// Clusters horizontal character boxes into words.
fn group_words(chars: &[BBox], factor: f64) -> Vec<BBox> {
    let mut sorted = chars.to_vec();
    sorted.sort_by(|a, b| a.center().0.total_cmp(&b.center().0).then(a.x0.cmp(&b.x0)));
    let threshold = factor * median(chars.iter().map(BBox::width).collect());
    let mut words: Vec<BBox> = Vec::new();
    for b in sorted {
        match words.last_mut() {
            Some(w) if (b.x0 as f64 - w.x1 as f64) <= threshold => *w = w.union(&b),
            _ => words.push(b),
        }
    }
    words
}

#[derive(Serialize)]
struct DebugRecord<'a> {
    file_name: &'a str,
    width: usize,
    height: usize,
    direction: TextDirection,
    annotations: Vec<DebugAnnotation>,
}

#[derive(Serialize)]
struct DebugAnnotation {
    category: &'static str,
    bbox: [usize; 4],
    area: usize,
}

/// One-line JSON record of the boxes in COCO `[x, y, w, h]` form.
pub fn debug_coco(file_name: &str, image: &GrayImage, output: &LocalizerOutput) -> String {
    let annotations = output
        .char_boxes
        .iter()
        .map(|b| ("char", b))
        .chain(output.word_boxes.iter().map(|b| ("word", b)))
        .map(|(category, b)| DebugAnnotation {
            category,
            bbox: b.to_coco(),
            area: b.area(),
        })
        .collect();
    let record = DebugRecord {
        file_name,
        width: image.width(),
        height: image.height(),
        direction: output.direction,
        annotations,
    };
    serde_json::to_string(&record).expect("debug record serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{compose_line, FontSource, LineSpec};
    use crate::types::iou;

    const H: TextDirection = TextDirection::HorizontalLtr;

    fn sans() -> Vec<FontSource> {
        vec![FontSource::builtin("sans").unwrap()]
    }

    #[test]
    fn constant_image_has_no_ink() {
        for v in [0.0, 0.4, 1.0] {
            let img = GrayImage::filled(10, 6, v).unwrap();
            assert_eq!(binarize(&img).count(), 0);
            assert!(localize_chars(&img, H).is_empty());
        }
    }

    #[test]
    fn bimodal_image_splits_exactly() {
        let img = GrayImage::from_fn(20, 10, |x, _| if x < 10 { 0.1 } else { 0.9 }).unwrap();
        let mask = binarize(&img);
        for y in 0..10 {
            for x in 0..20 {
                assert_eq!(mask.get(x, y), x < 10);
            }
        }
    }

    #[test]
    fn ink_count_tracks_half_threshold() {
        for name in ["sans", "serif", "book"] {
            let font = FontSource::builtin(name).unwrap();
            let img = font.render_glyph("a", 48).unwrap();
            let direct = img.pixels().iter().filter(|&&p| p < 0.5).count() as f64;
            let otsu = binarize(&img).count() as f64;
            assert!((otsu - direct).abs() <= 0.1 * direct, "{name}: {otsu} vs {direct}");
        }
    }

    #[test]
    fn dark_background_flips_polarity() {
        let img = GrayImage::from_fn(20, 20, |x, y| if (5..9).contains(&x) && (4..16).contains(&y) { 0.95 } else { 0.05 })
            .unwrap();
        let boxes = localize_chars(&img, H);
        assert_eq!(boxes, vec![BBox::new(5, 4, 9, 16).unwrap()]);
    }

    #[test]
    fn pair_matches_ground_truth() {
        let line = compose_line(&LineSpec::new("ab", "sans"), &sans(), 3).unwrap();
        let boxes = localize_chars(&line.image, H);
        assert_eq!(boxes.len(), 2);
        for gt in &line.char_boxes {
            let best = boxes.iter().map(|b| iou(b, gt)).fold(0.0, f64::max);
            assert!(best >= 0.5, "iou {best}");
        }
    }

    #[test]
    fn dotted_letters_are_one_box() {
        for name in ["sans", "serif", "book", "typewriter", "rounded", "oblique"] {
            let fonts = vec![FontSource::builtin(name).unwrap()];
            for text in ["i", "j", "ij"] {
                let line = compose_line(&LineSpec::new(text, name), &fonts, 1).unwrap();
                let boxes = localize_chars(&line.image, H);
                assert_eq!(boxes.len(), text.len(), "{name} {text}");
            }
        }
    }

    #[test]
    fn specks_are_dropped() {
        let img = GrayImage::from_fn(20, 20, |x, y| if (x, y) == (3, 3) || (x, y) == (3, 4) { 0.0 } else { 1.0 }).unwrap();
        assert!(localize_chars(&img, H).is_empty());
    }

    #[test]
    fn word_gap_splits_words() {
        let line = compose_line(&LineSpec::new("a b", "sans").with_word_gap(1.0), &sans(), 1).unwrap();
        assert_eq!(localize_words(&line.image, H).unwrap().len(), 2);
    }

    #[test]
    fn single_word_is_union_of_chars() {
        let line = compose_line(&LineSpec::new("hello", "sans"), &sans(), 2).unwrap();
        let chars = localize_chars(&line.image, H);
        let words = localize_words(&line.image, H).unwrap();
        let union = chars.iter().skip(1).fold(chars[0], |acc, b| acc.union(b));
        assert_eq!(words, vec![union]);
        let blank = GrayImage::filled(30, 20, 1.0).unwrap();
        assert!(localize_words(&blank, H).unwrap().is_empty());
    }

    #[test]
    fn vertical_words_are_unsupported() {
        let img = GrayImage::filled(10, 10, 1.0).unwrap();
        let err = localize_words(&img, TextDirection::VerticalTtb).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn vertical_columns_split_per_glyph() {
        let line = compose_line(&LineSpec::new("abc", "sans").vertical(), &sans(), 4).unwrap();
        let boxes = localize_chars(&line.image, TextDirection::VerticalTtb);
        assert_eq!(boxes.len(), 3);
    }

    #[test]
    fn every_char_sits_in_one_word() {
        let line = compose_line(&LineSpec::new("the quick brown fox", "sans"), &sans(), 5).unwrap();
        let out = ClassicalLocalizer::default().localize(&line.image, H, true).unwrap();
        assert_eq!(out.word_boxes.len(), 4);
        for c in &out.char_boxes {
            let (cx, cy) = c.center();
            assert_eq!(out.word_boxes.iter().filter(|w| w.contains_point(cx, cy)).count(), 1);
            assert!(c.fits_within(line.image.width(), line.image.height()));
        }
    }

    #[test]
    fn debug_dump_is_coco() {
        let line = compose_line(&LineSpec::new("a b", "sans"), &sans(), 1).unwrap();
        let out = ClassicalLocalizer::default().localize(&line.image, H, true).unwrap();
        let v: serde_json::Value = serde_json::from_str(&debug_coco("l.png", &line.image, &out)).unwrap();
        assert_eq!(v["annotations"].as_array().unwrap().len(), 4);
        assert_eq!(v["annotations"][0]["bbox"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = LocalizerConfig {
            word_gap_factor: 0.0,
            ..LocalizerConfig::default()
        };
        assert!(ClassicalLocalizer::new(cfg).is_err());
    }
}
