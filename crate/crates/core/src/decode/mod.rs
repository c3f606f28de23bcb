//! Line decoding: localize, embed every crop, take the label of the nearest
//! exemplar, then order the labels along the reading axis and place spaces
//! at wide gaps. Word mode tries whole-word exemplars first and falls back
//! to characters when the best word match is below a similarity threshold.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::argmax;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::index::ExemplarIndex;
use crate::localize::{ClassicalLocalizer, Localizer};
use crate::types::{crop, normalize_crop, BBox, CropSource, GlyphCatalog, GrayImage, LabeledCrop, TextDirection};
use crate::{CROP_MARGIN, CROP_SIZE};

/// Default cap on silver crops per word label.
pub const SILVER_CAP: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    #[default]
    Char,
    Word,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub direction: TextDirection,
    /// Word matches below this cosine similarity fall back to characters.
    pub word_fallback_threshold: f64,
    /// A space follows a glyph when the next gap exceeds this multiple of
    /// the median glyph extent along the line.
    pub space_gap_factor: f64,
    /// Alternatives kept per glyph.
    pub k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: DecodeMode::Char,
            direction: TextDirection::HorizontalLtr,
            word_fallback_threshold: 0.82,
            space_gap_factor: 0.5,
            k: 5,
        }
    }
}

impl DecodeConfig {
    pub fn word() -> Self {
        DecodeConfig {
            mode: DecodeMode::Word,
            ..DecodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.word_fallback_threshold > -1.0 && self.word_fallback_threshold <= 1.0) {
            return Err(Error::Config("decode.word_fallback_threshold must lie in (-1, 1]".into()));
        }
        if !(self.space_gap_factor > 0.0 && self.space_gap_factor.is_finite()) {
            return Err(Error::Config("decode.space_gap_factor must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("decode.k must be at least 1".into()));
        }
        if self.mode == DecodeMode::Word && self.direction != TextDirection::HorizontalLtr {
            return Err(Error::Unsupported("word mode is horizontal-only".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub label: String,
    pub similarity: f64,
}

/// Label for one crop: the best match and the top-k list it heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub label: String,
    pub similarity: f64,
    pub alternatives: Vec<Alternative>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub bbox: BBox,
    pub label: String,
    pub similarity: f64,
    pub alternatives: Vec<Alternative>,
    pub space_after: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    pub text: String,
    pub glyphs: Vec<Glyph>,
    pub fallback_events: usize,
}

impl LineResult {
    pub fn from_glyphs(glyphs: Vec<Glyph>, fallback_events: usize) -> Self {
        let mut text = String::new();
        for (i, g) in glyphs.iter().enumerate() {
            text.push_str(&g.label);
            if g.space_after && i + 1 < glyphs.len() {
                text.push(' ');
            }
        }
        LineResult {
            text,
            glyphs,
            fallback_events,
        }
    }
}

/// Maps normalized crops to labels.
pub trait Recognizer: Send + Sync {
    fn recognize(&self, crops: &[GrayImage], k: usize) -> Result<Vec<Recognition>>;
    /// Fingerprint of the encoder behind the labels.
    fn fingerprint(&self) -> &str;
}

/// Nearest-exemplar recognition.
#[derive(Clone, Debug)]
pub struct RetrievalRecognizer {
    encoder: Arc<Encoder>,
    index: ExemplarIndex,
}

impl RetrievalRecognizer {
    pub fn new(encoder: Arc<Encoder>, index: ExemplarIndex) -> Result<Self> {
        index.check_encoder(&encoder)?;
        Ok(RetrievalRecognizer { encoder, index })
    }

    pub fn index(&self) -> &ExemplarIndex {
        &self.index
    }

    pub fn encoder(&self) -> &Arc<Encoder> {
        &self.encoder
    }
}

impl Recognizer for RetrievalRecognizer {
    fn recognize(&self, crops: &[GrayImage], k: usize) -> Result<Vec<Recognition>> {
        let embeddings = self.encoder.embed(crops)?;
        embeddings
            .par_iter()
            .map(|e| {
                let hits = self.index.query(e, k.max(1))?;
                let alternatives: Vec<Alternative> = hits
                    .iter()
                    .map(|h| Alternative {
                        label: self.index.label(h.class_id).unwrap_or_default().to_string(),
                        similarity: h.similarity,
                    })
                    .collect();
                Ok(Recognition {
                    label: alternatives[0].label.clone(),
                    similarity: alternatives[0].similarity,
                    alternatives,
                })
            })
            .collect()
    }

    fn fingerprint(&self) -> &str {
        self.encoder.fingerprint()
    }
}

/// Softmax head over catalog classes; the reported similarity is the class
/// probability.
#[derive(Clone, Debug)]
pub struct ClassifierRecognizer {
    encoder: Arc<Encoder>,
    catalog: GlyphCatalog,
}

impl ClassifierRecognizer {
    pub fn new(encoder: Arc<Encoder>, catalog: GlyphCatalog) -> Result<Self> {
        let outputs = encoder.params().architecture().output_dim()?;
        if encoder.params().architecture().embeds() || outputs != catalog.len() {
            return Err(Error::IncompatibleModel(format!(
                "classifier needs {} logits without normalization, model emits {outputs}",
                catalog.len()
            )));
        }
        Ok(ClassifierRecognizer { encoder, catalog })
    }
}

impl Recognizer for ClassifierRecognizer {
    fn recognize(&self, crops: &[GrayImage], k: usize) -> Result<Vec<Recognition>> {
        let logits = self.encoder.outputs(crops)?;
        Ok(logits
            .iter()
            .map(|row| {
                let top = row[argmax(row)];
                let exp: Vec<f64> = row.iter().map(|v| (v - top).exp()).collect();
                let z: f64 = exp.iter().sum();
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                let alternatives: Vec<Alternative> = order
                    .iter()
                    .take(k.max(1))
                    .map(|&c| Alternative {
                        label: self.catalog.label(c).unwrap_or_default().to_string(),
                        similarity: exp[c] / z,
                    })
                    .collect();
                Recognition {
                    label: alternatives[0].label.clone(),
                    similarity: alternatives[0].similarity,
                    alternatives,
                }
            })
            .collect())
    }

    fn fingerprint(&self) -> &str {
        self.encoder.fingerprint()
    }
}

/// Reading order: ascending center along the reading axis, ties by the
/// other axis, then by input position.
pub fn order_boxes(boxes: &[BBox], direction: TextDirection) -> Vec<usize> {
    let key = |b: &BBox| {
        let (cx, cy) = b.center();
        match direction {
            TextDirection::HorizontalLtr => (cx, cy),
            TextDirection::VerticalTtb => (cy, cx),
        }
    };
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(&boxes[a]), key(&boxes[b]));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    order
}

/// Gap positions `j` (a space between glyph `j` and `j + 1`) for boxes in
/// reading order. Vertical text never gets spaces.
pub fn infer_spaces(ordered: &[BBox], cfg: &DecodeConfig) -> Vec<usize> {
    if cfg.direction == TextDirection::VerticalTtb || ordered.len() < 2 {
        return Vec::new();
    }
    let mut extents: Vec<usize> = ordered
        .iter()
        .map(|b| {
            let (s, e) = b.along(cfg.direction);
            e - s
        })
        .collect();
    extents.sort_unstable();
    let n = extents.len();
    let median = if n % 2 == 1 {
        extents[n / 2] as f64
    } else {
        (extents[n / 2 - 1] + extents[n / 2]) as f64 / 2.0
    };
    let threshold = cfg.space_gap_factor * median;
    ordered
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            let gap = w[1].along(cfg.direction).0 as f64 - w[0].along(cfg.direction).1 as f64;
            gap > threshold
        })
        .map(|(j, _)| j)
        .collect()
}

/// The normalized encoder input for one box of a line image.
pub fn crop_for_box(image: &GrayImage, bbox: &BBox) -> Result<GrayImage> {
    Ok(normalize_crop(&crop(image, bbox)?, CROP_SIZE, CROP_MARGIN))
}

fn glyph(bbox: BBox, r: Recognition) -> Glyph {
    Glyph {
        bbox,
        label: r.label,
        similarity: r.similarity,
        alternatives: r.alternatives,
        space_after: false,
    }
}

/// Ordered, recognized glyphs for the given boxes, without spaces.
fn recognize_ordered(image: &GrayImage, boxes: &[BBox], rec: &dyn Recognizer, cfg: &DecodeConfig) -> Result<Vec<Glyph>> {
    let order = order_boxes(boxes, cfg.direction);
    let ordered: Vec<BBox> = order.iter().map(|&i| boxes[i]).collect();
    let crops = ordered.iter().map(|b| crop_for_box(image, b)).collect::<Result<Vec<_>>>()?;
    let recs = if crops.is_empty() { Vec::new() } else { rec.recognize(&crops, cfg.k)? };
    Ok(ordered.into_iter().zip(recs).map(|(b, r)| glyph(b, r)).collect())
}

/// Character mode over externally supplied boxes.
pub fn recognize_boxes(image: &GrayImage, boxes: &[BBox], rec: &dyn Recognizer, cfg: &DecodeConfig) -> Result<LineResult> {
    for b in boxes {
        if !b.fits_within(image.width(), image.height()) {
            return Err(Error::Bounds {
                box_desc: b.to_string(),
                width: image.width(),
                height: image.height(),
            });
        }
    }
    let mut glyphs = recognize_ordered(image, boxes, rec, cfg)?;
    let ordered: Vec<BBox> = glyphs.iter().map(|g| g.bbox).collect();
    for j in infer_spaces(&ordered, cfg) {
        glyphs[j].space_after = true;
    }
    Ok(LineResult::from_glyphs(glyphs, 0))
}

/// Character mode with the classical localizer.
pub fn recognize_line(image: &GrayImage, rec: &dyn Recognizer, cfg: &DecodeConfig) -> Result<LineResult> {
    recognize_line_with(image, &ClassicalLocalizer::default(), rec, cfg)
}

pub fn recognize_line_with(
    image: &GrayImage,
    localizer: &dyn Localizer,
    rec: &dyn Recognizer,
    cfg: &DecodeConfig,
) -> Result<LineResult> {
    cfg.validate()?;
    let out = localizer.localize(image, cfg.direction, false)?;
    recognize_boxes(image, &out.char_boxes, rec, cfg)
}

/// Word mode with the classical localizer.
pub fn recognize_line_words(
    image: &GrayImage,
    words: &dyn Recognizer,
    chars: &dyn Recognizer,
    cfg: &DecodeConfig,
) -> Result<LineResult> {
    recognize_line_words_with(image, &ClassicalLocalizer::default(), words, chars, cfg)
}

/// Character boxes grouped by the word box containing their center, with
/// words in reading order.
fn chars_per_word(words: &[BBox], chars: &[BBox]) -> Vec<Vec<BBox>> {
    let mut members = vec![Vec::new(); words.len()];
    for c in chars {
        let (cx, cy) = c.center();
        if let Some(w) = words.iter().position(|w| w.contains_point(cx, cy)) {
            members[w].push(*c);
        }
    }
    members
}

pub fn recognize_line_words_with(
    image: &GrayImage,
    localizer: &dyn Localizer,
    words: &dyn Recognizer,
    chars: &dyn Recognizer,
    cfg: &DecodeConfig,
) -> Result<LineResult> {
    cfg.validate()?;
    if words.fingerprint() != chars.fingerprint() {
        return Err(Error::IncompatibleModel(
            "word and character indexes come from different encoders".into(),
        ));
    }
    let out = localizer.localize(image, TextDirection::HorizontalLtr, true)?;
    let order = order_boxes(&out.word_boxes, TextDirection::HorizontalLtr);
    let word_boxes: Vec<BBox> = order.iter().map(|&i| out.word_boxes[i]).collect();
    if word_boxes.is_empty() {
        return Ok(LineResult::default());
    }
    let members = chars_per_word(&word_boxes, &out.char_boxes);
    let crops = word_boxes.iter().map(|b| crop_for_box(image, b)).collect::<Result<Vec<_>>>()?;
    let word_recs = words.recognize(&crops, cfg.k)?;

    let mut fallback_events = 0;
    let mut glyphs = Vec::new();
    for ((wb, r), inner) in word_boxes.iter().zip(word_recs).zip(&members) {
        let mut piece = if r.similarity >= cfg.word_fallback_threshold {
            vec![glyph(*wb, r)]
        } else {
            fallback_events += 1;
            recognize_ordered(image, inner, chars, cfg)?
        };
        if let Some(last) = piece.last_mut() {
            last.space_after = true;
        }
        glyphs.extend(piece);
    }
    if let Some(last) = glyphs.last_mut() {
        last.space_after = false;
    }
    Ok(LineResult::from_glyphs(glyphs, fallback_events))
}

/// A complete line decoder.
pub trait LineDecoder: Send + Sync {
    fn decode(&self, image: &GrayImage) -> Result<LineResult>;
}

/// Localizer, recognizers and configuration bundled together.
pub struct Pipeline {
    pub localizer: Box<dyn Localizer>,
    pub chars: Box<dyn Recognizer>,
    pub words: Option<Box<dyn Recognizer>>,
    pub config: DecodeConfig,
}

impl Pipeline {
    pub fn chars(chars: Box<dyn Recognizer>, config: DecodeConfig) -> Result<Self> {
        config.validate()?;
        if config.mode == DecodeMode::Word {
            return Err(Error::Config("word mode needs a word recognizer".into()));
        }
        Ok(Pipeline {
            localizer: Box::new(ClassicalLocalizer::default()),
            chars,
            words: None,
            config,
        })
    }

    pub fn words(words: Box<dyn Recognizer>, chars: Box<dyn Recognizer>, config: DecodeConfig) -> Result<Self> {
        let config = DecodeConfig {
            mode: DecodeMode::Word,
            ..config
        };
        config.validate()?;
        if words.fingerprint() != chars.fingerprint() {
            return Err(Error::IncompatibleModel(
                "word and character indexes come from different encoders".into(),
            ));
        }
        Ok(Pipeline {
            localizer: Box::new(ClassicalLocalizer::default()),
            chars,
            words: Some(words),
            config,
        })
    }

    pub fn with_localizer(mut self, localizer: Box<dyn Localizer>) -> Self {
        self.localizer = localizer;
        self
    }
}

impl LineDecoder for Pipeline {
    fn decode(&self, image: &GrayImage) -> Result<LineResult> {
        match (&self.words, self.config.mode) {
            (Some(words), DecodeMode::Word) => {
                recognize_line_words_with(image, self.localizer.as_ref(), words.as_ref(), self.chars.as_ref(), &self.config)
            }
            _ => recognize_line_with(image, self.localizer.as_ref(), self.chars.as_ref(), &self.config),
        }
    }
}

/// Decodes many lines in parallel on the current rayon pool.
pub fn decode_lines(decoder: &dyn LineDecoder, images: &[GrayImage]) -> Vec<Result<LineResult>> {
    images.par_iter().map(|img| decoder.decode(img)).collect()
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Default worker count: available cores, at most four.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(4)
}

/// Word crops labeled by the character model: every word whose decoded
/// string is in `word_catalog`, at most `cap` crops per label, in line
/// order.
pub fn generate_silver(
    chars: &dyn Recognizer,
    lines: &[GrayImage],
    word_catalog: &GlyphCatalog,
    cap: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<LabeledCrop>> {
    if cap == 0 {
        return Err(Error::Config("silver cap must be at least 1".into()));
    }
    let localizer = ClassicalLocalizer::default();
    let per_line: Vec<Vec<(String, GrayImage)>> = lines
        .par_iter()
        .map(|image| {
            let out = localizer.localize(image, TextDirection::HorizontalLtr, true)?;
            let order = order_boxes(&out.word_boxes, TextDirection::HorizontalLtr);
            let words: Vec<BBox> = order.iter().map(|&i| out.word_boxes[i]).collect();
            let members = chars_per_word(&words, &out.char_boxes);
            let mut found = Vec::new();
            for (wb, inner) in words.iter().zip(&members) {
                let text: String = recognize_ordered(image, inner, chars, cfg)?
                    .into_iter()
                    .map(|g| g.label)
                    .collect();
                found.push((text, crop_for_box(image, wb)?));
            }
            Ok(found)
        })
        .collect::<Result<_>>()?;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut out = Vec::new();
    for (text, image) in per_line.into_iter().flatten() {
        if let Some(class_id) = word_catalog.class_id(&text) {
            let n = counts.entry(class_id).or_default();
            if *n < cap {
                *n += 1;
                out.push(LabeledCrop {
                    image,
                    class_id,
                    source: CropSource::Silver,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonGlyph<'a> {
    bbox: [usize; 4],
    label: &'a str,
    similarity: f64,
    alternatives: &'a [Alternative],
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    path: &'a str,
    text: &'a str,
    glyphs: Vec<JsonGlyph<'a>>,
    fallback_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// One JSON Lines record; glyph boxes are COCO `[x, y, w, h]`.
pub fn json_line(path: &str, result: &LineResult) -> String {
    let glyphs = result
        .glyphs
        .iter()
        .map(|g| JsonGlyph {
            bbox: g.bbox.to_coco(),
            label: &g.label,
            similarity: g.similarity,
            alternatives: &g.alternatives,
        })
        .collect();
    serde_json::to_string(&JsonRecord {
        path,
        text: &result.text,
        glyphs,
        fallback_events: result.fallback_events,
        error: None,
    })
    .expect("record serializes")
}

/// Record for a line that failed to decode.
pub fn json_error_line(path: &str, error: &Error) -> String {
    let message = error.to_string();
    serde_json::to_string(&JsonRecord {
        path,
        text: "",
        glyphs: Vec::new(),
        fallback_events: 0,
        error: Some(&message),
    })
    .expect("record serializes")
}
