use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::font::{blit_min, FontSource};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::types::{BBox, GrayImage, TextDirection};

/// Gap between neighboring glyphs before jitter, in em.
const LETTER_GAP: f64 = 0.12;
const MARGIN: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub text: String,
    #[serde(default)]
    pub direction: TextDirection,
    pub font_id: String,
    /// Canvas height of one glyph in pixels.
    #[serde(default = "default_glyph_size")]
    pub glyph_size: usize,
    /// Relative jitter of the letter gap, in [0, 1).
    #[serde(default = "default_spacing_jitter")]
    pub spacing_jitter: f64,
    /// Extra space per whitespace character, as a fraction of the em width.
    #[serde(default = "default_word_gap")]
    pub word_gap: f64,
}

fn default_glyph_size() -> usize {
    32
}
fn default_spacing_jitter() -> f64 {
    0.3
}
fn default_word_gap() -> f64 {
    0.5
}

impl LineSpec {
    pub fn new(text: impl Into<String>, font_id: impl Into<String>) -> Self {
        LineSpec {
            text: text.into(),
            direction: TextDirection::HorizontalLtr,
            font_id: font_id.into(),
            glyph_size: default_glyph_size(),
            spacing_jitter: default_spacing_jitter(),
            word_gap: default_word_gap(),
        }
    }

    pub fn vertical(mut self) -> Self {
        self.direction = TextDirection::VerticalTtb;
        self
    }

    pub fn with_word_gap(mut self, word_gap: f64) -> Self {
        self.word_gap = word_gap;
        self
    }
}

/// A rendered line with its ground truth.
#[derive(Clone, Debug)]
pub struct ComposedLine {
    pub image: GrayImage,
    /// One box per non-whitespace character, in reading order.
    pub char_boxes: Vec<BBox>,
    /// One box per whitespace-delimited word, in reading order.
    pub word_boxes: Vec<BBox>,
    pub transcript: String,
}

impl ComposedLine {
    /// Non-whitespace characters paired with their boxes.
    pub fn labeled_chars(&self) -> impl Iterator<Item = (char, BBox)> + '_ {
        self.transcript
            .chars()
            .filter(|c| !c.is_whitespace())
            .zip(self.char_boxes.iter().copied())
    }

    /// Words paired with their boxes.
    pub fn labeled_words(&self) -> impl Iterator<Item = (&str, BBox)> + '_ {
        self.transcript
            .split_whitespace()
            .zip(self.word_boxes.iter().copied())
    }
}

struct Placement {
    glyph: super::font::RenderedChar,
    x: usize,
    y: usize,
    word: usize,
}

/// Lays out `spec.text` glyph by glyph. Whitespace only advances the pen.
pub fn compose_line(spec: &LineSpec, fonts: &[FontSource], seed: u64) -> Result<ComposedLine> {
    if spec.text.trim().is_empty() {
        return Err(Error::Config("line text must contain a visible character".into()));
    }
    if spec.glyph_size < 8 {
        return Err(Error::Config("glyph_size must be at least 8".into()));
    }
    if !(0.0..1.0).contains(&spec.spacing_jitter) || spec.word_gap < 0.0 {
        return Err(Error::Config("spacing_jitter must be in [0,1), word_gap >= 0".into()));
    }
    let font = fonts
        .iter()
        .find(|f| f.id() == spec.font_id)
        .ok_or_else(|| Error::Config(format!("font '{}' not supplied", spec.font_id)))?;
    let mut rng = seeded(seed);
    let size = spec.glyph_size;
    let em = size as f64 / (super::builtin::EM_TOP - super::builtin::EM_BOTTOM);
    let margin = (MARGIN * em).round() as usize;
    let vertical = spec.direction == TextDirection::VerticalTtb;

    let mut placements: Vec<Placement> = Vec::new();
    let mut pen = margin as f64;
    let mut word = 0usize;
    let mut pending_space = false;
    for c in spec.text.chars() {
        if c.is_whitespace() {
            if !placements.is_empty() && !vertical {
                pen += spec.word_gap * em;
                pending_space = true;
            }
            continue;
        }
        if pending_space {
            word += 1;
            pending_space = false;
        }
        let glyph = font.render_char(c, size)?;
        let pos = pen.round() as usize;
        let along = if vertical { glyph.ink.height() } else { glyph.ink.width() };
        let (x, y) = if vertical { (0, pos) } else { (pos, margin) };
        placements.push(Placement { glyph, x, y, word });
        let jitter = 1.0 + spec.spacing_jitter * (2.0 * rng.gen::<f64>() - 1.0);
        pen = pos as f64 + along as f64 + LETTER_GAP * em * jitter;
    }

    // Column width for vertical text, canvas extents, then blit.
    let column = placements.iter().map(|p| p.glyph.ink.width()).max().unwrap_or(1);
    let (width, height) = if vertical {
        let last = placements.last().expect("text has a visible character");
        (column + 2 * margin, last.y + last.glyph.ink.height() + margin)
    } else {
        let last = placements.last().expect("text has a visible character");
        (last.x + last.glyph.ink.width() + margin, size + 2 * margin)
    };
    let mut canvas = vec![1.0f32; width * height];
    let mut char_boxes = Vec::with_capacity(placements.len());
    for p in &placements {
        let ink = p.glyph.ink;
        let (bx, by) = if vertical {
            (margin + (column - ink.width()) / 2, p.y)
        } else {
            (p.x, p.y + ink.y0)
        };
        // Blit one pixel beyond the ink box to keep the antialiased rim.
        let img = &p.glyph.image;
        let rim = BBox {
            x0: ink.x0.saturating_sub(1),
            y0: ink.y0.saturating_sub(1),
            x1: (ink.x1 + 1).min(img.width()),
            y1: (ink.y1 + 1).min(img.height()),
        };
        blit_min(&mut canvas, width, img, &rim, bx - (ink.x0 - rim.x0), by - (ink.y0 - rim.y0));
        char_boxes.push(BBox::new(bx, by, bx + ink.width(), by + ink.height())?);
    }
    let mut word_boxes: Vec<BBox> = Vec::new();
    for (p, b) in placements.iter().zip(&char_boxes) {
        match word_boxes.get_mut(p.word) {
            Some(w) => *w = w.union(b),
            None => word_boxes.push(*b),
        }
    }
    Ok(ComposedLine {
        image: GrayImage::new(width, height, canvas)?,
        char_boxes,
        word_boxes,
        transcript: spec.text.clone(),
    })
}

/// Random text: a word count drawn from `words`, each word of a length drawn
/// from `word_len` with characters uniform over `alphabet`.
pub fn random_text(alphabet: &[char], words: RangeInclusive<usize>, word_len: RangeInclusive<usize>, seed: u64) -> String {
    let mut rng = seeded(seed);
    let n = rng.gen_range(words);
    (0..n.max(1))
        .map(|_| {
            let len = rng.gen_range(word_len.clone()).max(1);
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}
