//! Synthetic line corpora with optional out-of-lexicon tokens.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LineSample;
use super::font::{FontSource, FontSpec};
use super::line::{compose_line, random_text, LineSpec};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::types::TextDirection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub lines: usize,
    /// Lines cycle through these fonts.
    pub fonts: Vec<FontSpec>,
    pub words_per_line: [usize; 2],
    /// Length range of random words.
    pub word_len: [usize; 2],
    /// Draw in-vocabulary words from the lexicon instead of random strings.
    pub use_lexicon: bool,
    /// Share of tokens replaced by random strings absent from the lexicon.
    pub oov_rate: f64,
    pub oov_len: [usize; 2],
    pub glyph_size: usize,
    pub spacing_jitter: f64,
    pub word_gap: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            lines: 200,
            fonts: vec![FontSpec::Builtin("book".into())],
            words_per_line: [2, 5],
            word_len: [1, 7],
            use_lexicon: false,
            oov_rate: 0.0,
            oov_len: [5, 7],
            glyph_size: 32,
            spacing_jitter: 0.3,
            word_gap: 0.5,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [usize; 2]| {
            if r[0] >= 1 && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::Config(format!("corpus.{name} {r:?} must satisfy 1 <= lo <= hi")))
            }
        };
        ordered("words_per_line", self.words_per_line)?;
        ordered("word_len", self.word_len)?;
        ordered("oov_len", self.oov_len)?;
        if self.fonts.is_empty() {
            return Err(Error::Config("corpus.fonts is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.oov_rate) {
            return Err(Error::Config("corpus.oov_rate must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.spacing_jitter) || self.word_gap < 0.0 {
            return Err(Error::Config("corpus.spacing_jitter must lie in [0, 1) and word_gap be >= 0".into()));
        }
        Ok(())
    }
}

/// Renders `cfg.lines` lines. Exactly `round(oov_rate * tokens)` tokens,
/// at seeded positions, are random strings over `alphabet` that are not
/// lexicon words.
pub fn make_corpus(cfg: &CorpusConfig, alphabet: &[char], lexicon: &[String], seed: u64) -> Result<Vec<LineSample>> {
    cfg.validate()?;
    if alphabet.is_empty() {
        return Err(Error::Config("corpus alphabet is empty".into()));
    }
    if cfg.use_lexicon && lexicon.is_empty() {
        return Err(Error::Config("corpus.use_lexicon needs a non-empty lexicon".into()));
    }
    let fonts = cfg.fonts.iter().map(FontSpec::open).collect::<Result<Vec<FontSource>>>()?;
    let in_lexicon: HashSet<&str> = lexicon.iter().map(String::as_str).collect();

    let mut rng = seeded(derive(seed, &[0]));
    let counts: Vec<usize> = (0..cfg.lines)
        .map(|_| rng.gen_range(cfg.words_per_line[0]..=cfg.words_per_line[1]))
        .collect();
    let total: usize = counts.iter().sum();
    let mut oov = vec![false; total];
    let n_oov = (cfg.oov_rate * total as f64).round() as usize;
    oov[..n_oov].fill(true);
    oov.shuffle(&mut seeded(derive(seed, &[1])));

    let mut samples = Vec::with_capacity(cfg.lines);
    let mut t = 0;
    for (i, &n) in counts.iter().enumerate() {
        let mut tokens = Vec::with_capacity(n);
        for j in 0..n {
            let key = [2, i as u64, j as u64];
            let token = if oov[t] {
                let mut k = 0u64;
                loop {
                    let w = random_text(alphabet, 1..=1, cfg.oov_len[0]..=cfg.oov_len[1], derive(seed, &[key[0], key[1], key[2], k]));
                    if !in_lexicon.contains(w.as_str()) {
                        break w;
                    }
                    k += 1;
                }
            } else if cfg.use_lexicon {
                lexicon[seeded(derive(seed, &key)).gen_range(0..lexicon.len())].clone()
            } else {
                random_text(alphabet, 1..=1, cfg.word_len[0]..=cfg.word_len[1], derive(seed, &key))
            };
            tokens.push(token);
            t += 1;
        }
        let font = &fonts[i % fonts.len()];
        let spec = LineSpec {
            glyph_size: cfg.glyph_size,
            spacing_jitter: cfg.spacing_jitter,
            word_gap: cfg.word_gap,
            ..LineSpec::new(tokens.join(" "), font.id())
        };
        let line = compose_line(&spec, &fonts, derive(seed, &[3, i as u64]))?;
        samples.push(LineSample {
            file: format!("line_{i:05}.png"),
            font_id: font.id().to_string(),
            direction: TextDirection::HorizontalLtr,
            line,
        });
    }
    Ok(samples)
}
