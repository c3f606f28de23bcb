//! Word-level training data for an encoder shared by character and word
//! indexes.
//!
//! Word classes are trained alongside the character classes in one joint
//! catalog. Random letter strings ("distractors") are added as extra
//! classes; they never enter the word index, but they give the embedding
//! space room for strings that are not in the lexicon.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::augment::AugmentConfig;
use super::dataset::{make_crop_dataset_with, CropDataset, RenderConfig};
use super::font::FontSource;
use super::line::random_text;
use crate::error::{Error, Result};
use crate::rng::derive;
use crate::types::GlyphCatalog;

/// Fifty frequent English words, most frequent first.
pub const COMMON_WORDS: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "was", "for", "that", "on", "with", "as", "by", "at", "from", "his",
    "it", "be", "this", "are", "had", "not", "but", "which", "have", "they", "you", "were", "their", "one",
    "all", "we", "can", "her", "has", "there", "been", "if", "more", "when", "will", "would", "who", "so",
    "no", "new", "time", "people", "year", "city",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordConfig {
    /// Word labels trained jointly with the characters. Empty disables
    /// word training.
    pub lexicon: Vec<String>,
    pub distractors: usize,
    /// Inclusive length range of distractor strings.
    pub distractor_len: [usize; 2],
    pub variants_per_word: usize,
    pub augment: AugmentConfig,
}

impl Default for WordConfig {
    fn default() -> Self {
        WordConfig {
            lexicon: Vec::new(),
            distractors: 100,
            distractor_len: [2, 6],
            variants_per_word: 10,
            augment: word_augment(),
        }
    }
}

/// Milder geometry than the character default: whole-word crops are wide
/// and lose letters at the edges under large shifts.
pub fn word_augment() -> AugmentConfig {
    AugmentConfig {
        translate_frac: 0.05,
        scale_range: [0.9, 1.1],
        blur_sigma_range: [0.0, 0.6],
        ..AugmentConfig::default()
    }
}

impl WordConfig {
    pub fn common_english() -> Self {
        WordConfig {
            lexicon: COMMON_WORDS.iter().map(|w| w.to_string()).collect(),
            ..WordConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.distractor_len;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!("words.distractor_len {:?} must satisfy 2 <= lo <= hi", self.distractor_len)));
        }
        if self.variants_per_word == 0 {
            return Err(Error::Config("words.variants_per_word must be >= 1".into()));
        }
        self.augment.validate()
    }

    pub fn lexicon_catalog(&self) -> Result<GlyphCatalog> {
        if self.lexicon.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        GlyphCatalog::new(self.lexicon.iter().cloned())
    }

    /// `distractors` distinct strings over the letters of `chars`, none of
    /// which is a lexicon word or a character label.
    pub fn distractor_words(&self, chars: &GlyphCatalog, seed: u64) -> Result<Vec<String>> {
        let letters: Vec<char> = chars
            .labels()
            .iter()
            .filter_map(|l| {
                let mut it = l.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) if c.is_alphabetic() => Some(c),
                    _ => None,
                }
            })
            .collect();
        if self.distractors > 0 && letters.is_empty() {
            return Err(Error::Config("distractors need alphabetic character labels".into()));
        }
        let mut taken: HashSet<&str> = self.lexicon.iter().map(String::as_str).collect();
        taken.extend(chars.labels().iter().map(String::as_str));
        let [lo, hi] = self.distractor_len;
        let mut out: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        let mut k = 0u64;
        while out.len() < self.distractors {
            if k > 1000 * (self.distractors as u64 + 10) {
                return Err(Error::Config("cannot draw enough distinct distractors".into()));
            }
            let w = random_text(&letters, 1..=1, lo..=hi, derive(seed, &[k]));
            k += 1;
            if !taken.contains(w.as_str()) && seen.insert(w.clone()) {
                out.push(w);
            }
        }
        Ok(out)
    }
}

/// Character crops, lexicon word crops, and distractor crops under one
/// catalog: characters first, then the lexicon, then distractors.
pub fn make_joint_dataset(
    chars: &GlyphCatalog,
    words: &WordConfig,
    fonts: &[FontSource],
    char_variants: usize,
    char_augment: &AugmentConfig,
    render: &RenderConfig,
    seed: u64,
) -> Result<(GlyphCatalog, CropDataset)> {
    words.validate()?;
    let distractors = words.distractor_words(chars, derive(seed, &[2]))?;
    let word_labels: Vec<String> = words.lexicon.iter().cloned().chain(distractors).collect();
    let joint = GlyphCatalog::new(chars.labels().iter().cloned().chain(word_labels.iter().cloned()))?;
    let mut data = make_crop_dataset_with(chars, fonts, char_variants, char_augment, render, derive(seed, &[0]))?;
    if !word_labels.is_empty() {
        let word_catalog = GlyphCatalog::new(word_labels)?;
        let mut wd = make_crop_dataset_with(&word_catalog, fonts, words.variants_per_word, &words.augment, render, derive(seed, &[1]))?;
        for c in &mut wd.crops {
            c.class_id += chars.len();
        }
        data.extend(wd);
    }
    Ok((joint, data))
}
