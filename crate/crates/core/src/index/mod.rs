//! Exact inner-product index over exemplar embeddings.
//!
//! An index is built once from clean renders of every catalog label and is
//! immutable afterwards. Queries are a full scan; with unit-norm vectors
//! the inner product is the cosine similarity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{dot32, Embedding, Encoder};
use crate::error::{Error, Result};
use crate::synth::{exemplar_crop, FontSource};
use crate::types::{GlyphCatalog, GrayImage};
use crate::CROP_SIZE;

const FORMAT: &str = "retrieval-ocr-index";
pub const INDEX_VERSION: u32 = 1;
/// Canvas height used for exemplar renders.
pub const EXEMPLAR_RENDER_SIZE: usize = 40;

/// One query result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub class_id: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarIndex {
    dim: usize,
    catalog: GlyphCatalog,
    class_ids: Vec<usize>,
    embeddings: Vec<f32>,
    encoder_fingerprint: String,
    warnings: Vec<String>,
}

impl ExemplarIndex {
    /// Assembles an index from precomputed unit-norm embeddings.
    pub fn from_embeddings(
        catalog: GlyphCatalog,
        entries: Vec<(usize, Embedding)>,
        encoder_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let dim = entries.first().map_or(0, |(_, e)| e.dim());
        if entries.is_empty() || dim == 0 {
            return Err(Error::Config("an index needs at least one entry".into()));
        }
        let mut class_ids = Vec::with_capacity(entries.len());
        let mut embeddings = Vec::with_capacity(entries.len() * dim);
        for (c, e) in entries {
            if c >= catalog.len() {
                return Err(Error::Config(format!("class id {c} outside a catalog of {}", catalog.len())));
            }
            if e.dim() != dim {
                return Err(Error::Shape(format!("entry of dimension {}, expected {dim}", e.dim())));
            }
            if (e.norm() - 1.0).abs() > 1e-5 {
                return Err(Error::Shape(format!("entry for class {c} is not unit norm")));
            }
            class_ids.push(c);
            embeddings.extend_from_slice(e.values());
        }
        Ok(ExemplarIndex {
            dim,
            catalog,
            class_ids,
            embeddings,
            encoder_fingerprint: encoder_fingerprint.into(),
            warnings: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn catalog(&self) -> &GlyphCatalog {
        &self.catalog
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    /// Labels skipped during the build.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn embedding(&self, entry: usize) -> &[f32] {
        &self.embeddings[entry * self.dim..(entry + 1) * self.dim]
    }

    pub fn label(&self, class_id: usize) -> Option<&str> {
        self.catalog.label(class_id)
    }

    /// Top `k` entries by inner product, similarity descending, ties by
    /// ascending class id then entry order. `k` larger than the index
    /// returns every entry.
    pub fn query(&self, e: &Embedding, k: usize) -> Result<Vec<Hit>> {
        if e.dim() != self.dim {
            return Err(Error::Shape(format!("query of dimension {}, index holds {}", e.dim(), self.dim)));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut scored: Vec<(f64, usize, usize)> = self
            .embeddings
            .chunks_exact(self.dim)
            .zip(&self.class_ids)
            .enumerate()
            .map(|(i, (v, &c))| (dot32(e.values(), v), c, i))
            .collect();
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(similarity, class_id, _)| Hit { class_id, similarity })
            .collect())
    }

    /// Nearest entry.
    pub fn nearest(&self, e: &Embedding) -> Result<Hit> {
        Ok(self.query(e, 1)?[0])
    }

    /// Fails unless `encoder` produced this index.
    pub fn check_encoder(&self, encoder: &Encoder) -> Result<()> {
        if encoder.fingerprint() != self.encoder_fingerprint {
            return Err(Error::IncompatibleModel(format!(
                "index was built by encoder {}, queries come from {}",
                self.encoder_fingerprint,
                encoder.fingerprint()
            )));
        }
        Ok(())
    }
}

/// Embeds one clean render per catalog label. Labels the font cannot
/// render are skipped with a warning.
pub fn build_index(encoder: &Encoder, exemplar_font: &FontSource, catalog: &GlyphCatalog) -> Result<ExemplarIndex> {
    build_index_multi(encoder, std::slice::from_ref(exemplar_font), catalog)
}

/// One entry per (font, label) pair the fonts can render.
pub fn build_index_multi(encoder: &Encoder, fonts: &[FontSource], catalog: &GlyphCatalog) -> Result<ExemplarIndex> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut images: Vec<(usize, GrayImage)> = Vec::new();
    let mut warnings = Vec::new();
    for font in fonts {
        for (id, label) in catalog.iter() {
            match exemplar_crop(font, label, EXEMPLAR_RENDER_SIZE, CROP_SIZE) {
                Ok(img) => images.push((id, img)),
                Err(Error::GlyphMissing { .. }) => {
                    let msg = format!("font '{}' cannot render {label:?}; excluded from the index", font.id());
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut index = index_from_images(encoder, catalog, images)?;
    index.warnings = warnings;
    Ok(index)
}

/// Index over caller-supplied exemplar crops.
pub fn index_from_images(encoder: &Encoder, catalog: &GlyphCatalog, images: Vec<(usize, GrayImage)>) -> Result<ExemplarIndex> {
    if images.is_empty() {
        return Err(Error::Config("no exemplar could be rendered".into()));
    }
    let (ids, crops): (Vec<usize>, Vec<GrayImage>) = images.into_iter().unzip();
    let embeddings = encoder.embed(&crops)?;
    ExemplarIndex::from_embeddings(catalog.clone(), ids.into_iter().zip(embeddings).collect(), encoder.fingerprint())
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
    catalog_digest: String,
    labels: Vec<String>,
    encoder_fingerprint: String,
}

pub fn index_to_bytes(index: &ExemplarIndex) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        version: INDEX_VERSION,
        dim: index.dim,
        count: index.len(),
        catalog_digest: index.catalog.digest(),
        labels: index.catalog.labels().to_vec(),
        encoder_fingerprint: index.encoder_fingerprint.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * index.embeddings.len() + 4 * index.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &index.embeddings {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &c in &index.class_ids {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out
}

/// Parses an index file without checking which encoder it belongs to.
pub fn index_from_bytes(bytes: &[u8]) -> Result<ExemplarIndex> {
    let format_err = |m: &str| Error::Format(format!("index: {m}"));
    let len = bytes
        .get(..8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
        .ok_or_else(|| format_err("file shorter than its length prefix"))?;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| format_err("header truncated"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| format_err(&e.to_string()))?;
    if header.format != FORMAT {
        return Err(format_err("not an index file"));
    }
    if header.version != INDEX_VERSION {
        return Err(Error::IncompatibleModel(format!("index version {}", header.version)));
    }
    let catalog = GlyphCatalog::new(header.labels).map_err(|e| format_err(&e.to_string()))?;
    if catalog.digest() != header.catalog_digest {
        return Err(format_err("catalog digest mismatch"));
    }
    let body = &bytes[8 + len..];
    let n_floats = header.dim.checked_mul(header.count).ok_or_else(|| format_err("size overflow"))?;
    if header.dim == 0 || header.count == 0 || body.len() != 4 * n_floats + 4 * header.count {
        return Err(format_err("body length does not match the header"));
    }
    let (emb_bytes, id_bytes) = body.split_at(4 * n_floats);
    let embeddings: Vec<f32> = emb_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let class_ids: Vec<usize> = id_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if class_ids.iter().any(|&c| c >= catalog.len()) {
        return Err(format_err("class id outside the catalog"));
    }
    for row in embeddings.chunks_exact(header.dim) {
        let n = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= 1e-5) {
            return Err(format_err("entry is not unit norm"));
        }
    }
    Ok(ExemplarIndex {
        dim: header.dim,
        catalog,
        class_ids,
        embeddings,
        encoder_fingerprint: header.encoder_fingerprint,
        warnings: Vec::new(),
    })
}

pub fn save_index(index: &ExemplarIndex, path: &Path) -> Result<()> {
    fs::write(path, index_to_bytes(index)).map_err(|e| Error::io(path, e))
}

/// Loads an index and verifies it was built by `encoder`.
pub fn load_index(path: &Path, encoder: &Encoder) -> Result<ExemplarIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let index = index_from_bytes(&bytes)?;
    index.check_encoder(encoder)?;
    Ok(index)
}
