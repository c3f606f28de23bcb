//! Crop and line datasets, in memory and on disk.
//!
//! Crop datasets are a directory of PNGs plus `manifest.json`; line datasets
//! are PNG lines plus COCO-style `annotations.json`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::font::{exemplar_crop, FontSource};
use super::line::ComposedLine;
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};
use crate::types::{BBox, CropSource, GlyphCatalog, GrayImage, LabeledCrop, TextDirection};
use crate::CROP_SIZE;

/// Render sizes used when producing font crops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Canvas height of the clean render.
    pub render_size: usize,
    /// Augmented variants draw their canvas height from this range, which
    /// simulates scans at different resolutions.
    pub render_size_range: [usize; 2],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            render_size: 40,
            render_size_range: [24, 56],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CropDataset {
    pub crops: Vec<LabeledCrop>,
    /// Augmentation seed per crop; `None` for clean renders.
    pub seeds: Vec<Option<u64>>,
    /// (font, label) pairs that could not be rendered.
    pub warnings: Vec<String>,
}

impl CropDataset {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    pub fn push(&mut self, crop: LabeledCrop, seed: Option<u64>) {
        self.crops.push(crop);
        self.seeds.push(seed);
    }

    pub fn extend(&mut self, other: CropDataset) {
        self.crops.extend(other.crops);
        self.seeds.extend(other.seeds);
        self.warnings.extend(other.warnings);
    }
}

/// One clean render per (class, font) plus `variants_per_class - 1`
/// augmented variants per font.
pub fn make_crop_dataset(
    catalog: &GlyphCatalog,
    fonts: &[FontSource],
    variants_per_class: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<CropDataset> {
    make_crop_dataset_with(catalog, fonts, variants_per_class, cfg, &RenderConfig::default(), seed)
}

pub fn make_crop_dataset_with(
    catalog: &GlyphCatalog,
    fonts: &[FontSource],
    variants_per_class: usize,
    cfg: &AugmentConfig,
    render: &RenderConfig,
    seed: u64,
) -> Result<CropDataset> {
    if variants_per_class == 0 {
        return Err(Error::Config("variants_per_class must be >= 1".into()));
    }
    cfg.validate()?;
    let mut out = CropDataset::default();
    for (class_id, label) in catalog.iter() {
        for (font_idx, font) in fonts.iter().enumerate() {
            let clean = match exemplar_crop(font, label, render.render_size, CROP_SIZE) {
                Ok(img) => img,
                Err(Error::GlyphMissing { .. }) => {
                    let msg = format!("font '{}' cannot render {label:?}; skipped", font.id());
                    log::warn!("{msg}");
                    out.warnings.push(msg);
                    continue;
                }
                Err(e) => return Err(e),
            };
            out.push(
                LabeledCrop {
                    image: clean,
                    class_id,
                    source: CropSource::FontRender,
                },
                None,
            );
            for k in 1..variants_per_class {
                let s = derive(seed, &[class_id as u64, font_idx as u64, k as u64]);
                let mut rng = seeded(s);
                let [lo, hi] = render.render_size_range;
                let size = rng.gen_range(lo.min(hi)..=hi.max(lo));
                let base = exemplar_crop(font, label, size, CROP_SIZE)?;
                out.push(
                    LabeledCrop {
                        image: augment(&base, cfg, s),
                        class_id,
                        source: CropSource::FontRender,
                    },
                    Some(s),
                );
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CropManifest {
    catalog: Vec<String>,
    crops: Vec<CropRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CropRecord {
    file: String,
    class_id: usize,
    label: String,
    source: CropSource,
    seed: Option<u64>,
}

pub fn save_crop_dataset(dir: &Path, catalog: &GlyphCatalog, data: &CropDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(data.len());
    for (i, (crop, seed)) in data.crops.iter().zip(&data.seeds).enumerate() {
        let file = format!("{i:06}.png");
        crop.image.save_png(dir.join(&file))?;
        records.push(CropRecord {
            file,
            class_id: crop.class_id,
            label: catalog.label(crop.class_id).unwrap_or_default().to_string(),
            source: crop.source,
            seed: *seed,
        });
    }
    let manifest = CropManifest {
        catalog: catalog.labels().to_vec(),
        crops: records,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_crop_dataset(dir: &Path) -> Result<(GlyphCatalog, CropDataset)> {
    let manifest: CropManifest = read_json(&dir.join("manifest.json"))?;
    let catalog = GlyphCatalog::new(manifest.catalog)?;
    let mut data = CropDataset::default();
    for r in manifest.crops {
        if catalog.label(r.class_id) != Some(r.label.as_str()) {
            return Err(Error::Format(format!("{}: label/class mismatch", r.file)));
        }
        let image = GrayImage::load_png(dir.join(&r.file))?;
        data.push(
            LabeledCrop {
                image,
                class_id: r.class_id,
                source: r.source,
            },
            r.seed,
        );
    }
    Ok((catalog, data))
}

/// A line image with ground truth, as stored in a line dataset.
#[derive(Clone, Debug)]
pub struct LineSample {
    pub file: String,
    pub font_id: String,
    pub direction: TextDirection,
    pub line: ComposedLine,
}

#[derive(Serialize, Deserialize)]
struct Coco {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: usize,
    file_name: String,
    width: usize,
    height: usize,
    text: String,
    font_id: String,
    direction: TextDirection,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: usize,
    image_id: usize,
    /// Index into `categories`: 0 = char, 1 = word.
    category_id: usize,
    bbox: [usize; 4],
    area: usize,
    iscrowd: u8,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: usize,
    name: String,
}

pub fn save_line_dataset(dir: &Path, samples: &[LineSample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut coco = Coco {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: vec![
            CocoCategory { id: 0, name: "char".into() },
            CocoCategory { id: 1, name: "word".into() },
        ],
    };
    for (id, s) in samples.iter().enumerate() {
        s.line.image.save_png(dir.join(&s.file))?;
        coco.images.push(CocoImage {
            id,
            file_name: s.file.clone(),
            width: s.line.image.width(),
            height: s.line.image.height(),
            text: s.line.transcript.clone(),
            font_id: s.font_id.clone(),
            direction: s.direction,
        });
        let chars = s.line.labeled_chars().map(|(c, b)| (0, c.to_string(), b));
        let words = s.line.labeled_words().map(|(w, b)| (1, w.to_string(), b));
        for (category_id, label, b) in chars.chain(words).collect::<Vec<_>>() {
            coco.annotations.push(CocoAnnotation {
                id: coco.annotations.len(),
                image_id: id,
                category_id,
                bbox: b.to_coco(),
                area: b.area(),
                iscrowd: 0,
                label,
            });
        }
    }
    write_json(&dir.join("annotations.json"), &coco)
}

pub fn load_line_dataset(dir: &Path) -> Result<Vec<LineSample>> {
    let coco: Coco = read_json(&dir.join("annotations.json"))?;
    let mut samples: Vec<LineSample> = Vec::with_capacity(coco.images.len());
    for img in &coco.images {
        let image = GrayImage::load_png(dir.join(&img.file_name))?;
        samples.push(LineSample {
            file: img.file_name.clone(),
            font_id: img.font_id.clone(),
            direction: img.direction,
            line: ComposedLine {
                image,
                char_boxes: Vec::new(),
                word_boxes: Vec::new(),
                transcript: img.text.clone(),
            },
        });
    }
    let by_id: std::collections::HashMap<usize, usize> =
        coco.images.iter().enumerate().map(|(i, img)| (img.id, i)).collect();
    for a in &coco.annotations {
        let &i = by_id
            .get(&a.image_id)
            .ok_or_else(|| Error::Format(format!("annotation {} has unknown image", a.id)))?;
        let b = BBox::from_coco(a.bbox)?;
        match a.category_id {
            0 => samples[i].line.char_boxes.push(b),
            1 => samples[i].line.word_boxes.push(b),
            other => return Err(Error::Format(format!("unknown category {other}"))),
        }
    }
    Ok(samples)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
