//! Desk-scale training experiments. A synthetic base of augmented font
//! renders is combined with character crops annotated on a labeled
//! target-domain line set (rendered in styles the base never sees), and
//! every model is scored by CER on a disjoint slice of that line set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{eval_corpus, EvalReport};
use crate::contrastive::{train, train_classifier, TrainOptions, TrainerConfig};
use crate::decode::{crop_for_box, ClassifierRecognizer, DecodeConfig, Pipeline, Recognizer, RetrievalRecognizer};
use crate::encoder::{Architecture, Encoder, EncoderParams};
use crate::error::{Error, Result};
use crate::index::build_index;
use crate::rng::{derive, seeded};
use crate::synth::{
    compose_line, make_crop_dataset_with, random_text, AugmentConfig, ComposedLine, FontSource, FontSpec, LineSpec,
    RenderConfig,
};
use crate::types::{CropSource, GlyphCatalog, GrayImage, LabeledCrop};

/// Training shares of the target set used for sample-efficiency curves.
pub const DEFAULT_SPLITS: [f64; 5] = [0.70, 0.50, 0.20, 0.05, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Catalog labels; empty means the caseless alphanumeric catalog.
    pub labels: Vec<String>,
    pub train_fonts: Vec<FontSpec>,
    pub exemplar_font: FontSpec,
    /// Styles of the target domain; lines cycle through them.
    pub target_fonts: Vec<FontSpec>,
    pub variants_per_class: usize,
    pub augment: AugmentConfig,
    pub render: RenderConfig,
    pub trainer: TrainerConfig,
    /// Size of the labeled target line set that splits are cut from.
    pub target_lines: usize,
    pub words_per_line: [usize; 2],
    pub word_len: [usize; 2],
    /// Share of catalog classes that target annotations exist for.
    pub target_class_coverage: f64,
    /// Training share of the target set in the ablation suite.
    pub ablation_train_fraction: f64,
}

fn builtin(name: &str) -> FontSpec {
    FontSpec::Builtin(name.to_string())
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 17,
            labels: Vec::new(),
            train_fonts: ["sans", "sans-bold", "light-wide", "oblique", "serif", "angular"]
                .into_iter()
                .map(builtin)
                .collect(),
            exemplar_font: builtin("book"),
            target_fonts: vec![builtin("pixel"), builtin("typewriter"), builtin("rounded")],
            variants_per_class: 20,
            augment: AugmentConfig::default(),
            render: RenderConfig::default(),
            trainer: TrainerConfig {
                classes_per_batch: 36,
                ..TrainerConfig::default()
            },
            target_lines: 400,
            words_per_line: [2, 5],
            word_len: [1, 7],
            target_class_coverage: 1.0,
            ablation_train_fraction: 0.7,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_fonts.is_empty() || self.target_fonts.is_empty() {
            return Err(Error::Config("experiment needs training and target fonts".into()));
        }
        if self.variants_per_class == 0 || self.target_lines < 2 {
            return Err(Error::Config("experiment needs variants and at least two target lines".into()));
        }
        if !(0.0..=1.0).contains(&self.target_class_coverage) || !(0.0..1.0).contains(&self.ablation_train_fraction) {
            return Err(Error::Config(
                "target_class_coverage must lie in [0, 1] and ablation_train_fraction in [0, 1)".into(),
            ));
        }
        let ok = |r: [usize; 2]| r[0] >= 1 && r[0] <= r[1];
        if !ok(self.words_per_line) || !ok(self.word_len) {
            return Err(Error::Config("words_per_line and word_len must be ordered and positive".into()));
        }
        self.trainer.validate()?;
        self.augment.validate()
    }

    pub fn catalog(&self) -> Result<GlyphCatalog> {
        if self.labels.is_empty() {
            Ok(GlyphCatalog::alphanumeric())
        } else {
            GlyphCatalog::new(self.labels.iter().cloned())
        }
    }
}

/// Everything an experiment trains and evaluates on, built once.
struct Prepared {
    catalog: GlyphCatalog,
    exemplar: FontSource,
    synthetic: Vec<LabeledCrop>,
    target: Vec<ComposedLine>,
    covered: Vec<bool>,
}

impl Prepared {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let catalog = cfg.catalog()?;
        let fonts = cfg.train_fonts.iter().map(FontSpec::open).collect::<Result<Vec<_>>>()?;
        let synthetic = make_crop_dataset_with(
            &catalog,
            &fonts,
            cfg.variants_per_class,
            &cfg.augment,
            &cfg.render,
            derive(cfg.seed, &[0]),
        )?
        .crops;
        let target_fonts = cfg.target_fonts.iter().map(FontSpec::open).collect::<Result<Vec<_>>>()?;
        let alphabet: Vec<char> = catalog
            .iter()
            .filter_map(|(_, l)| {
                let mut cs = l.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        if alphabet.is_empty() {
            return Err(Error::Config("experiments need single-character labels".into()));
        }
        let target = (0..cfg.target_lines)
            .map(|i| {
                let text = random_text(
                    &alphabet,
                    cfg.words_per_line[0]..=cfg.words_per_line[1],
                    cfg.word_len[0]..=cfg.word_len[1],
                    derive(cfg.seed, &[1, i as u64]),
                );
                let font = &target_fonts[i % target_fonts.len()];
                compose_line(&LineSpec::new(text, font.id()), &target_fonts, derive(cfg.seed, &[2, i as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ids: Vec<usize> = (0..catalog.len()).collect();
        ids.shuffle(&mut seeded(derive(cfg.seed, &[3])));
        let n_covered = (cfg.target_class_coverage * catalog.len() as f64).ceil() as usize;
        let mut covered = vec![false; catalog.len()];
        for &c in ids.iter().take(n_covered) {
            covered[c] = true;
        }
        Ok(Prepared {
            catalog,
            exemplar: cfg.exemplar_font.open()?,
            synthetic,
            target,
            covered,
        })
    }

    /// Train and test line ranges for a training share `fraction`.
    fn split(&self, fraction: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.target.len();
        let train = ((fraction * n as f64).round() as usize).min(n);
        let test = (((1.0 - fraction) / 2.0 * n as f64).round() as usize).clamp(1, n - train.min(n - 1));
        (0..train, n - test..n)
    }

    /// Annotated character crops of covered classes from the given lines.
    fn target_crops(&self, lines: std::ops::Range<usize>) -> Result<Vec<LabeledCrop>> {
        let mut out = Vec::new();
        for line in &self.target[lines] {
            for (c, bbox) in line.labeled_chars() {
                let label = c.to_lowercase().to_string();
                let Some(class_id) = self.catalog.class_id(&label) else { continue };
                if self.covered[class_id] {
                    out.push(LabeledCrop {
                        image: crop_for_box(&line.image, &bbox)?,
                        class_id,
                        source: CropSource::TargetAnnotation,
                    });
                }
            }
        }
        Ok(out)
    }

    fn test_set(&self, lines: std::ops::Range<usize>) -> Vec<(GrayImage, String)> {
        self.target[lines]
            .iter()
            .map(|l| (l.image.clone(), l.transcript.clone()))
            .collect()
    }

    fn retrieval(&self, params: EncoderParams) -> Result<RetrievalRecognizer> {
        let encoder = Arc::new(Encoder::new(params));
        let index = build_index(&encoder, &self.exemplar, &self.catalog)?;
        RetrievalRecognizer::new(encoder, index)
    }
}

fn evaluate(rec: impl Recognizer + 'static, test: &[(GrayImage, String)]) -> Result<EvalReport> {
    let pipeline = Pipeline::chars(Box::new(rec), DecodeConfig::default())?;
    eval_corpus(&pipeline, test)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub target_crops: usize,
    pub test_lines: usize,
    pub cer: f64,
}

/// Retrains from the same seed for every training share of the target
/// set and reports CER on the matching held-out slice.
pub fn sample_efficiency(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<CurvePoint>> {
    if fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
        return Err(Error::Config("split fractions must lie in [0, 1)".into()));
    }
    let prep = Prepared::new(cfg)?;
    fractions
        .iter()
        .map(|&fraction| {
            let (train_lines, test_lines) = prep.split(fraction);
            let target = prep.target_crops(train_lines)?;
            let target_crops = target.len();
            let mut data = prep.synthetic.clone();
            data.extend(target);
            let out = train(&data, &prep.catalog, &cfg.trainer, cfg.seed)?;
            let test = prep.test_set(test_lines);
            let report = evaluate(prep.retrieval(out.params)?, &test)?;
            log::info!("split {fraction}: {target_crops} target crops, CER {:.4}", report.cer);
            Ok(CurvePoint {
                fraction,
                target_crops,
                test_lines: test.len(),
                cer: report.cer,
            })
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("fraction,target_crops,test_lines,cer\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{:.6}", p.fraction, p.target_crops, p.test_lines, p.cer);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    HardNegativesOff,
    NoSynthetic,
    Classifier,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::HardNegativesOff => "hard-negatives-off",
            Variant::NoSynthetic => "no-synthetic",
            Variant::Classifier => "classifier-head",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub train_crops: usize,
    /// Crop sources present in the variant's training data.
    pub sources: Vec<CropSource>,
    pub cer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub test_lines: usize,
    pub covered_classes: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn cer(&self, variant: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.cer)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} test lines, target crops cover {} classes\n{:<20} {:>11} {:>8}\n",
            self.test_lines, self.covered_classes, "variant", "train_crops", "cer"
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:<20} {:>11} {:>8.4}", r.variant.name(), r.train_crops, r.cer);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,train_crops,cer\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6}", r.variant.name(), r.train_crops, r.cer);
        }
        out
    }
}

fn sources(data: &[LabeledCrop]) -> Vec<CropSource> {
    let mut s: Vec<CropSource> = Vec::new();
    for c in data {
        if !s.contains(&c.source) {
            s.push(c.source);
        }
    }
    s
}

/// Restricts `data` to the classes it contains, renumbered densely.
fn compact(data: &[LabeledCrop], catalog: &GlyphCatalog) -> Result<(GlyphCatalog, Vec<LabeledCrop>)> {
    let mut present: Vec<usize> = data.iter().map(|c| c.class_id).collect();
    present.sort_unstable();
    present.dedup();
    let remap: HashMap<usize, usize> = present.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let labels = present.iter().map(|&c| catalog.label(c).unwrap_or_default().to_string());
    let sub = GlyphCatalog::new(labels)?;
    let crops = data
        .iter()
        .map(|c| LabeledCrop {
            class_id: remap[&c.class_id],
            ..c.clone()
        })
        .collect();
    Ok((sub, crops))
}

/// Baseline, hard negatives off, target crops only, and a softmax head,
/// each trained from the same seed and scored on the same test lines.
/// The hard-negatives-off model is the baseline's first stage, which is
/// trained identically to a run with hard negatives disabled.
pub fn ablation_suite(cfg: &ExperimentConfig) -> Result<AblationReport> {
    let prep = Prepared::new(cfg)?;
    let (train_lines, test_lines) = prep.split(cfg.ablation_train_fraction);
    let target = prep.target_crops(train_lines)?;
    let test = prep.test_set(test_lines);
    let mut full = prep.synthetic.clone();
    full.extend(target.iter().cloned());
    let trainer = TrainerConfig {
        hard_negatives: true,
        ..cfg.trainer.clone()
    };
    let mut rows = Vec::new();

    let base = train(&full, &prep.catalog, &trainer, cfg.seed)?;
    let stage1 = base.stage1.clone().expect("hard negatives were enabled");
    for (variant, params) in [(Variant::Baseline, base.params), (Variant::HardNegativesOff, stage1)] {
        let cer = evaluate(prep.retrieval(params)?, &test)?.cer;
        log::info!("{}: CER {cer:.4}", variant.name());
        rows.push(AblationRow {
            variant,
            train_crops: full.len(),
            sources: sources(&full),
            cer,
        });
    }

    let only_target: Vec<LabeledCrop> = full
        .iter()
        .filter(|c| matches!(c.source, CropSource::TargetAnnotation | CropSource::Silver))
        .cloned()
        .collect();
    let (sub_catalog, sub_data) = compact(&only_target, &prep.catalog)?;
    let out = train(&sub_data, &sub_catalog, &trainer, cfg.seed)?;
    let cer = evaluate(prep.retrieval(out.params)?, &test)?.cer;
    log::info!("no-synthetic: CER {cer:.4}");
    rows.push(AblationRow {
        variant: Variant::NoSynthetic,
        train_crops: sub_data.len(),
        sources: sources(&sub_data),
        cer,
    });

    let opts = TrainOptions {
        architecture: Architecture::standard(),
        ..TrainOptions::default()
    };
    let head = train_classifier(&full, &prep.catalog, &trainer, cfg.seed, &opts)?;
    let rec = ClassifierRecognizer::new(Arc::new(Encoder::new(head.params)), prep.catalog.clone())?;
    let cer = evaluate(rec, &test)?.cer;
    log::info!("classifier-head: CER {cer:.4}");
    rows.push(AblationRow {
        variant: Variant::Classifier,
        train_crops: full.len(),
        sources: sources(&full),
        cer,
    });

    Ok(AblationReport {
        test_lines: test.len(),
        covered_classes: prep.covered.iter().filter(|&&c| c).count(),
        rows,
    })
}
