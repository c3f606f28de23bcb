use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::loss::{supcon_loss, LossOutput};
use super::mining::{mine_hard_negatives, NeighborMap};
use super::optim::{adamw_step, AdamState};
use super::sampler::{class_pools, intersperse_hard_sets, sample_epoch, TrainingBatch};
use super::TrainerConfig;
use crate::encoder::{
    backward_double, forward_double, save_weights, Architecture, Encoder, EncoderParams,
};
use crate::error::{Error, Result};
use crate::rng::derive;
use crate::types::{GlyphCatalog, GrayImage, LabeledCrop};

/// Held-out crops scored against a set of exemplar crops.
#[derive(Clone, Debug, Default)]
pub struct Validation {
    pub queries: Vec<LabeledCrop>,
    pub exemplars: Vec<LabeledCrop>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    /// Mean loss per batch element.
    pub loss: f64,
    pub val_top1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOptions<'a> {
    pub architecture: Architecture,
    pub validation: Option<&'a Validation>,
    /// Receives `config.json`, `history.csv` and weight checkpoints.
    pub run_dir: Option<&'a Path>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            architecture: Architecture::standard(),
            validation: None,
            run_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Final parameters: stage 2 when hard negatives are on, else stage 1.
    pub params: EncoderParams,
    /// Stage-1 parameters when a second stage ran.
    pub stage1: Option<EncoderParams>,
    pub neighbors: Option<NeighborMap>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    SupCon,
    Softmax,
}

/// Two-stage contrastive training with default options.
pub fn train(dataset: &[LabeledCrop], catalog: &GlyphCatalog, cfg: &TrainerConfig, seed: u64) -> Result<TrainOutput> {
    train_with(dataset, catalog, cfg, seed, &TrainOptions::default())
}

/// Stage 1 without hard negatives; then, if enabled, mine neighbors with the
/// stage-1 encoder, reinitialize from `seed` and train stage 2 with hard sets.
pub fn train_with(
    dataset: &[LabeledCrop],
    catalog: &GlyphCatalog,
    cfg: &TrainerConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dataset(dataset, catalog, &opts.architecture)?;
    if !opts.architecture.embeds() {
        return Err(Error::Config("contrastive training needs a normalized embedding output".into()));
    }
    let mut run = Run::start(opts.run_dir, cfg, seed, &opts.architecture, "supcon")?;

    let mut params = EncoderParams::init(&opts.architecture, seed)?;
    let ctx = StageContext {
        dataset,
        catalog,
        cfg,
        seed,
        validation: opts.validation,
        objective: Objective::SupCon,
    };
    ctx.run(1, &mut params, None, &mut run)?;
    if !cfg.hard_negatives {
        run.checkpoint("final.weights", &params)?;
        return Ok(TrainOutput {
            params,
            stage1: None,
            neighbors: None,
            history: run.history,
        });
    }
    run.checkpoint("stage1.weights", &params)?;
    let neighbors = mine_hard_negatives(&Encoder::new(params.clone()), dataset, cfg.hard_negative_k)?;
    log::info!("mined {} nearest classes for {} crops", cfg.hard_negative_k, neighbors.len());
    let stage1 = params;
    let mut params = EncoderParams::init(&opts.architecture, seed)?;
    ctx.run(2, &mut params, Some(&neighbors), &mut run)?;
    run.checkpoint("final.weights", &params)?;
    Ok(TrainOutput {
        params,
        stage1: Some(stage1),
        neighbors: Some(neighbors),
        history: run.history,
    })
}

/// Softmax classifier over the same architecture plus a class head,
/// trained on the same m-per-class batches. Hard negatives are not used.
pub fn train_classifier(
    dataset: &[LabeledCrop],
    catalog: &GlyphCatalog,
    cfg: &TrainerConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let arch = if opts.architecture.embeds() {
        opts.architecture.with_classifier_head(catalog.len())
    } else {
        opts.architecture.clone()
    };
    if arch.output_dim()? != catalog.len() {
        return Err(Error::Config(format!(
            "classifier emits {} logits for {} classes",
            arch.output_dim()?,
            catalog.len()
        )));
    }
    check_dataset(dataset, catalog, &arch)?;
    let mut run = Run::start(opts.run_dir, cfg, seed, &arch, "softmax")?;
    let mut params = EncoderParams::init(&arch, seed)?;
    let ctx = StageContext {
        dataset,
        catalog,
        cfg,
        seed,
        validation: opts.validation,
        objective: Objective::Softmax,
    };
    ctx.run(1, &mut params, None, &mut run)?;
    run.checkpoint("final.weights", &params)?;
    Ok(TrainOutput {
        params,
        stage1: None,
        neighbors: None,
        history: run.history,
    })
}

fn check_dataset(dataset: &[LabeledCrop], catalog: &GlyphCatalog, arch: &Architecture) -> Result<()> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    class_pools(dataset, catalog)?;
    if catalog.len() < 2 {
        return Err(Error::DegenerateBatch(
            "a single class offers no negatives to contrast against".into(),
        ));
    }
    let [h, w, _] = arch.input;
    if let Some(c) = dataset.iter().find(|c| c.image.width() != w || c.image.height() != h) {
        return Err(Error::Shape(format!(
            "training crop is {}x{}, the encoder takes {w}x{h}",
            c.image.width(),
            c.image.height()
        )));
    }
    Ok(())
}

/// Sum of per-sample softmax cross-entropies and the gradient on the logits.
pub fn softmax_cross_entropy(logits: &[Vec<f64>], class_ids: &[usize]) -> Result<LossOutput> {
    if logits.len() != class_ids.len() {
        return Err(Error::Shape(format!("{} logit rows, {} labels", logits.len(), class_ids.len())));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &c) in logits.iter().zip(class_ids) {
        if c >= row.len() {
            return Err(Error::Shape(format!("label {c} outside {} logits", row.len())));
        }
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        loss += lse - row[c];
        let mut g: Vec<f64> = row.iter().map(|v| (v - lse).exp()).collect();
        g[c] -= 1.0;
        grads.push(g);
    }
    Ok(LossOutput { loss, grads })
}

/// Fraction of queries whose most similar exemplar has their class.
pub fn retrieval_top1(encoder: &Encoder, validation: &Validation) -> Result<f64> {
    if validation.queries.is_empty() || validation.exemplars.is_empty() {
        return Err(Error::UndefinedMetric("validation needs queries and exemplars".into()));
    }
    let images = |crops: &[LabeledCrop]| crops.iter().map(|c| c.image.clone()).collect::<Vec<_>>();
    let ex = encoder.embed(&images(&validation.exemplars))?;
    let q = encoder.embed(&images(&validation.queries))?;
    let hits = q
        .iter()
        .zip(&validation.queries)
        .filter(|(e, crop)| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (x, exemplar) in ex.iter().zip(&validation.exemplars) {
                let s = e.dot(x);
                if s > best.0 {
                    best = (s, exemplar.class_id);
                }
            }
            best.1 == crop.class_id
        })
        .count();
    Ok(hits as f64 / q.len() as f64)
}

fn classifier_top1(encoder: &Encoder, validation: &Validation) -> Result<f64> {
    if validation.queries.is_empty() {
        return Err(Error::UndefinedMetric("validation needs queries".into()));
    }
    let images: Vec<GrayImage> = validation.queries.iter().map(|c| c.image.clone()).collect();
    let logits = encoder.outputs(&images)?;
    let hits = logits
        .iter()
        .zip(&validation.queries)
        .filter(|(row, crop)| argmax(row) == crop.class_id)
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

struct StageContext<'a> {
    dataset: &'a [LabeledCrop],
    catalog: &'a GlyphCatalog,
    cfg: &'a TrainerConfig,
    seed: u64,
    validation: Option<&'a Validation>,
    objective: Objective,
}

impl StageContext<'_> {
    fn run(&self, stage: u8, params: &mut EncoderParams, neighbors: Option<&NeighborMap>, run: &mut Run) -> Result<()> {
        let mut state = AdamState::new(params);
        let adamw = self.cfg.adamw();
        for epoch in 0..self.cfg.epochs {
            let mut batches = sample_epoch(
                self.dataset,
                self.catalog,
                self.cfg,
                derive(self.seed, &[stage as u64, epoch as u64, 0]),
            )?;
            if let Some(nm) = neighbors {
                batches = intersperse_hard_sets(
                    &batches,
                    self.dataset,
                    self.catalog,
                    nm,
                    self.cfg,
                    derive(self.seed, &[stage as u64, epoch as u64, 1]),
                )?;
            }
            let (mut total, mut count) = (0.0, 0usize);
            for batch in &batches {
                total += self.step(params, batch, &mut state, &adamw)?;
                count += batch.len();
            }
            let val_top1 = match self.validation {
                Some(v) => {
                    let enc = Encoder::new(params.clone());
                    Some(match self.objective {
                        Objective::SupCon => retrieval_top1(&enc, v)?,
                        Objective::Softmax => classifier_top1(&enc, v)?,
                    })
                }
                None => None,
            };
            let record = EpochRecord {
                stage,
                epoch: epoch + 1,
                loss: total / count as f64,
                val_top1,
            };
            log::info!(
                "stage {stage} epoch {}/{}: loss {:.4}{}",
                record.epoch,
                self.cfg.epochs,
                record.loss,
                val_top1.map(|v| format!(", val top-1 {v:.3}")).unwrap_or_default()
            );
            run.record(record)?;
        }
        Ok(())
    }

    fn step(
        &self,
        params: &mut EncoderParams,
        batch: &TrainingBatch,
        state: &mut AdamState,
        adamw: &super::AdamWConfig,
    ) -> Result<f64> {
        let images: Vec<GrayImage> = batch.items.iter().map(|&i| self.dataset[i].image.clone()).collect();
        let labels = batch.class_ids();
        let double = params.to_double();
        let cache = forward_double(&double, &images)?;
        let out = match self.objective {
            Objective::SupCon => supcon_loss(cache.outputs(), &labels, self.cfg.temperature)?,
            Objective::Softmax => softmax_cross_entropy(cache.outputs(), &labels)?,
        };
        let grads = backward_double(&double, &cache, &out.grads)?;
        adamw_step(params, &grads, state, adamw)?;
        Ok(out.loss)
    }
}

/// Run directory bookkeeping.
struct Run<'a> {
    dir: Option<&'a Path>,
    history: Vec<EpochRecord>,
}

#[derive(Serialize)]
struct RunSnapshot<'a> {
    objective: &'a str,
    seed: u64,
    trainer: &'a TrainerConfig,
    architecture: &'a Architecture,
    architecture_fingerprint: String,
}

impl<'a> Run<'a> {
    fn start(dir: Option<&'a Path>, cfg: &TrainerConfig, seed: u64, arch: &Architecture, objective: &str) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let snapshot = RunSnapshot {
                objective,
                seed,
                trainer: cfg,
                architecture: arch,
                architecture_fingerprint: arch.fingerprint(),
            };
            crate::synth::write_json(&d.join("config.json"), &snapshot)?;
        }
        Ok(Run {
            dir,
            history: Vec::new(),
        })
    }

    fn record(&mut self, record: EpochRecord) -> Result<()> {
        self.history.push(record);
        if let Some(d) = self.dir {
            let mut csv = String::from("stage,epoch,loss,val_top1\n");
            for r in &self.history {
                let val = r.val_top1.map(|v| format!("{v:.6}")).unwrap_or_default();
                writeln!(csv, "{},{},{:.6},{}", r.stage, r.epoch, r.loss, val).expect("string write");
            }
            let path = d.join("history.csv");
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str, params: &EncoderParams) -> Result<()> {
        match self.dir {
            Some(d) => save_weights(params, &d.join(name)),
            None => Ok(()),
        }
    }
}
