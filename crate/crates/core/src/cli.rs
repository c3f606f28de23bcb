//! The `rocr` command line: one JSON run configuration, per-command flag
//! overrides, and every artifact under a single output directory.
//!
//! Exit codes: 0 on success, 1 on a runtime failure or a violated
//! `--assert-cer` gate, 2 on an invalid configuration or command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::contrastive::{train_with, TrainOptions, TrainerConfig, Validation};
use crate::decode::{
    decode_lines, default_workers, generate_silver, json_error_line, json_line, with_workers, DecodeConfig, DecodeMode,
    LineDecoder, Pipeline, RetrievalRecognizer,
};
use crate::encoder::{load_weights, Encoder};
use crate::error::{Error, Result};
use crate::eval::{ablation_suite, bench_throughput, curve_csv, eval_corpus, sample_efficiency, ExperimentConfig, DEFAULT_SPLITS};
use crate::index::{build_index, load_index, save_index, EXEMPLAR_RENDER_SIZE};
use crate::synth::{
    exemplar_crop, load_crop_dataset, load_line_dataset, make_corpus, make_crop_dataset_with, make_joint_dataset,
    save_crop_dataset, save_line_dataset, write_json, AugmentConfig, CorpusConfig, CropDataset, FontSpec, RenderConfig,
    WordConfig,
};
use crate::types::{CropSource, GlyphCatalog, GrayImage, LabeledCrop};
use crate::CROP_SIZE;

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_CONFIG: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Character labels; empty means the caseless alphanumeric catalog.
    pub labels: Vec<String>,
    /// Catalog file; takes precedence over `labels`.
    pub catalog: Option<PathBuf>,
    pub train_fonts: Vec<FontSpec>,
    /// Fonts whose crops measure held-out top-1 retrieval during training.
    pub validation_fonts: Vec<FontSpec>,
    pub exemplar_font: FontSpec,
    pub variants_per_class: usize,
    pub augment: AugmentConfig,
    pub render: RenderConfig,
    pub trainer: TrainerConfig,
    pub words: WordConfig,
    pub decode: DecodeConfig,
    /// Crop datasets added to the training data.
    pub datasets: Vec<PathBuf>,
    pub corpus: CorpusConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        RunConfig {
            seed: experiment.seed,
            labels: Vec::new(),
            catalog: None,
            train_fonts: experiment.train_fonts.clone(),
            validation_fonts: Vec::new(),
            exemplar_font: experiment.exemplar_font.clone(),
            variants_per_class: experiment.variants_per_class,
            augment: AugmentConfig::default(),
            render: RenderConfig::default(),
            trainer: experiment.trainer.clone(),
            words: WordConfig::default(),
            decode: DecodeConfig::default(),
            datasets: Vec::new(),
            corpus: CorpusConfig::default(),
            experiment,
        }
    }
}

fn field_error(field: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => Error::Config(format!("{field}: {other}")),
    }
}

fn check_path(field: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: path {} does not exist", path.display())))
    }
}

fn check_fonts(field: &str, fonts: &[FontSpec]) -> Result<()> {
    for (i, f) in fonts.iter().enumerate() {
        if let Some(p) = f.referenced_path() {
            check_path(&format!("{field}[{i}]"), p)?;
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| field_error(&path.display().to_string(), e))
    }

    /// Checks every section and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.catalog {
            check_path("catalog", p)?;
        }
        for (i, p) in self.datasets.iter().enumerate() {
            check_path(&format!("datasets[{i}]"), p)?;
        }
        if self.train_fonts.is_empty() {
            return Err(Error::Config("train_fonts: at least one font is required".into()));
        }
        check_fonts("train_fonts", &self.train_fonts)?;
        check_fonts("validation_fonts", &self.validation_fonts)?;
        check_fonts("exemplar_font", std::slice::from_ref(&self.exemplar_font))?;
        check_fonts("corpus.fonts", &self.corpus.fonts)?;
        check_fonts("experiment.train_fonts", &self.experiment.train_fonts)?;
        check_fonts("experiment.target_fonts", &self.experiment.target_fonts)?;
        check_fonts("experiment.exemplar_font", std::slice::from_ref(&self.experiment.exemplar_font))?;
        if self.variants_per_class == 0 {
            return Err(Error::Config("variants_per_class: must be >= 1".into()));
        }
        self.augment.validate().map_err(|e| field_error("augment", e))?;
        self.trainer.validate().map_err(|e| field_error("trainer", e))?;
        self.words.validate().map_err(|e| field_error("words", e))?;
        self.decode.validate().map_err(|e| field_error("decode", e))?;
        self.corpus.validate().map_err(|e| field_error("corpus", e))?;
        self.experiment.validate().map_err(|e| field_error("experiment", e))
    }

    pub fn char_catalog(&self) -> Result<GlyphCatalog> {
        match &self.catalog {
            Some(p) => GlyphCatalog::load(p),
            None if self.labels.is_empty() => Ok(GlyphCatalog::alphanumeric()),
            None => GlyphCatalog::new(self.labels.iter().cloned()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rocr", version, about = "Character-retrieval OCR: render, train, index, decode and evaluate")]
pub struct Cli {
    /// Run configuration file (JSON); built-in defaults when omitted
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that receives every artifact of the command
    #[arg(long, global = true, value_name = "DIR", default_value = "rocr-out")]
    pub out: PathBuf,
    /// Worker threads for decoding and evaluation [default: available cores, at most 4]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Seed override for the configuration
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Encoder weight file
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Character index file
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    /// Word index file; switches decoding to word mode
    #[arg(long, value_name = "FILE")]
    pub word_index: Option<PathBuf>,
    /// Word-to-character fallback threshold override
    #[arg(long, value_name = "SIM")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a crop dataset and a line corpus
    Render {
        /// Number of corpus lines (overrides corpus.lines)
        #[arg(long, value_name = "N")]
        lines: Option<usize>,
        /// Skip the crop dataset
        #[arg(long)]
        no_crops: bool,
        /// Skip the line corpus
        #[arg(long)]
        no_lines: bool,
    },
    /// Train the encoder contrastively
    Train {
        /// Additional crop dataset directory (repeatable)
        #[arg(long = "dataset", value_name = "DIR")]
        datasets: Vec<PathBuf>,
        /// Epochs per stage (overrides trainer.epochs)
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Train on the listed datasets only, without font renders
        #[arg(long)]
        no_synthetic: bool,
    },
    /// Embed exemplar renders into an index file
    BuildIndex {
        /// Encoder weight file
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        /// Index the word lexicon instead of the character catalog
        #[arg(long)]
        words: bool,
    },
    /// Decode a line image or a directory of PNG lines
    Ocr {
        /// Image file or directory
        #[arg(value_name = "INPUT")]
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a line dataset
    Eval {
        /// Line dataset directory
        #[arg(long, value_name = "DIR")]
        lines: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Exit with status 1 when the CER exceeds this value
        #[arg(long, value_name = "CER")]
        assert_cer: Option<f64>,
    },
    /// Measure decode throughput
    Bench {
        /// Line dataset directory (at least 50 lines)
        #[arg(long, value_name = "DIR")]
        lines: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated worker counts [default: --workers]
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        worker_counts: Vec<usize>,
    },
    /// Sample-efficiency curve over target-data fractions
    Curve {
        /// Comma-separated training fractions [default: 0.70,0.50,0.20,0.05,0.0]
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Ablation suite under fixed seeds
    Ablate,
    /// Label word crops with the character model
    Silver {
        /// Line dataset directory
        #[arg(long, value_name = "DIR")]
        lines: PathBuf,
        /// Encoder weight file
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        /// Character index file
        #[arg(long, value_name = "FILE")]
        index: PathBuf,
        /// Maximum crops per word label
        #[arg(long, value_name = "N", default_value_t = 20)]
        cap: usize,
    },
}

/// The clap command, for help rendering.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let resolved = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            return 2;
        }
    };
    match with_workers(resolved.workers, || execute(&cli, &resolved)).and_then(|r| r) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}

struct Resolved {
    config: RunConfig,
    workers: usize,
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.experiment.seed = seed;
    }
    match &cli.command {
        Command::Render { lines: Some(n), .. } => config.corpus.lines = *n,
        Command::Train { datasets, epochs, .. } => {
            config.datasets.extend(datasets.iter().cloned());
            if let Some(e) = epochs {
                config.trainer.epochs = *e;
            }
        }
        Command::Ocr { model, .. } | Command::Eval { model, .. } | Command::Bench { model, .. } => {
            for (name, p) in [("--weights", Some(&model.weights)), ("--index", Some(&model.index)), ("--word-index", model.word_index.as_ref())] {
                if let Some(p) = p {
                    check_path(name, p)?;
                }
            }
            if let Some(t) = model.threshold {
                config.decode.word_fallback_threshold = t;
            }
            if model.word_index.is_some() {
                config.decode.mode = DecodeMode::Word;
            } else if config.decode.mode == DecodeMode::Word {
                return Err(Error::Config("decode.mode: word mode needs --word-index".into()));
            }
        }
        Command::Silver { weights, index, lines, cap } => {
            check_path("--weights", weights)?;
            check_path("--index", index)?;
            check_path("--lines", lines)?;
            if *cap == 0 {
                return Err(Error::Config("--cap: must be >= 1".into()));
            }
        }
        _ => {}
    }
    if let Command::Eval { lines, .. } | Command::Bench { lines, .. } = &cli.command {
        check_path("--lines", lines)?;
    }
    if let Command::Ocr { input, .. } = &cli.command {
        check_path("INPUT", input)?;
    }
    config.validate()?;
    let workers = cli.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(Error::Config("--workers: must be >= 1".into()));
    }
    Ok(Resolved { config, workers })
}

fn create_out(out: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(RESOLVED_CONFIG), config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn open_fonts(fonts: &[FontSpec]) -> Result<Vec<crate::synth::FontSource>> {
    fonts.iter().map(FontSpec::open).collect()
}

fn alphabet(catalog: &GlyphCatalog) -> Vec<char> {
    catalog
        .labels()
        .iter()
        .filter_map(|l| {
            let mut it = l.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Some(c),
                _ => None,
            }
        })
        .collect()
}

fn execute(cli: &Cli, r: &Resolved) -> Result<i32> {
    let cfg = &r.config;
    let out = cli.out.as_path();
    create_out(out, cfg)?;
    match &cli.command {
        Command::Render { no_crops, no_lines, .. } => render(cfg, out, !no_crops, !no_lines),
        Command::Train { no_synthetic, .. } => train_cmd(cfg, out, *no_synthetic),
        Command::BuildIndex { weights, words } => {
            let encoder = Encoder::new(load_weights(weights)?);
            let (catalog, name) = if *words {
                (cfg.words.lexicon_catalog()?, "words.index")
            } else {
                (cfg.char_catalog()?, "chars.index")
            };
            let index = build_index(&encoder, &cfg.exemplar_font.open()?, &catalog)?;
            save_index(&index, &out.join(name))?;
            log::info!("{} entries written to {}", index.len(), out.join(name).display());
            Ok(0)
        }
        Command::Ocr { input, model } => ocr(cfg, out, input, model),
        Command::Eval {
            lines,
            model,
            assert_cer,
        } => {
            let decoder = load_pipeline(cfg, model)?;
            let samples: Vec<(GrayImage, String)> = load_line_dataset(lines)?
                .into_iter()
                .map(|s| (s.line.image, s.line.transcript))
                .collect();
            let report = eval_corpus(&decoder, &samples)?;
            write_json(&out.join("eval.json"), &report)?;
            write_file(&out.join("eval.csv"), &report.to_csv())?;
            println!("cer {:.6} over {} lines ({:.1} lines/s)", report.cer, report.line_count, report.lines_per_sec);
            if let Some(limit) = assert_cer {
                if report.cer > *limit {
                    eprintln!("error: CER {:.6} exceeds --assert-cer {limit}", report.cer);
                    return Ok(1);
                }
            }
            Ok(0)
        }
        Command::Bench {
            lines,
            model,
            worker_counts,
        } => {
            let decoder = load_pipeline(cfg, model)?;
            let images: Vec<GrayImage> = load_line_dataset(lines)?.into_iter().map(|s| s.line.image).collect();
            let counts = if worker_counts.is_empty() { vec![r.workers] } else { worker_counts.clone() };
            let mode = match decoder.config.mode {
                DecodeMode::Char => "char",
                DecodeMode::Word => "word",
            };
            let mut decoders: Vec<(&str, &dyn LineDecoder)> = vec![(mode, &decoder)];
            let char_only;
            if decoder.config.mode == DecodeMode::Word {
                char_only = load_pipeline(cfg, &ModelArgs { word_index: None, ..model.clone() })?;
                decoders.insert(0, ("char", &char_only));
            }
            let report = bench_throughput(&decoders, &images, &counts)?;
            let csv = report.to_csv();
            write_file(&out.join("throughput.csv"), &csv)?;
            print!("{csv}");
            if !report.identical_across_workers {
                log::warn!("decoded text differs across worker counts");
            }
            Ok(0)
        }
        Command::Curve { fractions } => {
            let f = if fractions.is_empty() { DEFAULT_SPLITS.to_vec() } else { fractions.clone() };
            let points = sample_efficiency(&cfg.experiment, &f)?;
            let csv = curve_csv(&points);
            write_file(&out.join("curve.csv"), &csv)?;
            print!("{csv}");
            Ok(0)
        }
        Command::Ablate => {
            let report = ablation_suite(&cfg.experiment)?;
            write_file(&out.join("ablation.csv"), &report.to_csv())?;
            let table = report.to_table();
            write_file(&out.join("ablation.txt"), &table)?;
            print!("{table}");
            Ok(0)
        }
        Command::Silver { lines, weights, index, cap } => {
            let encoder = Arc::new(Encoder::new(load_weights(weights)?));
            let chars = RetrievalRecognizer::new(encoder.clone(), load_index(index, &encoder)?)?;
            let images: Vec<GrayImage> = load_line_dataset(lines)?.into_iter().map(|s| s.line.image).collect();
            let word_catalog = cfg.words.lexicon_catalog()?;
            let crops = generate_silver(&chars, &images, &word_catalog, *cap, &cfg.decode)?;
            let mut data = CropDataset::default();
            for c in crops {
                data.push(c, None);
            }
            log::info!("{} silver crops", data.len());
            save_crop_dataset(&out.join("silver"), &word_catalog, &data)?;
            Ok(0)
        }
    }
}

fn render(cfg: &RunConfig, out: &Path, crops: bool, lines: bool) -> Result<i32> {
    let chars = cfg.char_catalog()?;
    if crops {
        let fonts = open_fonts(&cfg.train_fonts)?;
        let (catalog, data) = training_renders(cfg, &chars, &fonts)?;
        save_crop_dataset(&out.join("crops"), &catalog, &data)?;
        log::info!("{} crops over {} classes", data.len(), catalog.len());
    }
    if lines {
        let corpus = make_corpus(&cfg.corpus, &alphabet(&chars), &cfg.words.lexicon, cfg.seed)?;
        save_line_dataset(&out.join("lines"), &corpus)?;
        log::info!("{} lines", corpus.len());
    }
    Ok(0)
}

/// Font renders for training: the character catalog, joined with the
/// lexicon and distractors when word training is configured.
fn training_renders(
    cfg: &RunConfig,
    chars: &GlyphCatalog,
    fonts: &[crate::synth::FontSource],
) -> Result<(GlyphCatalog, CropDataset)> {
    if cfg.words.lexicon.is_empty() {
        let data = make_crop_dataset_with(chars, fonts, cfg.variants_per_class, &cfg.augment, &cfg.render, cfg.seed)?;
        Ok((chars.clone(), data))
    } else {
        make_joint_dataset(chars, &cfg.words, fonts, cfg.variants_per_class, &cfg.augment, &cfg.render, cfg.seed)
    }
}

/// Adds `extra` to `data`, renumbering its classes into `catalog` by label.
fn merge_into(catalog: &GlyphCatalog, data: &mut Vec<LabeledCrop>, extra_catalog: &GlyphCatalog, extra: CropDataset) -> Result<()> {
    for crop in extra.crops {
        let label = extra_catalog.label(crop.class_id).unwrap_or_default();
        let class_id = catalog
            .class_id(label)
            .ok_or_else(|| Error::Config(format!("dataset label {label:?} is not in the training catalog")))?;
        data.push(LabeledCrop { class_id, ..crop });
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, out: &Path, no_synthetic: bool) -> Result<i32> {
    let chars = cfg.char_catalog()?;
    let fonts = open_fonts(&cfg.train_fonts)?;
    let (catalog, renders) = training_renders(cfg, &chars, &fonts)?;
    let mut data = if no_synthetic { Vec::new() } else { renders.crops };
    for dir in &cfg.datasets {
        let (extra_catalog, extra) = load_crop_dataset(dir)?;
        merge_into(&catalog, &mut data, &extra_catalog, extra)?;
    }
    catalog.save(out.join("catalog.txt"))?;
    let validation = if cfg.validation_fonts.is_empty() {
        None
    } else {
        let vfonts = open_fonts(&cfg.validation_fonts)?;
        let queries = make_crop_dataset_with(&chars, &vfonts, 3, &cfg.augment, &cfg.render, cfg.seed ^ 0x5eed)?.crops;
        let exemplar = cfg.exemplar_font.open()?;
        let exemplars = chars
            .iter()
            .filter_map(|(class_id, label)| {
                exemplar_crop(&exemplar, label, EXEMPLAR_RENDER_SIZE, CROP_SIZE).ok().map(|image| LabeledCrop {
                    image,
                    class_id,
                    source: CropSource::FontRender,
                })
            })
            .collect();
        Some(Validation { queries, exemplars })
    };
    let opts = TrainOptions {
        validation: validation.as_ref(),
        run_dir: Some(out),
        ..TrainOptions::default()
    };
    let trained = train_with(&data, &catalog, &cfg.trainer, cfg.seed, &opts)?;
    if let Some(last) = trained.history.last() {
        log::info!("final loss {:.4}, val top-1 {:?}", last.loss, last.val_top1);
    }
    log::info!("weights written to {}", out.join("final.weights").display());
    Ok(0)
}

fn load_pipeline(cfg: &RunConfig, model: &ModelArgs) -> Result<Pipeline> {
    let encoder = Arc::new(Encoder::new(load_weights(&model.weights)?));
    let chars = RetrievalRecognizer::new(encoder.clone(), load_index(&model.index, &encoder)?)?;
    match &model.word_index {
        Some(p) => {
            let words = RetrievalRecognizer::new(encoder.clone(), load_index(p, &encoder)?)?;
            Pipeline::words(Box::new(words), Box::new(chars), cfg.decode.clone())
        }
        None => {
            let config = DecodeConfig {
                mode: DecodeMode::Char,
                ..cfg.decode.clone()
            };
            Pipeline::chars(Box::new(chars), config)
        }
    }
}

fn ocr_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn ocr(cfg: &RunConfig, out: &Path, input: &Path, model: &ModelArgs) -> Result<i32> {
    let decoder = load_pipeline(cfg, model)?;
    let files = ocr_inputs(input)?;
    let images: Vec<Result<GrayImage>> = files.iter().map(GrayImage::load_png).collect();
    let loaded: Vec<GrayImage> = images.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let mut decoded = decode_lines(&decoder, &loaded).into_iter();
    let (mut jsonl, mut text) = (String::new(), String::new());
    let mut failures = 0;
    for (path, image) in files.iter().zip(images) {
        let name = path.display().to_string();
        let result = image.and_then(|_| decoded.next().expect("one result per loaded image"));
        match result {
            Ok(line) => {
                jsonl.push_str(&json_line(&name, &line));
                text.push_str(&line.text);
            }
            Err(e) => {
                log::warn!("{name}: {e}");
                failures += 1;
                jsonl.push_str(&json_error_line(&name, &e));
            }
        }
        jsonl.push('\n');
        text.push('\n');
    }
    write_file(&out.join("ocr.jsonl"), &jsonl)?;
    write_file(&out.join("ocr.txt"), &text)?;
    print!("{text}");
    log::info!("{} lines decoded, {failures} failed", files.len());
    Ok(if failures > 0 { 1 } else { 0 })
}
