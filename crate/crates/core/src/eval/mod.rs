//! Character error rate, corpus evaluation, throughput benchmarks, and the
//! training experiments built on them (sample-efficiency curves and
//! ablations).

mod experiment;

pub use experiment::{
    ablation_suite, curve_csv, sample_efficiency, AblationReport, AblationRow, CurvePoint, ExperimentConfig, Variant,
    DEFAULT_SPLITS,
};

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

use crate::decode::{decode_lines, with_workers, LineDecoder};
use crate::error::{Error, Result};
use crate::types::GrayImage;

/// NFC-normalized, lowercased characters.
pub fn normalize_text(s: &str) -> Vec<char> {
    s.nfc().collect::<String>().to_lowercase().nfc().collect()
}

/// Unit-cost Levenshtein distance between already normalized sequences.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Caseless, NFC-normalized edit distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    levenshtein(&normalize_text(a), &normalize_text(b))
}

/// Edit distance divided by the truth length; may exceed 1.
pub fn cer(predicted: &str, truth: &str) -> Result<f64> {
    let t = normalize_text(truth);
    if t.is_empty() {
        return Err(Error::UndefinedMetric("CER of an empty ground truth".into()));
    }
    Ok(levenshtein(&normalize_text(predicted), &t) as f64 / t.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineEval {
    pub index: usize,
    pub truth: String,
    pub predicted: String,
    pub edits: usize,
    pub truth_len: usize,
    pub cer: f64,
    /// Decoding failed; the line counts as fully wrong.
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub lines: Vec<LineEval>,
    /// Total edits over total ground-truth length.
    pub cer: f64,
    pub line_count: usize,
    pub seconds: f64,
    pub lines_per_sec: f64,
}

impl EvalReport {
    pub fn failed_lines(&self) -> usize {
        self.lines.iter().filter(|l| l.failed).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,edits,truth_len,cer,failed\n");
        for l in &self.lines {
            let _ = writeln!(out, "{},{},{},{:.6},{}", l.index, l.edits, l.truth_len, l.cer, l.failed);
        }
        out
    }
}

/// Scores predicted texts (or per-line failures) against transcripts.
pub fn score_lines(predictions: Vec<Result<String>>, truths: &[&str], seconds: f64) -> Result<EvalReport> {
    if truths.is_empty() {
        return Err(Error::UndefinedMetric("evaluation needs at least one line".into()));
    }
    let mut lines = Vec::with_capacity(truths.len());
    let (mut edits_total, mut len_total) = (0usize, 0usize);
    for (index, (pred, truth)) in predictions.into_iter().zip(truths).enumerate() {
        let t = normalize_text(truth);
        if t.is_empty() {
            return Err(Error::UndefinedMetric(format!("line {index} has an empty transcript")));
        }
        let (predicted, edits, failed, error) = match pred {
            Ok(p) => {
                let e = levenshtein(&normalize_text(&p), &t);
                (p, e, false, None)
            }
            Err(err) => (String::new(), t.len(), true, Some(err.to_string())),
        };
        edits_total += edits;
        len_total += t.len();
        lines.push(LineEval {
            index,
            truth: truth.to_string(),
            predicted,
            edits,
            truth_len: t.len(),
            cer: edits as f64 / t.len() as f64,
            failed,
            error,
        });
    }
    let line_count = lines.len();
    Ok(EvalReport {
        lines,
        cer: edits_total as f64 / len_total as f64,
        line_count,
        seconds,
        lines_per_sec: line_count as f64 / seconds.max(1e-9),
    })
}

/// Decodes every line and reports micro-averaged CER and throughput.
/// Decode errors mark the line as failed instead of aborting.
pub fn eval_corpus(decoder: &dyn LineDecoder, samples: &[(GrayImage, String)]) -> Result<EvalReport> {
    let images: Vec<GrayImage> = samples.iter().map(|(img, _)| img.clone()).collect();
    let truths: Vec<&str> = samples.iter().map(|(_, t)| t.as_str()).collect();
    let start = Instant::now();
    let results = decode_lines(decoder, &images);
    let seconds = start.elapsed().as_secs_f64();
    let predictions = results.into_iter().map(|r| r.map(|l| l.text)).collect();
    score_lines(predictions, &truths, seconds)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub mode: String,
    pub workers: usize,
    pub lines: usize,
    pub seconds: f64,
    pub lines_per_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub rows: Vec<ThroughputRow>,
    /// Every worker count decoded every line to the same text.
    pub identical_across_workers: bool,
}

impl ThroughputReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,workers,lines,seconds,lines_per_sec\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.3}", r.mode, r.workers, r.lines, r.seconds, r.lines_per_sec);
        }
        out
    }

    pub fn lines_per_sec(&self, mode: &str, workers: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.workers == workers)
            .map(|r| r.lines_per_sec)
    }
}

/// Minimum line count for stable timings.
pub const MIN_BENCH_LINES: usize = 50;

/// Times decoding of `lines` for each named decoder and worker count.
/// Each timing is preceded by an untimed warm-up pass over a few lines.
pub fn bench_throughput(
    decoders: &[(&str, &dyn LineDecoder)],
    lines: &[GrayImage],
    worker_counts: &[usize],
) -> Result<ThroughputReport> {
    if lines.len() < MIN_BENCH_LINES {
        return Err(Error::Config(format!(
            "throughput needs at least {MIN_BENCH_LINES} lines, got {}",
            lines.len()
        )));
    }
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(Error::Config("worker counts must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut identical = true;
    for (mode, decoder) in decoders {
        let mut reference: Option<Vec<String>> = None;
        for &workers in worker_counts {
            let (seconds, texts) = with_workers(workers, || {
                let _ = decode_lines(*decoder, &lines[..lines.len().min(8)]);
                let start = Instant::now();
                let results = decode_lines(*decoder, lines);
                let seconds = start.elapsed().as_secs_f64();
                let texts: Vec<String> = results
                    .into_iter()
                    .map(|r| r.map_or_else(|e| format!("<error: {e}>"), |l| l.text))
                    .collect();
                (seconds, texts)
            })?;
            match &reference {
                Some(r) => identical &= *r == texts,
                None => reference = Some(texts),
            }
            rows.push(ThroughputRow {
                mode: mode.to_string(),
                workers,
                lines: lines.len(),
                seconds,
                lines_per_sec: lines.len() as f64 / seconds.max(1e-9),
            });
        }
    }
    Ok(ThroughputReport {
        rows,
        identical_across_workers: identical,
    })
}
