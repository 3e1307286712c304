//! Evaluation kernel: 13a tokenization, corpus BLEU, WER, paired bootstrap
//! and before/after reports.

mod bleu;
mod bootstrap;
mod tokenize;
mod wer;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{corpus_bleu, segment_stats, sentence_bleu, BleuScore, BleuStats, MAX_ORDER, SIGNATURE};
pub use bootstrap::{paired_bootstrap, SignificanceResult, DEFAULT_RESAMPLES, DEFAULT_SEED};
pub use tokenize::{normalize_13a, tokenize_13a};
pub use wer::{align_counts, corpus_wer, sentence_wer, strip_punctuation, WerScore};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("hypotheses ({hyp}) and references ({refs}) differ in length")]
    LengthMismatch { hyp: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("reference has no words after punctuation removal")]
    EmptyReference,
    #[error("paired bootstrap needs at least 2 segments, got {0}")]
    TooFewSegments(usize),
    #[error("n_resamples must be positive")]
    NoResamples,
    #[error("reports cover different numbers of segments ({before} vs {after})")]
    SizeMismatch { before: usize, after: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_lengths(hyp: usize, refs: usize) -> Result<(), MetricsError> {
    if hyp != refs {
        return Err(MetricsError::LengthMismatch { hyp, refs });
    }
    if hyp == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub id: String,
    pub bleu: f64,
    /// `None` when the reference transcription is empty after normalization.
    pub wer: Option<f64>,
}

/// Translation BLEU and transcription WER for one system output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus_bleu: BleuScore,
    pub corpus_wer: WerScore,
    pub per_sentence: Vec<SentenceScores>,
    pub n: usize,
    pub bleu_signature: String,
}

/// Parallel segment lists scored by [`MetricReport::compute`].
#[derive(Debug, Clone, Copy)]
pub struct ScoringInput<'a> {
    pub ids: &'a [String],
    pub translations: &'a [String],
    pub reference_translations: &'a [String],
    pub transcriptions: &'a [String],
    pub reference_transcriptions: &'a [String],
}

impl MetricReport {
    pub fn compute(input: ScoringInput<'_>) -> Result<Self, MetricsError> {
        let n = input.ids.len();
        check_lengths(input.translations.len(), n)?;
        check_lengths(input.reference_translations.len(), n)?;
        check_lengths(input.transcriptions.len(), n)?;
        check_lengths(input.reference_transcriptions.len(), n)?;
        let corpus_bleu = corpus_bleu(input.translations, input.reference_translations)?;
        let corpus_wer = corpus_wer(input.transcriptions, input.reference_transcriptions)?;
        let per_sentence = (0..n)
            .map(|i| SentenceScores {
                id: input.ids[i].clone(),
                bleu: sentence_bleu(&input.translations[i], &input.reference_translations[i]).score,
                wer: sentence_wer(&input.transcriptions[i], &input.reference_transcriptions[i])
                    .ok()
                    .map(|w| w.wer),
            })
            .collect();
        Ok(Self {
            corpus_bleu,
            corpus_wer,
            per_sentence,
            n,
            bleu_signature: SIGNATURE.to_string(),
        })
    }
}

/// Improvement of `after` over `before`; positive is better for both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub delta_bleu: f64,
    pub delta_wer: f64,
}

pub fn report_delta(before: &MetricReport, after: &MetricReport) -> Result<MetricDelta, MetricsError> {
    if before.n != after.n {
        return Err(MetricsError::SizeMismatch {
            before: before.n,
            after: after.n,
        });
    }
    Ok(delta_of(
        (before.corpus_bleu.score, before.corpus_wer.wer),
        (after.corpus_bleu.score, after.corpus_wer.wer),
    ))
}

/// Rounds to two decimals, the precision scores are reported at.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// `(bleu, wer)` pairs to a delta: BLEU after - before, WER before - after.
pub fn delta_of(before: (f64, f64), after: (f64, f64)) -> MetricDelta {
    MetricDelta {
        delta_bleu: after.0 - before.0,
        delta_wer: before.1 - after.1,
    }
}

/// Files written by [`export_for_neural_scoring`].
#[derive(Debug, Clone)]
pub struct NeuralExport {
    pub source: PathBuf,
    pub hypothesis: PathBuf,
    pub reference: PathBuf,
    pub ids: PathBuf,
}

/// Writes `<prefix>.src`, `<prefix>.hyp`, `<prefix>.ref` (one segment per
/// line) and `<prefix>.ids.json` for external neural scorers such as COMET.
/// Line breaks inside a segment are replaced by spaces.
pub fn export_for_neural_scoring(
    dir: &Path,
    prefix: &str,
    ids: &[String],
    sources: &[String],
    hypotheses: &[String],
    references: &[String],
) -> Result<NeuralExport, MetricsError> {
    check_lengths(sources.len(), ids.len())?;
    check_lengths(hypotheses.len(), ids.len())?;
    check_lengths(references.len(), ids.len())?;
    fs::create_dir_all(dir)?;
    let write = |ext: &str, lines: &[String]| -> io::Result<PathBuf> {
        let path = dir.join(format!("{prefix}.{ext}"));
        let mut body = String::new();
        for line in lines {
            body.push_str(&line.replace(['\r', '\n'], " "));
            body.push('\n');
        }
        fs::write(&path, body)?;
        Ok(path)
    };
    let export = NeuralExport {
        source: write("src", sources)?,
        hypothesis: write("hyp", hypotheses)?,
        reference: write("ref", references)?,
        ids: dir.join(format!("{prefix}.ids.json")),
    };
    fs::write(&export.ids, serde_json::to_string_pretty(ids).expect("ids serialize"))?;
    Ok(export)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(bleu: f64, wer: f64, n: usize) -> MetricReport {
        let mut r = MetricReport::compute(ScoringInput {
            ids: &["a".to_string()],
            translations: &["x".to_string()],
            reference_translations: &["x".to_string()],
            transcriptions: &["y".to_string()],
            reference_transcriptions: &["y".to_string()],
        })
        .unwrap();
        r.corpus_bleu.score = bleu;
        r.corpus_wer.wer = wer;
        r.n = n;
        r
    }

    #[test]
    fn deltas_are_improvements() {
        let d = report_delta(&report(29.40, 10.65, 5), &report(33.39, 8.91, 5)).unwrap();
        assert!((d.delta_bleu - 3.99).abs() < 1e-9);
        assert!((d.delta_wer - 1.74).abs() < 1e-9);
        let same = report_delta(&report(20.0, 5.0, 5), &report(20.0, 5.0, 5)).unwrap();
        assert_eq!(same, MetricDelta { delta_bleu: 0.0, delta_wer: 0.0 });
        assert!(matches!(
            report_delta(&report(1.0, 1.0, 4), &report(1.0, 1.0, 5)),
            Err(MetricsError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn neural_export_files() {
        let dir = tempfile::tempdir().unwrap();
        let v = |x: &[&str]| x.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let e = export_for_neural_scoring(
            dir.path(),
            "refined",
            &v(&["1", "2"]),
            &v(&["src one", "src\ntwo"]),
            &v(&["h1", "h2"]),
            &v(&["r1", "r2"]),
        )
        .unwrap();
        assert_eq!(fs::read_to_string(e.source).unwrap(), "src one\nsrc two\n");
        assert_eq!(fs::read_to_string(e.hypothesis).unwrap(), "h1\nh2\n");
        let ids: Vec<String> = serde_json::from_str(&fs::read_to_string(e.ids).unwrap()).unwrap();
        assert_eq!(ids, ["1", "2"]);
    }
}
