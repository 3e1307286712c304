use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::{Dataset, Sample};
use crate::metrics::paired_bootstrap;
use crate::metrics::{report_delta, MetricDelta, MetricReport, ScoringInput, SignificanceResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub refined: MetricReport,
    /// The unrefined automatic outputs against the same references.
    pub baseline: MetricReport,
    pub delta: MetricDelta,
    /// Paired bootstrap of refined against baseline translations; absent
    /// for corpora of fewer than two sentences.
    pub significance: Option<SignificanceResult>,
}

/// Aligns `refined` to `dataset` by sample id, failing unless every id
/// occurs exactly once on both sides.
pub fn align_to_reference<'a>(refined: &'a [Sample], dataset: &Dataset) -> Result<Vec<&'a Sample>, PipelineError> {
    let mut by_id: HashMap<&str, &Sample> = HashMap::with_capacity(refined.len());
    let mut duplicated = Vec::new();
    for s in refined {
        if by_id.insert(s.id.as_str(), s).is_some() {
            duplicated.push(s.id.clone());
        }
    }
    let expected: HashSet<&str> = dataset.samples().iter().map(|s| s.id.as_str()).collect();
    let missing: Vec<String> = dataset
        .samples()
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    let mut extra: Vec<String> = by_id
        .keys()
        .filter(|id| !expected.contains(*id))
        .map(|id| id.to_string())
        .collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() || !duplicated.is_empty() {
        return Err(PipelineError::CoverageMismatch {
            missing,
            extra,
            duplicated,
        });
    }
    Ok(dataset.samples().iter().map(|s| by_id[s.id.as_str()]).collect())
}

fn report(samples: &[&Sample], refs: &Dataset) -> Result<MetricReport, PipelineError> {
    let ids: Vec<String> = refs.samples().iter().map(|s| s.id.clone()).collect();
    let translations: Vec<String> = samples.iter().map(|s| s.auto_translation.clone()).collect();
    let transcriptions: Vec<String> = samples.iter().map(|s| s.auto_transcription.clone()).collect();
    let gold_s: Vec<String> = refs.samples().iter().map(|s| s.gold_translation.clone()).collect();
    let gold_a: Vec<String> = refs.samples().iter().map(|s| s.gold_transcription.clone()).collect();
    Ok(MetricReport::compute(ScoringInput {
        ids: &ids,
        translations: &translations,
        reference_translations: &gold_s,
        transcriptions: &transcriptions,
        reference_transcriptions: &gold_a,
    })?)
}

/// Scores refined outputs (automatic fields of `refined`) and the original
/// automatic outputs of `dataset` against the gold references of `dataset`.
pub fn evaluate_run(
    refined: &[Sample],
    dataset: &Dataset,
    n_resamples: usize,
    seed: u64,
) -> Result<Evaluation, PipelineError> {
    let aligned = align_to_reference(refined, dataset)?;
    let original: Vec<&Sample> = dataset.samples().iter().collect();
    let refined_report = report(&aligned, dataset)?;
    let baseline = report(&original, dataset)?;
    let delta = report_delta(&baseline, &refined_report)?;
    let significance = if dataset.len() >= 2 {
        let a: Vec<String> = aligned.iter().map(|s| s.auto_translation.clone()).collect();
        let b: Vec<String> = original.iter().map(|s| s.auto_translation.clone()).collect();
        let refs: Vec<String> = original.iter().map(|s| s.gold_translation.clone()).collect();
        Some(paired_bootstrap(&a, &b, &refs, n_resamples, seed)?)
    } else {
        None
    };
    Ok(Evaluation {
        refined: refined_report,
        baseline,
        delta,
        significance,
    })
}
