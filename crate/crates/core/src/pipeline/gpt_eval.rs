use serde::{Deserialize, Serialize};

use super::evaluate::align_to_reference;
use super::PipelineError;
use crate::corpus::{Dataset, Sample};
use crate::lang::LanguageNames;
use crate::llm::{complete_all, Backend, Cache, LlmRequest, DEFAULT_MAX_TOKENS};
use crate::prompts::{parse_gpt_score, TemplateSet};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct GptEvalOptions {
    pub sample_n: usize,
    pub seed: u64,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_inflight: usize,
}

impl Default for GptEvalOptions {
    fn default() -> Self {
        Self {
            sample_n: 200,
            seed: 0,
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_inflight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GptScore {
    pub sample_id: String,
    /// `None` when the response held no score.
    pub before: Option<u8>,
    pub after: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GptEvalReport {
    pub requested: usize,
    pub sampled: usize,
    pub seed: u64,
    pub average_before: f64,
    pub average_after: f64,
    pub delta: f64,
    pub parse_failures_before: usize,
    pub parse_failures_after: usize,
    pub per_sample: Vec<GptScore>,
}

fn average(scores: impl Iterator<Item = Option<u8>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut failed) = (0u64, 0u64, 0usize);
    for s in scores {
        match s {
            Some(v) => {
                sum += u64::from(v);
                n += 1;
            }
            None => failed += 1,
        }
    }
    ((n > 0).then(|| sum as f64 / n as f64), failed)
}

/// Scores original and refined translations of a seeded sample of
/// `dataset` with a direct-assessment prompt.
///
/// The sample is `SplitMix64::new(seed).sample_indices(len, n)` sorted
/// into corpus order, with `n = min(sample_n, len)`. The source shown to
/// the judge is the gold transcription. Requests are tagged
/// `<id>:before` and `<id>:after`. Unparseable responses are counted and
/// left out of the averages.
pub fn run_gpt_eval(
    refined: &[Sample],
    dataset: &Dataset,
    backend: &Backend,
    cache: Option<&Cache>,
    templates: &TemplateSet,
    names: &LanguageNames,
    options: &GptEvalOptions,
) -> Result<GptEvalReport, PipelineError> {
    let aligned = align_to_reference(refined, dataset)?;
    let n = options.sample_n.min(dataset.len());
    if options.sample_n > dataset.len() {
        log::warn!(
            "sample_n {} exceeds corpus size {}; scoring all samples",
            options.sample_n,
            dataset.len()
        );
    }
    let mut picked = SplitMix64::new(options.seed).sample_indices(dataset.len(), n);
    picked.sort_unstable();

    let mut requests = Vec::with_capacity(2 * n);
    for &i in &picked {
        let original = &dataset.samples()[i];
        let langs = names.pair(&original.src_lang, &original.tgt_lang);
        for (suffix, translation) in [
            ("before", &original.auto_translation),
            ("after", &aligned[i].auto_translation),
        ] {
            let prompt = templates.render_gpt_eval(&original.gold_transcription, translation, &langs)?;
            let mut request = LlmRequest::user(options.model.clone(), prompt, format!("{}:{suffix}", original.id));
            request.temperature = options.temperature;
            request.max_tokens = options.max_tokens;
            requests.push(request);
        }
    }
    let outcome = complete_all(backend, cache, &requests, options.max_inflight);
    let mut scores = Vec::with_capacity(requests.len());
    for (request, result) in requests.iter().zip(outcome.results) {
        let response = result.map_err(|source| PipelineError::Backend {
            tag: request.request_tag.clone(),
            source,
        })?;
        scores.push(parse_gpt_score(&response.content).ok());
    }
    let per_sample: Vec<GptScore> = picked
        .iter()
        .zip(scores.chunks(2))
        .map(|(&i, pair)| GptScore {
            sample_id: dataset.samples()[i].id.clone(),
            before: pair[0],
            after: pair[1],
        })
        .collect();
    let (before, failed_before) = average(per_sample.iter().map(|s| s.before));
    let (after, failed_after) = average(per_sample.iter().map(|s| s.after));
    let (Some(average_before), Some(average_after)) = (before, after) else {
        return Err(PipelineError::AllParsesFailed(n));
    };
    Ok(GptEvalReport {
        requested: options.sample_n,
        sampled: n,
        seed: options.seed,
        average_before,
        average_after,
        delta: average_after - average_before,
        parse_failures_before: failed_before,
        parse_failures_after: failed_after,
        per_sample,
    })
}
