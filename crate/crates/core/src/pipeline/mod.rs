//! End-to-end runs: chunk the test corpus, pick demonstrations, render
//! prompts, query the backend, parse and realign, then write the refined
//! corpus with a reproducible manifest.

mod config;
mod evaluate;
mod gpt_eval;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{BackendConfig, ExampleOrder, RunConfig, Selection};
pub use evaluate::{align_to_reference, evaluate_run, Evaluation};
pub use gpt_eval::{run_gpt_eval, GptEvalOptions, GptEvalReport, GptScore};

use crate::context::{
    chunk_dataset, global_shuffle, local_shuffle_dataset, realign, Chunk, ContextError, Field,
};
use crate::corpus::{load_dataset, write_samples, CorpusError, Dataset, Format, Sample};
use crate::lang::LanguageNames;
use crate::llm::{complete_all, BatchStats, Cache, LlmError, LlmRequest};
use crate::metrics::MetricsError;
use crate::prompts::{
    parse_response, render_response, InContextExample, ParseStatus, PromptError, QueryText, TemplateSet,
};
use crate::retrieval::{build_index, load_embeddings, read_binary, EmbeddingRecord, RetrievalError, RetrievalIndex};
use crate::rng::SplitMix64;

pub const TOOLKIT: &str = "strefine";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("backend failed for request `{tag}`: {source}")]
    Backend {
        tag: String,
        #[source]
        source: LlmError,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("refined output does not cover the reference corpus ({} missing, {} unexpected, {} duplicated)", missing.len(), extra.len(), duplicated.len())]
    CoverageMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
        duplicated: Vec<String>,
    },
    #[error("shuffle ablation needs document context (k > 1), got k = {0}")]
    ShuffleWithoutContext(usize),
    #[error("none of the {0} scoring responses could be parsed")]
    AllParsesFailed(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads and validates a corpus, guessing the format from the extension
/// when `format` is `None`.
pub fn load_corpus(path: &Path, format: Option<Format>) -> Result<Dataset, PipelineError> {
    load_dataset(path, format.unwrap_or_else(|| Format::from_path(path))).map_err(|source| PipelineError::Corpus {
        path: path.to_path_buf(),
        source,
    })
}

/// Embedding records from JSONL, or from the binary store for `.bin`.
pub fn load_embedding_file(path: &Path) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_binary(path),
        _ => load_embeddings(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleKind {
    Local,
    Global,
}

impl std::str::FromStr for ShuffleKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(ShuffleKind::Local),
            "global" => Ok(ShuffleKind::Global),
            other => Err(PipelineError::Config(format!("unknown shuffle kind `{other}`"))),
        }
    }
}

/// How one chunk's response was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkOutcome {
    Refined,
    /// A required marker was missing or empty.
    ParseFallback,
    /// Markers were present but the indexed segments did not line up.
    Misaligned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedSample {
    pub sample_id: String,
    pub chunk_id: String,
    pub refined_transcription: String,
    pub refined_translation: String,
    pub status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub sample_ids: Vec<String>,
    pub indexed: bool,
    /// Chunk ids of the demonstrations, in prompt order.
    pub examples: Vec<String>,
    pub prompt_sha256: String,
    pub response: String,
    pub outcome: ChunkOutcome,
}

/// Result of refining one corpus: one entry per input sample, in corpus
/// order, plus per-chunk records.
#[derive(Debug, Clone)]
pub struct RefinementRun {
    pub samples: Vec<RefinedSample>,
    pub chunks: Vec<ChunkRecord>,
    pub stats: BatchStats,
    pub elapsed_ms: u64,
}

impl RefinementRun {
    /// `original` with its automatic fields replaced by the refined ones, in
    /// `original` order.
    pub fn refined_samples(&self, original: &Dataset) -> Vec<Sample> {
        let by_id: HashMap<&str, &RefinedSample> =
            self.samples.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        original
            .samples()
            .iter()
            .map(|s| {
                let mut out = s.clone();
                if let Some(r) = by_id.get(s.id.as_str()) {
                    out.auto_transcription = r.refined_transcription.clone();
                    out.auto_translation = r.refined_translation.clone();
                }
                out
            })
            .collect()
    }

    pub fn fallback_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.status == ParseStatus::Fallback).count()
    }

    fn outcome_count(&self, outcome: ChunkOutcome) -> usize {
        self.chunks.iter().filter(|c| c.outcome == outcome).count()
    }
}

/// Inputs that stay fixed across the chunks of a run.
pub struct Resources {
    pub templates: TemplateSet,
    pub names: LanguageNames,
    pub train: Option<Dataset>,
    pub embeddings: HashMap<String, EmbeddingRecord>,
    pub cache: Option<Cache>,
}

impl Resources {
    /// Loads templates, training corpus, embeddings and cache named by
    /// `config`.
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let templates = match &config.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        let train = match (&config.train, config.selection) {
            (Some(path), Selection::RandomM | Selection::TopM) => Some(load_corpus(path, config.format)?),
            _ => None,
        };
        let embeddings = match (&config.embeddings, config.selection) {
            (Some(path), Selection::TopM) => load_embedding_file(path)?
                .into_iter()
                .map(|r| (r.sample_id.clone(), r))
                .collect(),
            _ => HashMap::new(),
        };
        let cache = config.cache.as_deref().map(Cache::open).transpose()?;
        Ok(Self {
            templates,
            names: config.language_names(),
            train,
            embeddings,
            cache,
        })
    }
}

fn id_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn chunk_embedding(
    chunk: &Chunk,
    embeddings: &HashMap<String, EmbeddingRecord>,
) -> Result<EmbeddingRecord, RetrievalError> {
    let members = chunk
        .sentences
        .iter()
        .map(|s| {
            embeddings
                .get(&s.sample_id)
                .ok_or_else(|| RetrievalError::MissingEmbedding(s.sample_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingRecord::mean(chunk.id(), &members))
}

/// Training chunks available as demonstrations.
struct ExamplePool {
    chunks: Vec<Chunk>,
    /// Sample id to the pool chunk containing it.
    chunk_of: HashMap<String, usize>,
    position: HashMap<String, usize>,
    index: Option<RetrievalIndex>,
}

impl ExamplePool {
    fn build(config: &RunConfig, res: &Resources) -> Result<Option<Self>, PipelineError> {
        if config.selection == Selection::ZeroShot {
            return Ok(None);
        }
        let train = res
            .train
            .as_ref()
            .ok_or_else(|| PipelineError::Config("example selection requires a training corpus".into()))?;
        let chunks = chunk_dataset(train, config.k)?;
        let mut chunk_of = HashMap::new();
        let mut position = HashMap::new();
        for (i, c) in chunks.iter().enumerate() {
            position.insert(c.id(), i);
            for s in &c.sentences {
                chunk_of.insert(s.sample_id.clone(), i);
            }
        }
        let index = match config.selection {
            Selection::TopM => {
                let records = chunks
                    .iter()
                    .map(|c| chunk_embedding(c, &res.embeddings))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(build_index(&records)?)
            }
            _ => None,
        };
        Ok(Some(Self {
            chunks,
            chunk_of,
            position,
            index,
        }))
    }

    /// Pool chunks sharing a sample with `query`; never offered as its
    /// examples.
    fn excluded(&self, query: &Chunk) -> HashSet<usize> {
        query
            .sentences
            .iter()
            .filter_map(|s| self.chunk_of.get(&s.sample_id).copied())
            .collect()
    }

    fn select(&self, config: &RunConfig, res: &Resources, query: &Chunk) -> Result<Vec<usize>, PipelineError> {
        let excluded = self.excluded(query);
        let available = self.chunks.len() - excluded.len();
        if config.m > available {
            return Err(RetrievalError::InsufficientCandidates {
                requested: config.m,
                available,
            }
            .into());
        }
        let mut picked = match config.selection {
            Selection::ZeroShot => Vec::new(),
            Selection::RandomM => {
                let eligible: Vec<usize> = (0..self.chunks.len()).filter(|i| !excluded.contains(i)).collect();
                let mut rng = SplitMix64::new(id_seed(config.seed, &query.id()));
                rng.sample_indices(eligible.len(), config.m)
                    .into_iter()
                    .map(|i| eligible[i])
                    .collect()
            }
            Selection::TopM => {
                let index = self.index.as_ref().expect("top_m pool has an index");
                let q = chunk_embedding(query, &res.embeddings)?;
                let hits = index.query_top_m(&q.e_a, &q.e_s, config.m + excluded.len(), None)?;
                hits.into_iter()
                    .map(|(id, _)| self.position[&id])
                    .filter(|i| !excluded.contains(i))
                    .take(config.m)
                    .collect()
            }
        };
        if config.example_order == ExampleOrder::NearestLast {
            picked.reverse();
        }
        Ok(picked)
    }

    fn example(&self, i: usize) -> InContextExample {
        let c = &self.chunks[i];
        InContextExample {
            transcription: c.text(Field::Transcription),
            translation: c.text(Field::Translation),
            refined_transcription: c.text(Field::GoldTranscription),
            refined_translation: c.text(Field::GoldTranslation),
        }
    }
}

/// Gold-oracle responses for every chunk of `chunks`, keyed by chunk id.
pub fn gold_table(config: &RunConfig, chunks: &[Chunk]) -> HashMap<String, String> {
    chunks
        .iter()
        .map(|c| {
            (
                c.id(),
                render_response(
                    config.task,
                    &c.text(Field::GoldTranscription),
                    &c.text(Field::GoldTranslation),
                ),
            )
        })
        .collect()
}

/// Refines `test` in memory. Outputs are in `test` sample order.
pub fn refine_dataset(config: &RunConfig, res: &Resources, test: &Dataset) -> Result<RefinementRun, PipelineError> {
    config.validate()?;
    let start = Instant::now();
    let chunks = chunk_dataset(test, config.k)?;
    let pool = ExamplePool::build(config, res)?;
    let by_id: HashMap<&str, &Sample> = test.samples().iter().map(|s| (s.id.as_str(), s)).collect();

    let mut requests = Vec::with_capacity(chunks.len());
    let mut chosen = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        let picks = match &pool {
            Some(pool) => pool.select(config, res, chunk)?,
            None => Vec::new(),
        };
        let examples: Vec<InContextExample> = picks.iter().map(|&i| pool.as_ref().unwrap().example(i)).collect();
        let first = by_id[chunk.sentences[0].sample_id.as_str()];
        let transcription = chunk.text(Field::Transcription);
        let translation = chunk.text(Field::Translation);
        let prompt = res.templates.render_prompt(
            config.task,
            QueryText {
                transcription: &transcription,
                translation: &translation,
            },
            &examples,
            &res.names.pair(&first.src_lang, &first.tgt_lang),
        )?;
        let mut request = LlmRequest::user(config.model.clone(), prompt.text, chunk.id());
        request.temperature = config.temperature;
        request.max_tokens = config.max_tokens;
        requests.push(request);
        chosen.push(
            picks
                .iter()
                .map(|&i| pool.as_ref().unwrap().chunks[i].id())
                .collect::<Vec<_>>(),
        );
    }

    let backend = config.backend.build(|| gold_table(config, &chunks))?;
    log::info!(
        "refining {} samples in {} chunks with {}",
        test.len(),
        chunks.len(),
        backend.identity()
    );
    let outcome = complete_all(&backend, res.cache.as_ref(), &requests, config.max_inflight);
    let mut responses = Vec::with_capacity(chunks.len());
    for (request, result) in requests.iter().zip(outcome.results) {
        match result {
            Ok(r) => responses.push(r.content),
            Err(source) => {
                return Err(PipelineError::Backend {
                    tag: request.request_tag.clone(),
                    source,
                })
            }
        }
    }

    let mut refined: HashMap<String, RefinedSample> = HashMap::with_capacity(test.len());
    let mut records = Vec::with_capacity(chunks.len());
    for (((chunk, request), response), examples) in chunks.iter().zip(&requests).zip(responses).zip(chosen) {
        // A response that only repeats the prompt carries the demonstrations'
        // markers, not an answer.
        let echoed = response.trim() == request.messages[0].content.trim();
        let parsed = parse_response(
            config.task,
            if echoed { "" } else { &response },
            (&chunk.text(Field::Transcription), &chunk.text(Field::Translation)),
        );
        let realigned = realign(chunk, &parsed);
        let outcome = match (parsed.parse_status, realigned.per_sample[0].status) {
            (ParseStatus::Fallback, _) => ChunkOutcome::ParseFallback,
            (_, ParseStatus::Fallback) => ChunkOutcome::Misaligned,
            _ => ChunkOutcome::Refined,
        };
        let chunk_id = chunk.id();
        for s in realigned.per_sample {
            refined.insert(
                s.sample_id.clone(),
                RefinedSample {
                    sample_id: s.sample_id,
                    chunk_id: chunk_id.clone(),
                    refined_transcription: s.refined_transcription,
                    refined_translation: s.refined_translation,
                    status: s.status,
                },
            );
        }
        records.push(ChunkRecord {
            chunk_id,
            sample_ids: chunk.sample_ids().into_iter().map(String::from).collect(),
            indexed: chunk.indexed,
            examples,
            prompt_sha256: hex::encode(Sha256::digest(request.messages[0].content.as_bytes())),
            response,
            outcome,
        });
    }

    let samples = test
        .samples()
        .iter()
        .map(|s| refined.remove(&s.id).expect("every sample belongs to one chunk"))
        .collect();
    Ok(RefinementRun {
        samples,
        chunks: records,
        stats: outcome.stats,
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleInfo {
    pub kind: ShuffleKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub samples: usize,
    pub chunks: usize,
    pub indexed_chunks: usize,
    pub refined_chunks: usize,
    pub parse_fallback_chunks: usize,
    pub misaligned_chunks: usize,
    pub fallback_samples: usize,
}

/// Everything needed to audit or repeat a run. Contains no timings or
/// cache statistics, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    /// The run configuration without `output_dir`.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub backend: String,
    pub templates: BTreeMap<String, String>,
    pub bleu_signature: String,
    pub shuffle: Option<ShuffleInfo>,
    pub counts: RunCounts,
    pub assumptions: Vec<String>,
}

/// Timing and cache figures, kept apart from the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub started_at: String,
    pub elapsed_ms: u64,
    pub requests: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
}

fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn assumptions(config: &RunConfig, shuffle: Option<&ShuffleInfo>) -> Vec<String> {
    let mut out = vec![
        "document boundaries and sentence order come from the doc_id and position columns as given".into(),
        format!(
            "decoding uses temperature {} and max_tokens {}; beam search is not available through chat APIs",
            config.temperature, config.max_tokens
        ),
        "unparseable or misaligned responses fall back to the original sentences of the whole chunk".into(),
        "chunks whose text contains a #<digits> token are refined sentence by sentence".into(),
    ];
    if config.selection != Selection::ZeroShot {
        out.push("demonstrations pair automatic outputs with gold references as the refined versions".into());
        out.push(format!(
            "demonstrations are training chunks of the same k, placed {}",
            match config.example_order {
                ExampleOrder::NearestFirst => "in selection order (nearest first for top_m)",
                ExampleOrder::NearestLast => "in reverse selection order (nearest last for top_m)",
            }
        ));
    }
    if config.selection == Selection::TopM && config.k > 1 {
        out.push("chunk embeddings are the component-wise mean of their sentence embeddings".into());
    }
    if let Some(ShuffleInfo {
        kind: ShuffleKind::Global,
        ..
    }) = shuffle
    {
        out.push("global shuffle is a full permutation across documents that keeps document lengths".into());
    }
    out.push("WER strips Unicode punctuation (category P) and is case-sensitive".into());
    out
}

/// Builds the manifest for `run` over `test`.
pub fn manifest_for(
    config: &RunConfig,
    res: &Resources,
    run: &RefinementRun,
    shuffle: Option<ShuffleInfo>,
) -> Result<RunManifest, PipelineError> {
    let mut snapshot = serde_json::to_value(config).expect("config serializes");
    if let Some(obj) = snapshot.as_object_mut() {
        obj.remove("output_dir");
    }
    let mut inputs = BTreeMap::new();
    let mut digest = |name: &str, path: &Path| -> Result<(), PipelineError> {
        inputs.insert(
            name.to_string(),
            InputDigest {
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            },
        );
        Ok(())
    };
    digest("test", &config.test)?;
    if let (Some(p), true) = (&config.train, res.train.is_some()) {
        digest("train", p)?;
    }
    if let (Some(p), Selection::TopM) = (&config.embeddings, config.selection) {
        digest("embeddings", p)?;
    }
    if let BackendConfig::Fixture { path } = &config.backend {
        digest("fixture", path)?;
    }
    let backend = match &config.backend {
        BackendConfig::Http { endpoint, .. } => format!("http:{endpoint}"),
        BackendConfig::Echo => "echo".into(),
        BackendConfig::GoldOracle => "gold_oracle".into(),
        BackendConfig::Fixture { .. } => "fixture".into(),
    };
    let notes = assumptions(config, shuffle.as_ref());
    Ok(RunManifest {
        toolkit: TOOLKIT.into(),
        version: VERSION.into(),
        config: snapshot,
        inputs,
        backend,
        templates: res.templates.hashes(),
        bleu_signature: crate::metrics::SIGNATURE.into(),
        shuffle,
        counts: RunCounts {
            samples: run.samples.len(),
            chunks: run.chunks.len(),
            indexed_chunks: run.chunks.iter().filter(|c| c.indexed).count(),
            refined_chunks: run.outcome_count(ChunkOutcome::Refined),
            parse_fallback_chunks: run.outcome_count(ChunkOutcome::ParseFallback),
            misaligned_chunks: run.outcome_count(ChunkOutcome::Misaligned),
            fallback_samples: run.fallback_samples(),
        },
        assumptions: notes,
    })
}

/// File names inside a run's output directory.
pub mod files {
    pub const REFINED: &str = "refined.jsonl";
    pub const STATUSES: &str = "statuses.jsonl";
    pub const CHUNKS: &str = "chunks.jsonl";
    pub const MANIFEST: &str = "manifest.json";
    pub const RUN_STATS: &str = "run_stats.json";
    pub const SHUFFLED: &str = "shuffled.jsonl";
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), std::io::Error> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(row).expect("row serializes"))?;
    }
    out.flush()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), std::io::Error> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("value serializes") + "\n")
}

/// Writes the refined corpus (in `original` order), statuses, chunk
/// records, manifest and run statistics into `dir`.
pub fn write_run(
    dir: &Path,
    original: &Dataset,
    run: &RefinementRun,
    manifest: &RunManifest,
    started_at: &str,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    write_samples(&dir.join(files::REFINED), &run.refined_samples(original), Format::Jsonl, None).map_err(
        |source| PipelineError::Corpus {
            path: dir.join(files::REFINED),
            source,
        },
    )?;
    let order: HashMap<&str, usize> = original
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut statuses: Vec<&RefinedSample> = run.samples.iter().collect();
    statuses.sort_by_key(|s| order.get(s.sample_id.as_str()).copied().unwrap_or(usize::MAX));
    write_jsonl(&dir.join(files::STATUSES), &statuses)?;
    write_jsonl(&dir.join(files::CHUNKS), &run.chunks)?;
    write_json(&dir.join(files::MANIFEST), manifest)?;
    write_json(
        &dir.join(files::RUN_STATS),
        &RunStats {
            started_at: started_at.to_string(),
            elapsed_ms: run.elapsed_ms,
            requests: run.stats.requests,
            cache_hits: run.stats.cache_hits,
            backend_calls: run.stats.backend_calls,
        },
    )?;
    Ok(())
}

/// Loads everything named by `config`, refines the test corpus and writes
/// the outputs to `config.output_dir`.
pub fn run_refinement(config: &RunConfig) -> Result<RefinementRun, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let res = Resources::load(config)?;
    let test = load_corpus(&config.test, config.format)?;
    let run = refine_dataset(config, &res, &test)?;
    let manifest = manifest_for(config, &res, &run, None)?;
    write_run(&config.output_dir, &test, &run, &manifest, &started_at)?;
    Ok(run)
}

/// The test corpus with sentences shuffled within (`Local`) or across
/// (`Global`) documents.
pub fn shuffle_dataset(test: &Dataset, kind: ShuffleKind, seed: u64) -> Result<Dataset, PipelineError> {
    Ok(match kind {
        ShuffleKind::Local => local_shuffle_dataset(test, seed),
        ShuffleKind::Global => global_shuffle(test, seed)?,
    })
}

/// Refines a shuffled copy of the test corpus. Results are reported under
/// the original sample ids and in original order, so they evaluate against
/// the unshuffled references. The shuffled corpus is written alongside.
pub fn run_shuffle_ablation(config: &RunConfig, kind: ShuffleKind, seed: u64) -> Result<RefinementRun, PipelineError> {
    if config.k < 2 {
        return Err(PipelineError::ShuffleWithoutContext(config.k));
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let res = Resources::load(config)?;
    let test = load_corpus(&config.test, config.format)?;
    let shuffled = shuffle_dataset(&test, kind, seed)?;
    let mut run = refine_dataset(config, &res, &shuffled)?;
    let order: HashMap<&str, usize> = test
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    run.samples.sort_by_key(|s| order[s.sample_id.as_str()]);
    let manifest = manifest_for(config, &res, &run, Some(ShuffleInfo { kind, seed }))?;
    write_run(&config.output_dir, &test, &run, &manifest, &started_at)?;
    write_samples(
        &config.output_dir.join(files::SHUFFLED),
        shuffled.samples(),
        Format::Jsonl,
        None,
    )
    .map_err(|source| PipelineError::Corpus {
        path: config.output_dir.join(files::SHUFFLED),
        source,
    })?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::sample;
    use crate::corpus::Split;

    fn corpus(docs: usize, per_doc: usize) -> Dataset {
        let mut samples = Vec::new();
        for d in 0..docs {
            for p in 0..per_doc {
                samples.push(sample(&format!("d{d}s{p}"), &format!("d{d}"), p));
            }
        }
        Dataset::new("c", Split::Test, samples)
    }

    fn res() -> Resources {
        Resources {
            templates: TemplateSet::default(),
            names: LanguageNames::new(),
            train: None,
            embeddings: HashMap::new(),
            cache: None,
        }
    }

    #[test]
    fn gold_oracle_recovers_gold() {
        let test = corpus(3, 5);
        for k in [1, 2, 3, 5] {
            let mut config = RunConfig::new("unused", BackendConfig::GoldOracle);
            config.k = k;
            let run = refine_dataset(&config, &res(), &test).unwrap();
            assert_eq!(run.samples.len(), 15);
            for (r, s) in run.samples.iter().zip(test.samples()) {
                assert_eq!(r.sample_id, s.id);
                assert_eq!(r.refined_transcription, s.gold_transcription);
                assert_eq!(r.refined_translation, s.gold_translation);
                assert_eq!(r.status, ParseStatus::Ok);
            }
        }
    }

    #[test]
    fn echo_falls_back_everywhere() {
        let test = corpus(2, 4);
        let mut config = RunConfig::new("unused", BackendConfig::Echo);
        config.k = 3;
        let run = refine_dataset(&config, &res(), &test).unwrap();
        assert!(run.chunks.iter().all(|c| c.outcome == ChunkOutcome::ParseFallback));

        // With demonstrations the echoed prompt contains line-start markers.
        let res = with_train(corpus(3, 3), vec![]);
        config.selection = Selection::RandomM;
        config.m = 2;
        config.train = Some("unused".into());
        let run = refine_dataset(&config, &res, &test).unwrap();
        assert!(run.chunks.iter().all(|c| c.outcome == ChunkOutcome::ParseFallback));
        for (r, s) in run.samples.iter().zip(test.samples()) {
            assert_eq!(r.refined_transcription, s.auto_transcription);
            assert_eq!(r.refined_translation, s.auto_translation);
            assert_eq!(r.status, ParseStatus::Fallback);
        }
    }

    #[test]
    fn refine_st_keeps_transcription() {
        let test = corpus(1, 2);
        let mut config = RunConfig::new("unused", BackendConfig::GoldOracle);
        config.task = crate::prompts::RefinementTask::RefineSt;
        let run = refine_dataset(&config, &res(), &test).unwrap();
        assert_eq!(run.samples[0].refined_transcription, test.samples()[0].auto_transcription);
        assert_eq!(run.samples[0].refined_translation, test.samples()[0].gold_translation);
    }

    fn with_train(train: Dataset, embeddings: Vec<EmbeddingRecord>) -> Resources {
        Resources {
            train: Some(train),
            embeddings: embeddings.into_iter().map(|r| (r.sample_id.clone(), r)).collect(),
            ..res()
        }
    }

    fn emb(id: &str, a: f32, s: f32) -> EmbeddingRecord {
        EmbeddingRecord {
            sample_id: id.into(),
            e_a: vec![a],
            e_s: vec![s],
        }
    }

    #[test]
    fn top_m_puts_exact_match_first() {
        let train = Dataset::new(
            "train",
            Split::Train,
            (0..6).map(|i| sample(&format!("t{i}"), &format!("td{i}"), 0)).collect(),
        );
        let test = Dataset::new("test", Split::Test, vec![sample("q", "qd", 0)]);
        let mut embs: Vec<_> = (0..6).map(|i| emb(&format!("t{i}"), i as f32, 0.0)).collect();
        embs.push(emb("q", 4.0, 0.0));
        let res = with_train(train, embs);
        let mut config = RunConfig::new("unused", BackendConfig::Echo);
        config.selection = Selection::TopM;
        config.m = 3;
        config.train = Some("unused".into());
        config.embeddings = Some("unused".into());
        let run = refine_dataset(&config, &res, &test).unwrap();
        assert_eq!(run.chunks[0].examples, vec!["t4", "t3", "t5"]);
        config.example_order = ExampleOrder::NearestLast;
        let run = refine_dataset(&config, &res, &test).unwrap();
        assert_eq!(run.chunks[0].examples, vec!["t5", "t3", "t4"]);
    }

    #[test]
    fn self_exclusion_when_refining_training_data() {
        let train = corpus(4, 2);
        let embs: Vec<_> = train
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| emb(&s.id, i as f32, 1.0))
            .collect();
        let res = with_train(train.clone(), embs);
        for (selection, k) in [(Selection::TopM, 1), (Selection::TopM, 2), (Selection::RandomM, 1), (Selection::RandomM, 2)] {
            let mut config = RunConfig::new("unused", BackendConfig::Echo);
            config.selection = selection;
            config.k = k;
            config.m = 2;
            config.train = Some("unused".into());
            config.embeddings = Some("unused".into());
            let run = refine_dataset(&config, &res, &train).unwrap();
            for c in &run.chunks {
                assert_eq!(c.examples.len(), 2);
                for ex in &c.examples {
                    assert!(!c.sample_ids.iter().any(|s| ex.split("..").any(|e| e == s)), "{c:?}");
                }
            }
        }
    }

    #[test]
    fn random_selection_is_seeded() {
        let train = corpus(10, 1);
        let test = corpus(1, 1);
        let res = with_train(train, vec![]);
        let mut config = RunConfig::new("unused", BackendConfig::Echo);
        config.selection = Selection::RandomM;
        config.m = 3;
        config.train = Some("unused".into());
        let a = refine_dataset(&config, &res, &test).unwrap();
        let b = refine_dataset(&config, &res, &test).unwrap();
        assert_eq!(a.chunks[0].examples, b.chunks[0].examples);
        assert_eq!(a.chunks[0].prompt_sha256, b.chunks[0].prompt_sha256);
    }

    #[test]
    fn too_few_candidates() {
        let res = with_train(corpus(2, 1), vec![]);
        let mut config = RunConfig::new("unused", BackendConfig::Echo);
        config.selection = Selection::RandomM;
        config.m = 3;
        config.train = Some("unused".into());
        assert!(matches!(
            refine_dataset(&config, &res, &corpus(1, 1)),
            Err(PipelineError::Retrieval(RetrievalError::InsufficientCandidates { .. }))
        ));
    }

    #[test]
    fn missing_fixture_surfaces_tag() {
        let mut config = RunConfig::new("unused", BackendConfig::Echo);
        config.backend = BackendConfig::Fixture {
            path: PathBuf::from("/nonexistent/fx.jsonl"),
        };
        assert!(matches!(
            refine_dataset(&config, &res(), &corpus(1, 1)),
            Err(PipelineError::Llm(LlmError::Io(_)))
        ));
    }

    #[test]
    fn shuffle_requires_context() {
        let config = RunConfig::new("unused", BackendConfig::Echo);
        assert!(matches!(
            run_shuffle_ablation(&config, ShuffleKind::Local, 1),
            Err(PipelineError::ShuffleWithoutContext(1))
        ));
    }
}
