//! Chunk-based document context: non-overlapping groups of `k` neighboring
//! sentences rendered with `#1 `, `#2 `, ... prefixes, splitting of model
//! output back into sentences, and shuffle ablations.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, Document, Sample};
use crate::prompts::{ParseStatus, ParsedRefinement};
use crate::rng::SplitMix64;

/// A `#<digits>` token delimited by whitespace or the text boundaries.
static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|\s)#(\d+)(?:\s|$)").unwrap());
static MARKER_START: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(\d+)").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("document `{0}` has no sentences")]
    EmptyDocument(String),
    #[error("global shuffle needs at least 2 documents, found {0}")]
    TooFewDocuments(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("misaligned output: {0}")]
pub struct MisalignmentError(pub String);

/// One sentence of a chunk with its automatic and gold texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSentence {
    pub sample_id: String,
    pub transcription: String,
    pub translation: String,
    pub gold_transcription: String,
    pub gold_translation: String,
}

impl From<&Sample> for ChunkSentence {
    fn from(s: &Sample) -> Self {
        Self {
            sample_id: s.id.clone(),
            transcription: s.auto_transcription.clone(),
            translation: s.auto_translation.clone(),
            gold_transcription: s.gold_transcription.clone(),
            gold_translation: s.gold_translation.clone(),
        }
    }
}

/// Consecutive sentences of one document processed as a unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub sentences: Vec<ChunkSentence>,
    /// Whether prompts and outputs for this chunk carry `#i` prefixes.
    /// False for context-agnostic processing (`k == 1`) and for sentences
    /// isolated because their text contains a marker-like token.
    pub indexed: bool,
}

/// Which of a chunk's four texts to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Transcription,
    Translation,
    GoldTranscription,
    GoldTranslation,
}

impl ChunkSentence {
    fn get(&self, field: Field) -> &str {
        match field {
            Field::Transcription => &self.transcription,
            Field::Translation => &self.translation,
            Field::GoldTranscription => &self.gold_transcription,
            Field::GoldTranslation => &self.gold_translation,
        }
    }
}

/// `"#1 s1 #2 s2 ..."`.
pub fn index_sentences<S: AsRef<str>>(sentences: &[S]) -> String {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("#{} {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.sample_id.as_str()).collect()
    }

    /// Stable identifier: the sample id for single-sentence chunks,
    /// `<first>..<last>` otherwise.
    pub fn id(&self) -> String {
        match self.sentences.as_slice() {
            [only] => only.sample_id.clone(),
            [first, .., last] => format!("{}..{}", first.sample_id, last.sample_id),
            [] => String::new(),
        }
    }

    /// Index-prefixed text, regardless of [`Chunk::indexed`].
    pub fn indexed_text(&self, field: Field) -> String {
        let parts: Vec<&str> = self.sentences.iter().map(|s| s.get(field)).collect();
        index_sentences(&parts)
    }

    pub fn indexed_transcription(&self) -> String {
        self.indexed_text(Field::Transcription)
    }

    pub fn indexed_translation(&self) -> String {
        self.indexed_text(Field::Translation)
    }

    /// The text sent to or expected from the model: indexed when
    /// [`Chunk::indexed`], otherwise the single sentence verbatim.
    pub fn text(&self, field: Field) -> String {
        if self.indexed {
            self.indexed_text(field)
        } else {
            self.sentences
                .iter()
                .map(|s| s.get(field))
                .collect::<Vec<_>>()
                .join(" ")
        }
    }

    /// Splits a model field into one segment per sentence.
    pub fn split(&self, text: &str) -> Result<Vec<String>, MisalignmentError> {
        if self.indexed {
            split_indexed_text(text, self.len())
        } else {
            let t = text.trim();
            if self.len() != 1 {
                return Err(MisalignmentError("unindexed chunk with several sentences".into()));
            }
            if t.is_empty() {
                return Err(MisalignmentError("empty output".into()));
            }
            Ok(vec![t.to_string()])
        }
    }
}

/// True when `sentence` contains a token the splitter would read as an
/// index marker.
pub fn has_marker_hazard(sentence: &str) -> bool {
    MARKER.is_match(sentence)
}

fn sentence_hazard(s: &ChunkSentence) -> bool {
    [Field::Transcription, Field::Translation, Field::GoldTranscription, Field::GoldTranslation]
        .iter()
        .any(|&f| has_marker_hazard(s.get(f)))
}

/// Partitions `sentences` into chunks of `k` (the last may be shorter).
///
/// With `k > 1`, a chunk containing a marker-like token in any of its texts
/// is replaced by single-sentence, unindexed chunks.
pub fn chunk_sentences(doc_id: &str, sentences: Vec<ChunkSentence>, k: usize) -> Result<Vec<Chunk>, ContextError> {
    if k == 0 {
        return Err(ContextError::InvalidK);
    }
    if sentences.is_empty() {
        return Err(ContextError::EmptyDocument(doc_id.to_string()));
    }
    let mut chunks = Vec::with_capacity(sentences.len().div_ceil(k));
    for group in sentences.chunks(k) {
        if k > 1 && group.iter().any(sentence_hazard) {
            chunks.extend(group.iter().map(|s| Chunk {
                doc_id: doc_id.to_string(),
                sentences: vec![s.clone()],
                indexed: false,
            }));
        } else {
            chunks.push(Chunk {
                doc_id: doc_id.to_string(),
                sentences: group.to_vec(),
                indexed: k > 1,
            });
        }
    }
    Ok(chunks)
}

pub fn make_chunks(document: &Document, k: usize) -> Result<Vec<Chunk>, ContextError> {
    chunk_sentences(
        &document.doc_id,
        document.samples.iter().map(ChunkSentence::from).collect(),
        k,
    )
}

/// Chunks for every processing unit of `dataset`, in corpus order.
/// Document-less samples become single unindexed chunks.
pub fn chunk_dataset(dataset: &Dataset, k: usize) -> Result<Vec<Chunk>, ContextError> {
    let mut out = Vec::new();
    for unit in dataset.units() {
        match unit {
            crate::corpus::Unit::Document(doc) => out.extend(make_chunks(doc, k)?),
            crate::corpus::Unit::Sentence(s) => out.push(Chunk {
                doc_id: String::new(),
                sentences: vec![ChunkSentence::from(s)],
                indexed: false,
            }),
        }
    }
    Ok(out)
}

/// Splits `"#1 a #2 b ..."` into exactly `expected_n` non-empty segments.
///
/// Markers are `#<digits>` tokens delimited by whitespace; they must read
/// 1, 2, ..., `expected_n` in order with nothing but whitespace before `#1`.
pub fn split_indexed_text(text: &str, expected_n: usize) -> Result<Vec<String>, MisalignmentError> {
    if expected_n == 0 {
        return Err(MisalignmentError("expected_n must be at least 1".into()));
    }
    // (marker start, content start, index)
    let mut markers: Vec<(usize, usize, u64)> = Vec::new();
    let mut search = 0;
    while let Some(m) = MARKER.find_at(text, search) {
        let hash = MARKER_START
            .find_at(text, m.start())
            .expect("marker match contains #digits");
        let index = hash.as_str()[1..]
            .parse::<u64>()
            .map_err(|_| MisalignmentError(format!("index out of range: {}", hash.as_str())))?;
        markers.push((hash.start(), hash.end(), index));
        // The trailing delimiter may be the leading delimiter of the next marker.
        search = hash.end();
    }
    if markers.len() != expected_n {
        return Err(MisalignmentError(format!(
            "expected {expected_n} segments, found {}",
            markers.len()
        )));
    }
    if !text[..markers[0].0].trim().is_empty() {
        return Err(MisalignmentError("text before #1".into()));
    }
    let mut segments = Vec::with_capacity(expected_n);
    for (i, &(_, content_start, index)) in markers.iter().enumerate() {
        if index != i as u64 + 1 {
            return Err(MisalignmentError(format!("marker #{index} where #{} expected", i + 1)));
        }
        let end = markers.get(i + 1).map_or(text.len(), |m| m.0);
        let segment = text[content_start..end].trim();
        if segment.is_empty() {
            return Err(MisalignmentError(format!("segment #{} is empty", i + 1)));
        }
        segments.push(segment.to_string());
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealignedSentence {
    pub sample_id: String,
    pub refined_transcription: String,
    pub refined_translation: String,
    pub status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealignmentResult {
    pub per_sample: Vec<RealignedSentence>,
}

impl RealignmentResult {
    fn fallback(chunk: &Chunk) -> Self {
        Self {
            per_sample: chunk
                .sentences
                .iter()
                .map(|s| RealignedSentence {
                    sample_id: s.sample_id.clone(),
                    refined_transcription: s.transcription.clone(),
                    refined_translation: s.translation.clone(),
                    status: ParseStatus::Fallback,
                })
                .collect(),
        }
    }
}

/// Maps a parsed chunk-level response back onto the chunk's sentences.
///
/// Fields the task does not refine keep the original sentence text. If the
/// parse fell back or either refined field misaligns, every sentence of the
/// chunk reverts to its original texts with status `Fallback`.
pub fn realign(chunk: &Chunk, parsed: &ParsedRefinement) -> RealignmentResult {
    if parsed.parse_status == ParseStatus::Fallback {
        return RealignmentResult::fallback(chunk);
    }
    let split = |field: &Option<String>| -> Result<Option<Vec<String>>, MisalignmentError> {
        field.as_deref().map(|t| chunk.split(t)).transpose()
    };
    let (Ok(transcriptions), Ok(translations)) = (
        split(&parsed.refined_transcription),
        split(&parsed.refined_translation),
    ) else {
        return RealignmentResult::fallback(chunk);
    };
    RealignmentResult {
        per_sample: chunk
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| RealignedSentence {
                sample_id: s.sample_id.clone(),
                refined_transcription: transcriptions
                    .as_ref()
                    .map_or_else(|| s.transcription.clone(), |v| v[i].clone()),
                refined_translation: translations
                    .as_ref()
                    .map_or_else(|| s.translation.clone(), |v| v[i].clone()),
                status: ParseStatus::Ok,
            })
            .collect(),
    }
}

fn doc_seed(doc_id: &str, seed: u64) -> u64 {
    let digest = Sha256::digest(doc_id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Permutes a document's sentence order with a stream seeded by
/// `seed ^ first_8_bytes_le(sha256(doc_id))`; positions become 0..n-1.
pub fn local_shuffle(document: &Document, seed: u64) -> Document {
    let mut samples = document.samples.clone();
    SplitMix64::new(doc_seed(&document.doc_id, seed)).shuffle(&mut samples);
    for (i, s) in samples.iter_mut().enumerate() {
        s.position = i;
    }
    Document {
        doc_id: document.doc_id.clone(),
        samples,
    }
}

/// Rebuilds `dataset` with `documents` replacing its document samples;
/// document-less samples keep their place.
fn reassemble(dataset: &Dataset, documents: Vec<Document>) -> Dataset {
    let mut by_doc: HashMap<String, Document> = documents.into_iter().map(|d| (d.doc_id.clone(), d)).collect();
    let mut samples = Vec::with_capacity(dataset.len());
    for unit in dataset.units() {
        match unit {
            crate::corpus::Unit::Document(d) => {
                samples.extend(by_doc.remove(&d.doc_id).expect("document present").samples)
            }
            crate::corpus::Unit::Sentence(s) => samples.push(s.clone()),
        }
    }
    Dataset::new(dataset.name.clone(), dataset.split, samples)
}

/// [`local_shuffle`] applied to every document of `dataset`.
pub fn local_shuffle_dataset(dataset: &Dataset, seed: u64) -> Dataset {
    let docs = dataset.documents().iter().map(|d| local_shuffle(d, seed)).collect();
    reassemble(dataset, docs)
}

/// Redistributes all document sentences across documents.
///
/// Document ids and lengths are kept. The concatenation of all documents'
/// samples (document order, then position) is permuted with
/// `SplitMix64::new(seed)`; document `i` then receives the next `len_i`
/// samples, which take its `doc_id` and positions 0..len_i-1.
pub fn global_shuffle(dataset: &Dataset, seed: u64) -> Result<Dataset, ContextError> {
    let docs = dataset.documents();
    if docs.len() < 2 {
        return Err(ContextError::TooFewDocuments(docs.len()));
    }
    let mut pool: Vec<Sample> = docs.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    SplitMix64::new(seed).shuffle(&mut pool);
    let mut pool = pool.into_iter();
    let shuffled = docs
        .iter()
        .map(|d| Document {
            doc_id: d.doc_id.clone(),
            samples: pool
                .by_ref()
                .take(d.len())
                .enumerate()
                .map(|(i, mut s)| {
                    s.doc_id = d.doc_id.clone();
                    s.position = i;
                    s
                })
                .collect(),
        })
        .collect();
    Ok(reassemble(dataset, shuffled))
}
