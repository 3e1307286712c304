//! Paired ASR/ST system outputs with gold references.
//!
//! Corpora arrive as JSONL (canonical) or TSV with the columns of
//! [`FIELDS`]. Every text field is NFC-normalized and trimmed at load, and a
//! loaded [`Dataset`] is immutable afterwards.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Column order shared by the JSONL and TSV layouts.
pub const FIELDS: [&str; 9] = [
    "id",
    "doc_id",
    "position",
    "auto_transcription",
    "auto_translation",
    "gold_transcription",
    "gold_translation",
    "src_lang",
    "tgt_lang",
];

const TEXT_FIELDS: [&str; 4] = [
    "auto_transcription",
    "auto_translation",
    "gold_transcription",
    "gold_translation",
];

/// Key marking a JSONL line as a provenance comment rather than a sample.
pub const META_KEY: &str = "_meta";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: missing field `{field}`")]
    MissingField { row: usize, field: String },
    #[error("row {row}: field `{field}`: {message}")]
    InvalidField {
        row: usize,
        field: String,
        message: String,
    },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` does not have contiguous positions 0..n-1")]
    NonContiguousPositions(String),
    #[error("sample `{id}`: field `{field}` is empty")]
    EmptyText { id: String, field: String },
    #[error("unknown corpus format `{0}` (expected jsonl or tsv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One utterance: automatic transcription and translation plus references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub doc_id: String,
    pub position: usize,
    pub auto_transcription: String,
    pub auto_translation: String,
    pub gold_transcription: String,
    pub gold_translation: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl Sample {
    fn text_field(&self, name: &str) -> &str {
        match name {
            "auto_transcription" => &self.auto_transcription,
            "auto_translation" => &self.auto_translation,
            "gold_transcription" => &self.gold_transcription,
            "gold_translation" => &self.gold_translation,
            _ => unreachable!("not a text field: {name}"),
        }
    }

    fn normalize(mut self) -> Self {
        for text in [
            &mut self.auto_transcription,
            &mut self.auto_translation,
            &mut self.gold_transcription,
            &mut self.gold_translation,
        ] {
            *text = normalize_text(text);
        }
        self
    }

    fn cells(&self) -> [String; 9] {
        [
            self.id.clone(),
            self.doc_id.clone(),
            self.position.to_string(),
            self.auto_transcription.clone(),
            self.auto_translation.clone(),
            self.gold_transcription.clone(),
            self.gold_translation.clone(),
            self.src_lang.clone(),
            self.tgt_lang.clone(),
        ]
    }
}

/// NFC normalization followed by trimming.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.trim().to_string()
}

/// The samples of one document, ordered by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub samples: Vec<Sample>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    /// Guess the split from a file name; defaults to `Test`.
    pub fn from_path(path: &Path) -> Self {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if stem.contains("train") {
            Split::Train
        } else if stem.contains("valid") || stem.contains("dev") {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// `.tsv` means TSV, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// A named split. `documents` is derived from `samples` at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    samples: Vec<Sample>,
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Groups samples into documents (first-appearance order, sorted by
    /// position). Performs no validation; see [`validate`].
    pub fn new(name: impl Into<String>, split: Split, samples: Vec<Sample>) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&Sample>> = HashMap::new();
        for s in samples.iter().filter(|s| !s.doc_id.is_empty()) {
            groups
                .entry(s.doc_id.as_str())
                .or_insert_with(|| {
                    order.push(s.doc_id.as_str());
                    Vec::new()
                })
                .push(s);
        }
        let documents = order
            .into_iter()
            .map(|doc_id| {
                let mut members: Vec<Sample> = groups[doc_id].iter().map(|s| (*s).clone()).collect();
                members.sort_by_key(|s| s.position);
                Document {
                    doc_id: doc_id.to_string(),
                    samples: members,
                }
            })
            .collect();
        let by_id = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        Self {
            name: name.into(),
            split,
            samples,
            documents,
            by_id,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Processing units in corpus order: each document as a whole (at the
    /// point of its first sample), and each document-less sample on its own.
    pub fn units(&self) -> Vec<Unit<'_>> {
        let docs: HashMap<&str, &Document> =
            self.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let mut seen = HashSet::new();
        let mut units = Vec::new();
        for s in &self.samples {
            if s.doc_id.is_empty() {
                units.push(Unit::Sentence(s));
            } else if seen.insert(s.doc_id.as_str()) {
                units.push(Unit::Document(docs[s.doc_id.as_str()]));
            }
        }
        units
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Unit<'a> {
    Document(&'a Document),
    Sentence(&'a Sample),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Violation {
    DuplicateId,
    NonContiguousPositions,
    EmptyText,
}

/// Violation counts per class plus human-readable details. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub counts: BTreeMap<Violation, usize>,
    pub details: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, kind: Violation) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    fn push(&mut self, kind: Violation, detail: String) {
        *self.counts.entry(kind).or_default() += 1;
        self.details.push(detail);
    }
}

/// Lists every invariant violation in `dataset`.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for s in &dataset.samples {
        if !seen.insert(s.id.as_str()) {
            report.push(Violation::DuplicateId, format!("duplicate id `{}`", s.id));
        }
        for field in TEXT_FIELDS {
            if s.text_field(field).trim().is_empty() {
                report.push(
                    Violation::EmptyText,
                    format!("sample `{}`: empty `{field}`", s.id),
                );
            }
        }
    }
    for doc in &dataset.documents {
        let contiguous = doc
            .samples
            .iter()
            .enumerate()
            .all(|(i, s)| s.position == i);
        if !contiguous {
            report.push(
                Violation::NonContiguousPositions,
                format!("document `{}` positions are not 0..{}", doc.doc_id, doc.len()),
            );
        }
    }
    report
}

fn first_error(dataset: &Dataset) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for s in &dataset.samples {
        if !seen.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
        for field in TEXT_FIELDS {
            if s.text_field(field).is_empty() {
                return Err(CorpusError::EmptyText {
                    id: s.id.clone(),
                    field: field.to_string(),
                });
            }
        }
    }
    for doc in &dataset.documents {
        if doc.samples.iter().enumerate().any(|(i, s)| s.position != i) {
            return Err(CorpusError::NonContiguousPositions(doc.doc_id.clone()));
        }
    }
    Ok(())
}

/// Reads, normalizes and validates a corpus file.
///
/// The dataset name is the file stem; the split is guessed from the file
/// name (see [`Split::from_path`]).
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, CorpusError> {
    let samples = read_samples(path, format)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dataset = Dataset::new(name, Split::from_path(path), samples);
    first_error(&dataset)?;
    Ok(dataset)
}

/// Parses and normalizes rows without checking dataset-level invariants.
pub fn read_samples(path: &Path, format: Format) -> Result<Vec<Sample>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        Format::Jsonl => read_jsonl(reader),
        Format::Tsv => read_tsv(reader),
    }
}

fn read_jsonl(reader: impl BufRead) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            row,
            message: e.to_string(),
        })?;
        let Value::Object(map) = value else {
            return Err(CorpusError::Parse {
                row,
                message: "expected a JSON object".into(),
            });
        };
        if map.contains_key(META_KEY) {
            continue;
        }
        samples.push(sample_from_map(row, &map)?.normalize());
    }
    Ok(samples)
}

fn sample_from_map(row: usize, map: &Map<String, Value>) -> Result<Sample, CorpusError> {
    let text = |field: &str| -> Result<String, CorpusError> {
        match map.get(field) {
            None | Some(Value::Null) => Err(CorpusError::MissingField {
                row,
                field: field.to_string(),
            }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(CorpusError::InvalidField {
                row,
                field: field.to_string(),
                message: format!("expected string, got {other}"),
            }),
        }
    };
    let position = match map.get("position") {
        None | Some(Value::Null) => {
            return Err(CorpusError::MissingField {
                row,
                field: "position".into(),
            })
        }
        Some(v) => v.as_u64().ok_or_else(|| CorpusError::InvalidField {
            row,
            field: "position".into(),
            message: format!("expected a non-negative integer, got {v}"),
        })? as usize,
    };
    Ok(Sample {
        id: text("id")?,
        doc_id: text("doc_id")?,
        position,
        auto_transcription: text("auto_transcription")?,
        auto_translation: text("auto_translation")?,
        gold_transcription: text("gold_transcription")?,
        gold_translation: text("gold_translation")?,
        src_lang: text("src_lang")?,
        tgt_lang: text("tgt_lang")?,
    })
}

fn read_tsv(reader: impl BufRead) -> Result<Vec<Sample>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CorpusError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    for (i, field) in FIELDS.iter().enumerate() {
        if header.get(i) != Some(*field) {
            return Err(CorpusError::MissingField {
                row: 1,
                field: field.to_string(),
            });
        }
    }
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| CorpusError::Parse {
            row,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<String, CorpusError> {
            record
                .get(idx)
                .map(str::to_string)
                .ok_or_else(|| CorpusError::MissingField {
                    row,
                    field: FIELDS[idx].to_string(),
                })
        };
        let position = cell(2)?;
        let position = position.trim().parse::<usize>().map_err(|_| CorpusError::InvalidField {
            row,
            field: "position".into(),
            message: format!("expected a non-negative integer, got `{position}`"),
        })?;
        samples.push(
            Sample {
                id: cell(0)?,
                doc_id: cell(1)?,
                position,
                auto_transcription: cell(3)?,
                auto_translation: cell(4)?,
                gold_transcription: cell(5)?,
                gold_translation: cell(6)?,
                src_lang: cell(7)?,
                tgt_lang: cell(8)?,
            }
            .normalize(),
        );
    }
    Ok(samples)
}

/// Writes `dataset` in sample order, optionally preceded by a provenance
/// line `{"_meta": meta}` (JSONL only).
pub fn write_dataset(
    path: &Path,
    dataset: &Dataset,
    format: Format,
    meta: Option<&Value>,
) -> Result<(), CorpusError> {
    write_samples(path, dataset.samples(), format, meta)
}

pub fn write_samples(
    path: &Path,
    samples: &[Sample],
    format: Format,
    meta: Option<&Value>,
) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Jsonl => {
            if let Some(meta) = meta {
                let mut line = Map::new();
                line.insert(META_KEY.to_string(), meta.clone());
                writeln!(out, "{}", Value::Object(line))?;
            }
            for s in samples {
                writeln!(out, "{}", serde_json::to_string(s).expect("sample serializes"))?;
            }
        }
        Format::Tsv => {
            writeln!(out, "{}", FIELDS.join("\t"))?;
            for s in samples {
                let cells = s.cells();
                if let Some(bad) = cells.iter().position(|c| c.contains(['\t', '\n', '\r'])) {
                    return Err(CorpusError::InvalidField {
                        row: 0,
                        field: FIELDS[bad].to_string(),
                        message: format!("sample `{}` contains a tab or newline; use JSONL", s.id),
                    });
                }
                writeln!(out, "{}", cells.join("\t"))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::Sample;

    pub fn sample(id: &str, doc: &str, pos: usize) -> Sample {
        Sample {
            id: id.into(),
            doc_id: doc.into(),
            position: pos,
            auto_transcription: format!("a {id}"),
            auto_translation: format!("s {id}"),
            gold_transcription: format!("A {id}"),
            gold_translation: format!("S {id}"),
            src_lang: "en".into(),
            tgt_lang: "de".into(),
        }
    }
}
