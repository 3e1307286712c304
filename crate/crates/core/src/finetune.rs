//! Instruction-tuning data for the two fine-tuning stages, written as
//! `{"instruction", "input", "output"}` JSONL with a sidecar manifest.
//!
//! Stage 1 teaches paired generation of a transcription and its
//! translation; stage 2 teaches refinement with the zero-example prompt.
//! Both use the gold references of the (training) corpus and, for `k > 1`,
//! the same chunking and `#i` indexing as inference.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{chunk_dataset, Chunk, ContextError, Field};
use crate::corpus::{Dataset, Sample};
use crate::lang::{LanguageNames, LanguagePair};
use crate::prompts::{render_response, PromptError, QueryText, RefinementTask, TemplateSet};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("chunk `{chunk}`: {source}")]
    Prompt {
        chunk: String,
        #[source]
        source: PromptError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub stage: Stage,
    pub task: Option<RefinementTask>,
    pub k: usize,
    pub dataset: String,
    pub split: String,
    pub template: String,
    pub template_sha256: String,
    pub created_at: String,
    pub count: usize,
    pub assumptions: Vec<String>,
}

fn langs_for(chunk: &Chunk, by_id: &HashMap<&str, &Sample>, names: &LanguageNames) -> LanguagePair {
    let first = by_id[chunk.sentences[0].sample_id.as_str()];
    names.pair(&first.src_lang, &first.tgt_lang)
}

fn chunks_of(dataset: &Dataset, k: usize) -> Result<Vec<Chunk>, FinetuneError> {
    if dataset.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    Ok(chunk_dataset(dataset, k)?)
}

/// One record per chunk: the stage-1 instruction, its (usually empty)
/// input, and the gold transcription and translation as the response.
pub fn stage1_records(
    dataset: &Dataset,
    k: usize,
    names: &LanguageNames,
    templates: &TemplateSet,
) -> Result<Vec<FinetuneRecord>, FinetuneError> {
    let by_id: HashMap<&str, &Sample> = dataset.samples().iter().map(|s| (s.id.as_str(), s)).collect();
    chunks_of(dataset, k)?
        .iter()
        .map(|chunk| {
            let p = templates
                .render_stage1(
                    &chunk.text(Field::GoldTranscription),
                    &chunk.text(Field::GoldTranslation),
                    &langs_for(chunk, &by_id, names),
                )
                .map_err(|source| FinetuneError::Prompt { chunk: chunk.id(), source })?;
            Ok(FinetuneRecord {
                instruction: p.instruction,
                input: p.input,
                output: p.response,
            })
        })
        .collect()
}

/// One record per chunk: the zero-example refinement prompt split into
/// instruction and query body, and the gold response in the task's marker
/// format.
pub fn stage2_records(
    dataset: &Dataset,
    task: RefinementTask,
    k: usize,
    names: &LanguageNames,
    templates: &TemplateSet,
) -> Result<Vec<FinetuneRecord>, FinetuneError> {
    let by_id: HashMap<&str, &Sample> = dataset.samples().iter().map(|s| (s.id.as_str(), s)).collect();
    chunks_of(dataset, k)?
        .iter()
        .map(|chunk| {
            let transcription = chunk.text(Field::Transcription);
            let translation = chunk.text(Field::Translation);
            let prompt = templates
                .render_prompt(
                    task,
                    QueryText {
                        transcription: &transcription,
                        translation: &translation,
                    },
                    &[],
                    &langs_for(chunk, &by_id, names),
                )
                .map_err(|source| FinetuneError::Prompt { chunk: chunk.id(), source })?;
            Ok(FinetuneRecord {
                instruction: prompt.instruction,
                input: prompt.body,
                output: render_response(
                    task,
                    &chunk.text(Field::GoldTranscription),
                    &chunk.text(Field::GoldTranslation),
                ),
            })
        })
        .collect()
}

/// `<path>.manifest.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

pub fn write_records(path: &Path, records: &[FinetuneRecord]) -> Result<(), FinetuneError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    out.flush()?;
    Ok(())
}

fn finish(
    path: &Path,
    records: &[FinetuneRecord],
    stage: Stage,
    task: Option<RefinementTask>,
    k: usize,
    dataset: &Dataset,
    template: &str,
    templates: &TemplateSet,
) -> Result<ExportManifest, FinetuneError> {
    write_records(path, records)?;
    let manifest = ExportManifest {
        stage,
        task,
        k,
        dataset: dataset.name.clone(),
        split: dataset.split.to_string(),
        template: template.to_string(),
        template_sha256: templates.hash_of(template).unwrap_or_default(),
        created_at: chrono::Utc::now().to_rfc3339(),
        count: records.len(),
        assumptions: vec![
            "stage 1 and stage 2 are trained sequentially, stage 1 first".into(),
            match stage {
                Stage::Stage1 => "stage-1 responses are the gold transcription and translation; the input is empty".into(),
                Stage::Stage2 => "stage-2 outputs are the gold references in the task's marker format".into(),
            },
        ],
    };
    std::fs::write(
        manifest_path(path),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(manifest)
}

/// Writes stage-1 records to `path` and the manifest next to it.
pub fn export_stage1(
    path: &Path,
    dataset: &Dataset,
    k: usize,
    names: &LanguageNames,
    templates: &TemplateSet,
) -> Result<ExportManifest, FinetuneError> {
    let records = stage1_records(dataset, k, names, templates)?;
    finish(path, &records, Stage::Stage1, None, k, dataset, "stage1", templates)
}

/// Writes stage-2 records for `task` to `path` and the manifest next to it.
pub fn export_stage2(
    path: &Path,
    dataset: &Dataset,
    task: RefinementTask,
    k: usize,
    names: &LanguageNames,
    templates: &TemplateSet,
) -> Result<ExportManifest, FinetuneError> {
    let records = stage2_records(dataset, task, k, names, templates)?;
    finish(path, &records, Stage::Stage2, Some(task), k, dataset, task.as_str(), templates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::split_indexed_text;
    use crate::corpus::test_support::sample;
    use crate::corpus::Split;
    use crate::prompts::{parse_response, ParseStatus};

    fn doc(n: usize) -> Dataset {
        Dataset::new("d", Split::Train, (0..n).map(|i| sample(&format!("s{i}"), "doc", i)).collect())
    }

    #[test]
    fn counts_follow_chunking() {
        let names = LanguageNames::new();
        let t = TemplateSet::default();
        let ten = Dataset::new(
            "d",
            Split::Train,
            (0..10).map(|i| sample(&format!("s{i}"), &format!("d{i}"), 0)).collect(),
        );
        assert_eq!(stage1_records(&ten, 1, &names, &t).unwrap().len(), 10);
        assert_eq!(stage1_records(&doc(5), 3, &names, &t).unwrap().len(), 2);
        assert_eq!(
            stage2_records(&doc(5), RefinementTask::RefineBoth, 3, &names, &t).unwrap().len(),
            2
        );
    }

    #[test]
    fn stage1_indexed_output() {
        let recs = stage1_records(&doc(3), 3, &LanguageNames::new(), &TemplateSet::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(
            recs[0].output,
            "Transcription: #1 A s0 #2 A s1 #3 A s2\nTranslation: #1 S s0 #2 S s1 #3 S s2"
        );
        assert!(recs[0].input.is_empty());
    }

    #[test]
    fn stage2_outputs() {
        let names = LanguageNames::new();
        let t = TemplateSet::default();
        let one = doc(1);
        let both = stage2_records(&one, RefinementTask::RefineBoth, 1, &names, &t).unwrap();
        assert_eq!(both[0].output, "Refined Transcription: A s0\nRefined Translation: S s0");
        assert!(both[0].instruction.contains("English"));
        assert!(both[0].input.contains("a s0"));
        assert!(!both[0].input.contains("Let me give you"));

        let para = stage2_records(&one, RefinementTask::ParaphraseSt, 1, &names, &t).unwrap();
        assert_eq!(para[0].output, "Paraphrase: S s0");
        assert!(!para[0].input.contains("a s0"));
        assert!(!para[0].instruction.contains("a s0"));

        let chunked = stage2_records(&doc(3), RefinementTask::RefineBoth, 3, &names, &t).unwrap();
        let parsed = parse_response(RefinementTask::RefineBoth, &chunked[0].output, ("", ""));
        assert_eq!(parsed.parse_status, ParseStatus::Ok);
        let segs = split_indexed_text(parsed.refined_translation.as_deref().unwrap(), 3).unwrap();
        assert_eq!(segs, vec!["S s0", "S s1", "S s2"]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let empty = Dataset::new("e", Split::Train, vec![]);
        let r = stage1_records(&empty, 1, &LanguageNames::new(), &TemplateSet::default());
        assert!(matches!(r, Err(FinetuneError::EmptyDataset)));
    }

    #[test]
    fn export_writes_records_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s2.jsonl");
        let t = TemplateSet::default();
        let m = export_stage2(&path, &doc(4), RefinementTask::RefineSt, 2, &LanguageNames::new(), &t).unwrap();
        assert_eq!(m.count, 2);
        assert_eq!(m.template_sha256, t.hash_of("refine_st").unwrap());
        let first = std::fs::read(&path).unwrap();
        export_stage2(&path, &doc(4), RefinementTask::RefineSt, 2, &LanguageNames::new(), &t).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let written: ExportManifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
        assert_eq!(written.task, Some(RefinementTask::RefineSt));
        assert_eq!(written.k, 2);
    }
}
