//! Prompt rendering for the three refinement tasks, the stage-1 fine-tuning
//! prompt and the direct-assessment scoring prompt, plus response parsing.
//!
//! Templates are plain text split into `[section]` blocks with `<name>`
//! placeholders. Defaults are compiled in from `templates/`; any of them can
//! be replaced by a file of the same name in a user template directory.
//! Lines starting with `#` before the first section are comments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lang::LanguagePair;

pub const MARKER_REFINED_TRANSCRIPTION: &str = "Refined Transcription:";
pub const MARKER_REFINED_TRANSLATION: &str = "Refined Translation:";
pub const MARKER_PARAPHRASE: &str = "Paraphrase:";
pub const MARKER_TRANSCRIPTION: &str = "Transcription:";
pub const MARKER_TRANSLATION: &str = "Translation:";

const DEFAULT_REFINE_BOTH: &str = include_str!("../templates/refine_both.txt");
const DEFAULT_REFINE_ST: &str = include_str!("../templates/refine_st.txt");
const DEFAULT_PARAPHRASE_ST: &str = include_str!("../templates/paraphrase_st.txt");
const DEFAULT_STAGE1: &str = include_str!("../templates/stage1.txt");
const DEFAULT_GPT_EVAL: &str = include_str!("../templates/gpt_eval.txt");

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<([a-z_]+)>").unwrap());
static SECTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[([a-z_0-9]+)\]\s*$").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("example {index}: field `{field}` is required for {task}")]
    MissingExampleField {
        index: usize,
        field: &'static str,
        task: RefinementTask,
    },
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("unsupported task `{0}` (expected refine_both, refine_st or paraphrase_st)")]
    UnsupportedTask(String),
    #[error("template `{name}`: {message}")]
    Template { name: String, message: String },
    #[error("no integer score in 0..=100 found in response")]
    ParseFailure,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementTask {
    /// (A, S) -> (A', S')
    RefineBoth,
    /// (A, S) -> S'
    RefineSt,
    /// S -> S'
    ParaphraseSt,
}

impl RefinementTask {
    pub const ALL: [RefinementTask; 3] = [
        RefinementTask::RefineBoth,
        RefinementTask::RefineSt,
        RefinementTask::ParaphraseSt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RefinementTask::RefineBoth => "refine_both",
            RefinementTask::RefineSt => "refine_st",
            RefinementTask::ParaphraseSt => "paraphrase_st",
        }
    }

    /// Output markers the response must carry, in output order.
    pub fn markers(self) -> &'static [&'static str] {
        match self {
            RefinementTask::RefineBoth => &[MARKER_REFINED_TRANSCRIPTION, MARKER_REFINED_TRANSLATION],
            RefinementTask::RefineSt => &[MARKER_REFINED_TRANSLATION],
            RefinementTask::ParaphraseSt => &[MARKER_PARAPHRASE],
        }
    }

    pub fn refines_transcription(self) -> bool {
        self == RefinementTask::RefineBoth
    }

    pub fn uses_transcription(self) -> bool {
        self != RefinementTask::ParaphraseSt
    }
}

impl fmt::Display for RefinementTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefinementTask {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "refine_both" => Ok(RefinementTask::RefineBoth),
            "refine_st" => Ok(RefinementTask::RefineSt),
            "paraphrase_st" => Ok(RefinementTask::ParaphraseSt),
            _ => Err(PromptError::UnsupportedTask(s.to_string())),
        }
    }
}

/// A demonstration: automatic outputs with their refined versions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InContextExample {
    pub transcription: String,
    pub translation: String,
    pub refined_transcription: String,
    pub refined_translation: String,
}

impl InContextExample {
    fn check(&self, task: RefinementTask, index: usize) -> Result<(), PromptError> {
        let mut required: Vec<(&'static str, &str)> = vec![
            ("translation", &self.translation),
            ("refined_translation", &self.refined_translation),
        ];
        if task.uses_transcription() {
            required.push(("transcription", &self.transcription));
        }
        if task.refines_transcription() {
            required.push(("refined_transcription", &self.refined_transcription));
        }
        match required.into_iter().find(|(_, v)| v.trim().is_empty()) {
            Some((field, _)) => Err(PromptError::MissingExampleField { index, field, task }),
            None => Ok(()),
        }
    }
}

/// The text being refined: a single sentence or an index-prefixed chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryText<'a> {
    pub transcription: &'a str,
    pub translation: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub task: RefinementTask,
    pub text: String,
    pub n_examples: usize,
    pub src_lang_name: String,
    pub tgt_lang_name: String,
    /// The instruction block alone.
    pub instruction: String,
    /// Everything after the instruction (examples, bridge and query).
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedRefinement {
    pub refined_transcription: Option<String>,
    pub refined_translation: Option<String>,
    pub parse_status: ParseStatus,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    name: String,
    sections: BTreeMap<String, String>,
}

impl Template {
    fn parse(name: &str, text: &str, required: &[&str]) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if let Some(caps) = SECTION.captures(line) {
                let key = caps[1].to_string();
                sections.insert(key.clone(), Vec::new());
                current = Some(key);
            } else if let Some(key) = &current {
                sections.get_mut(key).unwrap().push(line);
            } else if !(line.trim().is_empty() || line.starts_with('#')) {
                return Err(PromptError::Template {
                    name: name.into(),
                    message: format!("text outside a section: {line:?}"),
                });
            }
        }
        let sections: BTreeMap<String, String> = sections
            .into_iter()
            .map(|(k, mut lines)| {
                while lines.last().is_some_and(|l| l.trim().is_empty()) {
                    lines.pop();
                }
                (k, lines.join("\n"))
            })
            .collect();
        for req in required {
            if !sections.contains_key(*req) {
                return Err(PromptError::Template {
                    name: name.into(),
                    message: format!("missing section [{req}]"),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            sections,
        })
    }

    fn section(&self, key: &str) -> &str {
        self.sections.get(key).map(String::as_str).unwrap_or("")
    }
}

/// Replaces `<name>` placeholders in one pass; substituted text is never
/// rescanned and unknown names are left untouched.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    PLACEHOLDER
        .replace_all(template, |caps: &Captures<'_>| {
            values
                .iter()
                .find(|(k, _)| *k == &caps[1])
                .map(|(_, v)| (*v).to_string())
                .unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

const TASK_SECTIONS: &[&str] = &["instruction", "examples_header", "example", "bridge", "query"];

/// The full set of prompt templates used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    refine_both: Template,
    refine_st: Template,
    paraphrase_st: Template,
    stage1: Template,
    gpt_eval: Template,
    sources: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_sources(BTreeMap::new()).expect("built-in templates parse")
    }
}

impl TemplateSet {
    fn from_sources(overrides: BTreeMap<String, String>) -> Result<Self, PromptError> {
        let defaults = [
            ("refine_both", DEFAULT_REFINE_BOTH),
            ("refine_st", DEFAULT_REFINE_ST),
            ("paraphrase_st", DEFAULT_PARAPHRASE_ST),
            ("stage1", DEFAULT_STAGE1),
            ("gpt_eval", DEFAULT_GPT_EVAL),
        ];
        let sources: BTreeMap<String, String> = defaults
            .iter()
            .map(|(name, text)| {
                let text = overrides.get(*name).cloned().unwrap_or_else(|| text.to_string());
                (name.to_string(), text)
            })
            .collect();
        let t = |name: &str, req: &[&str]| Template::parse(name, &sources[name], req);
        Ok(Self {
            refine_both: t("refine_both", TASK_SECTIONS)?,
            refine_st: t("refine_st", TASK_SECTIONS)?,
            paraphrase_st: t("paraphrase_st", TASK_SECTIONS)?,
            stage1: t("stage1", &["instruction", "response"])?,
            gpt_eval: t("gpt_eval", &["prompt"])?,
            sources,
        })
    }

    /// Built-in templates, replaced by any `<name>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut overrides = BTreeMap::new();
        for name in ["refine_both", "refine_st", "paraphrase_st", "stage1", "gpt_eval"] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                overrides.insert(name.to_string(), fs::read_to_string(&path)?);
            }
        }
        Self::from_sources(overrides)
    }

    /// Writes the active templates into `dir` as editable files.
    pub fn write_dir(&self, dir: &Path) -> Result<(), PromptError> {
        fs::create_dir_all(dir)?;
        for (name, text) in &self.sources {
            fs::write(dir.join(format!("{name}.txt")), text)?;
        }
        Ok(())
    }

    /// SHA-256 (hex) of each template source, keyed by template name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.sources
            .iter()
            .map(|(name, text)| (name.clone(), hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }

    pub fn hash_of(&self, name: &str) -> Option<String> {
        self.hashes().remove(name)
    }

    fn task(&self, task: RefinementTask) -> &Template {
        match task {
            RefinementTask::RefineBoth => &self.refine_both,
            RefinementTask::RefineSt => &self.refine_st,
            RefinementTask::ParaphraseSt => &self.paraphrase_st,
        }
    }

    /// Instruction, then (when `examples` is non-empty) the example header,
    /// numbered example blocks and bridging sentence, then the query.
    pub fn render_prompt(
        &self,
        task: RefinementTask,
        query: QueryText<'_>,
        examples: &[InContextExample],
        langs: &LanguagePair,
    ) -> Result<RenderedPrompt, PromptError> {
        for (i, ex) in examples.iter().enumerate() {
            ex.check(task, i + 1)?;
        }
        if query.translation.trim().is_empty() {
            return Err(PromptError::EmptyField("translation"));
        }
        if task.uses_transcription() && query.transcription.trim().is_empty() {
            return Err(PromptError::EmptyField("transcription"));
        }
        let tpl = self.task(task);
        let n = examples.len().to_string();
        let langs_kv = [("src_lang", langs.src.as_str()), ("tgt_lang", langs.tgt.as_str())];
        let with = |section: &str, extra: &[(&str, &str)]| {
            let mut values: Vec<(&str, &str)> = langs_kv.to_vec();
            values.extend_from_slice(extra);
            fill(tpl.section(section), &values)
        };
        let instruction = with("instruction", &[]);
        let mut body: Vec<String> = Vec::new();
        if !examples.is_empty() {
            body.push(with("examples_header", &[("n_examples", &n)]));
            for (i, ex) in examples.iter().enumerate() {
                let index = (i + 1).to_string();
                body.push(with(
                    "example",
                    &[
                        ("index", &index),
                        ("transcription", &ex.transcription),
                        ("translation", &ex.translation),
                        ("refined_transcription", &ex.refined_transcription),
                        ("refined_translation", &ex.refined_translation),
                    ],
                ));
            }
            body.push(with("bridge", &[]));
        }
        body.push(with(
            "query",
            &[
                ("transcription", query.transcription),
                ("translation", query.translation),
            ],
        ));
        let body = body.join("\n");
        Ok(RenderedPrompt {
            task,
            text: format!("{instruction}\n{body}"),
            n_examples: examples.len(),
            src_lang_name: langs.src.clone(),
            tgt_lang_name: langs.tgt.clone(),
            instruction,
            body,
        })
    }

    /// Stage-1 fine-tuning pair: (instruction, input, response).
    pub fn render_stage1(
        &self,
        transcription: &str,
        translation: &str,
        langs: &LanguagePair,
    ) -> Result<Stage1Prompt, PromptError> {
        if transcription.trim().is_empty() {
            return Err(PromptError::EmptyField("transcription"));
        }
        if translation.trim().is_empty() {
            return Err(PromptError::EmptyField("translation"));
        }
        let values = [
            ("src_lang", langs.src.as_str()),
            ("tgt_lang", langs.tgt.as_str()),
            ("transcription", transcription),
            ("translation", translation),
        ];
        let instruction = fill(self.stage1.section("instruction"), &values);
        let input = fill(self.stage1.section("input"), &values);
        let prompt = if input.is_empty() {
            instruction.clone()
        } else {
            format!("{instruction}\n{input}")
        };
        Ok(Stage1Prompt {
            prompt,
            instruction,
            input,
            response: fill(self.stage1.section("response"), &values),
        })
    }

    pub fn render_gpt_eval(
        &self,
        source: &str,
        translation: &str,
        langs: &LanguagePair,
    ) -> Result<String, PromptError> {
        if source.trim().is_empty() {
            return Err(PromptError::EmptyField("source"));
        }
        if translation.trim().is_empty() {
            return Err(PromptError::EmptyField("translation"));
        }
        Ok(fill(
            self.gpt_eval.section("prompt"),
            &[
                ("src_lang", langs.src.as_str()),
                ("tgt_lang", langs.tgt.as_str()),
                ("source", source),
                ("translation", translation),
            ],
        ))
    }

    pub fn template_names(&self) -> Vec<&str> {
        [&self.refine_both, &self.refine_st, &self.paraphrase_st, &self.stage1, &self.gpt_eval]
            .iter()
            .map(|t| t.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage1Prompt {
    pub prompt: String,
    pub instruction: String,
    pub input: String,
    pub response: String,
}

/// Renders a well-formed model response for `task` (the target format that
/// [`parse_response`] accepts).
pub fn render_response(task: RefinementTask, refined_transcription: &str, refined_translation: &str) -> String {
    match task {
        RefinementTask::RefineBoth => format!(
            "{MARKER_REFINED_TRANSCRIPTION} {refined_transcription}\n{MARKER_REFINED_TRANSLATION} {refined_translation}"
        ),
        RefinementTask::RefineSt => format!("{MARKER_REFINED_TRANSLATION} {refined_translation}"),
        RefinementTask::ParaphraseSt => format!("{MARKER_PARAPHRASE} {refined_translation}"),
    }
}

/// First occurrence of `marker`, preferring one at the start of a line.
/// Occurrences directly after a quotation mark are mentions (as in the
/// instruction itself), not fields, and are skipped.
fn find_marker(text: &str, marker: &str) -> Option<usize> {
    let mut first = None;
    for (pos, _) in text.match_indices(marker) {
        if text[..pos].ends_with(['"', '\'', '\u{201C}', '\u{2018}', '\u{00AB}', '\u{201E}', '`']) {
            continue;
        }
        if pos == 0 || text[..pos].ends_with('\n') {
            return Some(pos);
        }
        first.get_or_insert(pos);
    }
    first
}

/// Extracts the refined fields required by `task` from a model response.
///
/// Each field runs from its marker to the next required marker or the end of
/// the response, trimmed. A missing marker or empty field yields
/// `ParseStatus::Fallback` with `fallback` returned verbatim.
pub fn parse_response(task: RefinementTask, response: &str, fallback: (&str, &str)) -> ParsedRefinement {
    let markers = task.markers();
    let starts: Option<Vec<usize>> = markers.iter().map(|m| find_marker(response, m)).collect();
    let fields: Option<Vec<String>> = starts.and_then(|starts| {
        starts
            .iter()
            .zip(markers)
            .map(|(&start, marker)| {
                let from = start + marker.len();
                let to = starts
                    .iter()
                    .copied()
                    .filter(|&s| s >= from)
                    .min()
                    .unwrap_or(response.len());
                let value = response[from..to].trim();
                (!value.is_empty()).then(|| value.to_string())
            })
            .collect()
    });
    match fields {
        Some(mut fields) => {
            let translation = fields.pop();
            let transcription = fields.pop();
            ParsedRefinement {
                refined_transcription: transcription,
                refined_translation: translation,
                parse_status: ParseStatus::Ok,
                raw_response: response.to_string(),
            }
        }
        None => ParsedRefinement {
            refined_transcription: Some(fallback.0.to_string()),
            refined_translation: Some(fallback.1.to_string()),
            parse_status: ParseStatus::Fallback,
            raw_response: response.to_string(),
        },
    }
}

/// First standalone integer in `0..=100` in a scoring response.
///
/// A digit run counts as standalone when it is not glued to letters or
/// underscores on either side.
pub fn parse_gpt_score(response: &str) -> Result<u8, PromptError> {
    for m in INTEGER.find_iter(response) {
        let before = response[..m.start()].chars().next_back();
        let after = response[m.end()..].chars().next();
        let glued = |c: Option<char>| c.is_some_and(|c| c.is_alphabetic() || c == '_');
        if glued(before) || glued(after) {
            continue;
        }
        if let Ok(v) = m.as_str().parse::<u32>() {
            if v <= 100 {
                return Ok(v as u8);
            }
        }
    }
    Err(PromptError::ParseFailure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn de() -> LanguagePair {
        LanguagePair::new("English", "German")
    }

    fn examples() -> Vec<InContextExample> {
        vec![
            InContextExample {
                transcription: "Now, there's a lot going on in this movie.".into(),
                translation: "Es gibt viel in diesem Film.".into(),
                refined_transcription: "Now, there's a lot going on in this movie.".into(),
                refined_translation: "In diesem Film passiert sehr viel.".into(),
            },
            InContextExample {
                transcription: "So I'm going to show you a movie.".into(),
                translation: "Ich werde Ihnen einen Film zeigen.".into(),
                refined_transcription: "So I'm going to show you a movie.".into(),
                refined_translation: "Ich werde nun einen Film zeigen.".into(),
            },
        ]
    }

    const QUERY: QueryText<'static> = QueryText {
        transcription: "You're going to see the whole thing take place in this movie.",
        translation: "Sie werden sehen, wie das Ganze in diesem Film passiert.",
    };

    #[test]
    fn zero_shot_refine_both_layout() {
        let p = TemplateSet::default()
            .render_prompt(RefinementTask::RefineBoth, QUERY, &[], &de())
            .unwrap();
        let expected = "Given the English transcription and German translation, both derived from speech and potentially containing errors, please provide the refined transcription and translation without any explanation. Present the results in two lines, starting with \"Refined Transcription:\" and \"Refined Translation:\", respectively.\n\
Transcription: You're going to see the whole thing take place in this movie.\n\
Translation: Sie werden sehen, wie das Ganze in diesem Film passiert.";
        assert_eq!(p.text, expected);
        assert!(!p.text.contains("Let me give you"));
        assert_eq!(p.n_examples, 0);
        assert_eq!(format!("{}\n{}", p.instruction, p.body), p.text);
    }

    #[test]
    fn two_shot_refine_both_layout() {
        let p = TemplateSet::default()
            .render_prompt(RefinementTask::RefineBoth, QUERY, &examples(), &de())
            .unwrap();
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(lines[1], "Let me give you 2 examples.");
        assert_eq!(lines[2], "## 1");
        assert_eq!(lines[3], "Transcription: Now, there's a lot going on in this movie.");
        assert_eq!(lines[6], "Refined Translation: In diesem Film passiert sehr viel.");
        assert_eq!(lines[7], "## 2");
        assert_eq!(
            lines[12],
            "Now consider the following transcription and translation, please provide the refined transcription and translation following above output format."
        );
        assert_eq!(lines[13], format!("Transcription: {}", QUERY.transcription));
        assert_eq!(lines[14], format!("Translation: {}", QUERY.translation));
        assert_eq!(lines.len(), 15);
    }

    #[test]
    fn refine_st_layout() {
        let p = TemplateSet::default()
            .render_prompt(RefinementTask::RefineSt, QUERY, &examples(), &de())
            .unwrap();
        assert!(p.text.contains("please provide the refined translation without any explanation. Present the result in one line, starting with \"Refined Translation:\"."));
        assert!(!p.text.contains(MARKER_REFINED_TRANSCRIPTION));
        assert!(p.text.contains("## 2\nTranscription: So I'm going to show you a movie.\nTranslation: Ich werde Ihnen einen Film zeigen.\nRefined Translation: Ich werde nun einen Film zeigen."));
    }

    #[test]
    fn paraphrase_never_shows_transcription() {
        let sentinel = "ZZZ-SENTINEL-TRANSCRIPTION";
        let q = QueryText {
            transcription: sentinel,
            translation: "Sie werden sehen.",
        };
        let mut exs = examples();
        exs[0].transcription = sentinel.into();
        let p = TemplateSet::default()
            .render_prompt(RefinementTask::ParaphraseSt, q, &exs, &de())
            .unwrap();
        assert!(!p.text.contains(sentinel));
        assert!(!p.text.contains(MARKER_REFINED_TRANSCRIPTION));
        assert!(p.text.starts_with("Please give me a paraphrase in German without any explanation. Present the result in one line, starting with \"Paraphrase:\"."));
        assert!(p.text.contains("Now consider the following sentence, please provide the German paraphrase following above output format."));
        assert!(p.text.ends_with("\nSentence: Sie werden sehen."));

        let zero = TemplateSet::default()
            .render_prompt(RefinementTask::ParaphraseSt, q, &[], &de())
            .unwrap();
        assert_eq!(zero.text.matches("Sentence:").count(), 1);
        assert!(!zero.text.contains(sentinel));
    }

    #[test]
    fn example_field_checks() {
        let mut exs = examples();
        exs[1].refined_transcription.clear();
        let t = TemplateSet::default();
        assert!(matches!(
            t.render_prompt(RefinementTask::RefineBoth, QUERY, &exs, &de()),
            Err(PromptError::MissingExampleField { index: 2, field: "refined_transcription", .. })
        ));
        assert!(t.render_prompt(RefinementTask::RefineSt, QUERY, &exs, &de()).is_ok());
    }

    #[test]
    fn placeholders_are_single_pass() {
        let q = QueryText {
            transcription: "say <translation> now",
            translation: "x",
        };
        let p = TemplateSet::default()
            .render_prompt(RefinementTask::RefineBoth, q, &[], &de())
            .unwrap();
        assert!(p.text.contains("Transcription: say <translation> now"));
    }

    #[test]
    fn stage1_pair() {
        let t = TemplateSet::default();
        let a = t.render_stage1("hello.", "hallo.", &de()).unwrap();
        assert_eq!(a.response, "Transcription: hello.\nTranslation: hallo.");
        assert!(a.input.is_empty());
        let b = t.render_stage1("bye.", "tschüss.", &de()).unwrap();
        assert_eq!(a.instruction, b.instruction);
        assert_ne!(a.response, b.response);
        assert!(matches!(t.render_stage1("hello.", " ", &de()), Err(PromptError::EmptyField(_))));
    }

    #[test]
    fn gpt_eval_prompt() {
        let t = TemplateSet::default();
        let p = t.render_gpt_eval("Good morning.", "Guten Morgen.", &de()).unwrap();
        assert!(p.contains("Good morning.") && p.contains("Guten Morgen."));
        assert!(p.contains(" 0 ") && p.contains("100"));
        assert_eq!(p, t.render_gpt_eval("Good morning.", "Guten Morgen.", &de()).unwrap());
        assert!(matches!(t.render_gpt_eval("x", "", &de()), Err(PromptError::EmptyField(_))));
    }

    #[test]
    fn parse_well_formed() {
        let r = parse_response(RefinementTask::RefineBoth, "Refined Transcription: X\nRefined Translation: Y", ("a", "s"));
        assert_eq!(r.parse_status, ParseStatus::Ok);
        assert_eq!(r.refined_transcription.as_deref(), Some("X"));
        assert_eq!(r.refined_translation.as_deref(), Some("Y"));

        let r = parse_response(RefinementTask::ParaphraseSt, "Paraphrase: Z", ("a", "s"));
        assert_eq!((r.parse_status, r.refined_translation.as_deref()), (ParseStatus::Ok, Some("Z")));
        assert_eq!(r.refined_transcription, None);
    }

    #[test]
    fn parse_fallbacks() {
        let r = parse_response(RefinementTask::RefineBoth, "Sorry, I cannot help with that.", ("a", "s"));
        assert_eq!(r.parse_status, ParseStatus::Fallback);
        assert_eq!(r.refined_transcription.as_deref(), Some("a"));
        assert_eq!(r.refined_translation.as_deref(), Some("s"));
        // Empty content counts as missing.
        let r = parse_response(RefinementTask::RefineBoth, "Refined Transcription:\nRefined Translation: Y", ("a", "s"));
        assert_eq!(r.parse_status, ParseStatus::Fallback);
        // Markers are case-sensitive.
        let r = parse_response(RefinementTask::RefineSt, "refined translation: Y", ("a", "s"));
        assert_eq!(r.parse_status, ParseStatus::Fallback);
    }

    #[test]
    fn parse_tolerates_chatter() {
        let r = parse_response(
            RefinementTask::RefineBoth,
            "Sure! Refined Transcription: X  \n\nRefined Translation:   Y\n",
            ("a", "s"),
        );
        assert_eq!(r.refined_transcription.as_deref(), Some("X"));
        assert_eq!(r.refined_translation.as_deref(), Some("Y"));
        // Line-start occurrence wins over an earlier mid-line mention.
        let r = parse_response(
            RefinementTask::RefineSt,
            "I will write Refined Translation: soon\nRefined Translation: Y",
            ("a", "s"),
        );
        assert_eq!(r.refined_translation.as_deref(), Some("Y"));
    }

    #[test]
    fn quoted_markers_are_mentions() {
        let t = TemplateSet::default();
        let langs = LanguagePair::new("English", "German");
        for task in RefinementTask::ALL {
            let p = t
                .render_prompt(task, QueryText { transcription: "a", translation: "s" }, &[], &langs)
                .unwrap();
            let r = parse_response(task, &p.text, ("a", "s"));
            assert_eq!(r.parse_status, ParseStatus::Fallback, "{task}");
        }
        let r = parse_response(
            RefinementTask::RefineSt,
            "Starting with \"Refined Translation:\" as asked.\nRefined Translation: Y",
            ("a", "s"),
        );
        assert_eq!(r.refined_translation.as_deref(), Some("Y"));
    }

    #[test]
    fn render_parse_round_trip() {
        for task in RefinementTask::ALL {
            let resp = render_response(task, "#1 A one #2 A two", "#1 S one #2 S two");
            let r = parse_response(task, &resp, ("x", "y"));
            assert_eq!(r.parse_status, ParseStatus::Ok);
            assert_eq!(r.refined_translation.as_deref(), Some("#1 S one #2 S two"));
            if task.refines_transcription() {
                assert_eq!(r.refined_transcription.as_deref(), Some("#1 A one #2 A two"));
            }
        }
    }

    #[test]
    fn gpt_scores() {
        assert_eq!(parse_gpt_score("85").unwrap(), 85);
        assert_eq!(parse_gpt_score("Score: 73/100").unwrap(), 73);
        assert_eq!(parse_gpt_score("I'd say 250, no, 90").unwrap(), 90);
        assert_eq!(parse_gpt_score("100").unwrap(), 100);
        assert!(parse_gpt_score("excellent").is_err());
        assert!(parse_gpt_score("gpt4 says").is_err());
    }

    #[test]
    fn task_names() {
        for t in RefinementTask::ALL {
            assert_eq!(t.as_str().parse::<RefinementTask>().unwrap(), t);
        }
        assert!("refine_all".parse::<RefinementTask>().is_err());
    }

    #[test]
    fn template_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let defaults = TemplateSet::default();
        defaults.write_dir(dir.path()).unwrap();
        assert_eq!(TemplateSet::load_dir(dir.path()).unwrap(), defaults);
        fs::write(
            dir.path().join("gpt_eval.txt"),
            "[prompt]\nRate <translation> (0-100).",
        )
        .unwrap();
        let custom = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(custom.render_gpt_eval("s", "t", &de()).unwrap(), "Rate t (0-100).");
        assert_ne!(custom.hash_of("gpt_eval"), defaults.hash_of("gpt_eval"));
        assert_eq!(custom.hash_of("stage1"), defaults.hash_of("stage1"));
        fs::write(dir.path().join("refine_st.txt"), "[instruction]\nonly").unwrap();
        assert!(matches!(TemplateSet::load_dir(dir.path()), Err(PromptError::Template { .. })));
    }
}
