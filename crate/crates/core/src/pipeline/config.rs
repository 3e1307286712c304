use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::Format;
use crate::lang::LanguageNames;
use crate::llm::{Backend, HttpBackend, RetryPolicy, DEFAULT_MAX_TOKENS};
use crate::prompts::RefinementTask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    ZeroShot,
    RandomM,
    TopM,
}

/// Placement of retrieved examples in the prompt. Random selections keep
/// their draw order under `NearestFirst` and are reversed under
/// `NearestLast`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrder {
    #[default]
    NearestFirst,
    NearestLast,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}
fn default_base_delay_ms() -> u64 {
    1000
}
fn default_max_delay_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Http {
        endpoint: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
        #[serde(default = "default_base_delay_ms")]
        base_delay_ms: u64,
        #[serde(default = "default_max_delay_ms")]
        max_delay_ms: u64,
    },
    Echo,
    GoldOracle,
    Fixture {
        path: PathBuf,
    },
}

impl BackendConfig {
    /// Builds the backend. `gold` supplies the oracle table and is only
    /// called for `GoldOracle`.
    pub fn build(&self, gold: impl FnOnce() -> HashMap<String, String>) -> Result<Backend, PipelineError> {
        Ok(match self {
            BackendConfig::Http {
                endpoint,
                timeout_secs,
                max_attempts,
                base_delay_ms,
                max_delay_ms,
            } => Backend::Http(HttpBackend::from_env(
                endpoint,
                Duration::from_secs(*timeout_secs),
                RetryPolicy {
                    max_attempts: *max_attempts,
                    base_delay: Duration::from_millis(*base_delay_ms),
                    max_delay: Duration::from_millis(*max_delay_ms),
                    jitter: true,
                },
            )?),
            BackendConfig::Echo => Backend::Echo,
            BackendConfig::GoldOracle => Backend::GoldOracle(gold()),
            BackendConfig::Fixture { path } => Backend::fixture_from_file(path)?,
        })
    }
}

fn default_k() -> usize {
    1
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_inflight() -> usize {
    4
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("strefine-run")
}

/// Everything a refinement run depends on. Deserializes from the config
/// file; every field except `test` and `backend` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus to refine.
    pub test: PathBuf,
    /// Example source for `random_m` / `top_m`.
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Embeddings covering the training and test samples (JSONL, or the
    /// binary store when the file ends in `.bin`).
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Corpus format; guessed from the extension when absent.
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default = "default_task")]
    pub task: RefinementTask,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub example_order: ExampleOrder,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub backend: BackendConfig,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// ISO code to display name, layered over the built-in table.
    #[serde(default)]
    pub languages: BTreeMap<String, String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_task() -> RefinementTask {
    RefinementTask::RefineBoth
}

impl RunConfig {
    /// A zero-shot, `k = 1` configuration with defaults for everything else.
    pub fn new(test: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        Self {
            test: test.into(),
            train: None,
            embeddings: None,
            format: None,
            task: default_task(),
            k: 1,
            selection: Selection::ZeroShot,
            m: 0,
            seed: 0,
            example_order: ExampleOrder::NearestFirst,
            model: default_model(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            backend,
            max_inflight: default_inflight(),
            cache: None,
            templates: None,
            languages: BTreeMap::new(),
            output_dir: default_output_dir(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be a non-negative number, got {}", self.temperature));
        }
        match self.selection {
            Selection::ZeroShot if self.m != 0 => {
                return bad(format!("zero_shot selection requires m = 0, got {}", self.m))
            }
            Selection::RandomM | Selection::TopM if self.m == 0 => {
                return bad("random_m and top_m selection require m >= 1".into())
            }
            _ => {}
        }
        if self.selection != Selection::ZeroShot && self.train.is_none() {
            return bad("example selection requires a training corpus (`train`)".into());
        }
        if self.selection == Selection::TopM && self.embeddings.is_none() {
            return bad("top_m selection requires `embeddings`".into());
        }
        Ok(())
    }

    pub fn format_of(&self, path: &Path) -> Format {
        self.format.unwrap_or_else(|| Format::from_path(path))
    }

    pub fn language_names(&self) -> LanguageNames {
        self.languages
            .iter()
            .fold(LanguageNames::new(), |names, (code, name)| names.with_override(code, name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_m_invariant() {
        let mut c = RunConfig::new("t.jsonl", BackendConfig::Echo);
        assert!(c.validate().is_ok());
        c.m = 2;
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        c.selection = Selection::RandomM;
        assert!(c.validate().is_err(), "needs train");
        c.train = Some("train.jsonl".into());
        assert!(c.validate().is_ok());
        c.m = 0;
        assert!(c.validate().is_err());
        c.m = 3;
        c.selection = Selection::TopM;
        assert!(c.validate().is_err(), "needs embeddings");
        c.embeddings = Some("e.jsonl".into());
        assert!(c.validate().is_ok());
        c.k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn deserializes_with_defaults() {
        let c: RunConfig = serde_json::from_value(serde_json::json!({
            "test": "x.tsv",
            "backend": {"kind": "fixture", "path": "fx.jsonl"},
            "selection": "top_m",
            "task": "paraphrase_st",
        }))
        .unwrap();
        assert_eq!(c.k, 1);
        assert_eq!(c.task, RefinementTask::ParaphraseSt);
        assert_eq!(c.selection, Selection::TopM);
        assert_eq!(c.format_of(&c.test), Format::Tsv);
        assert_eq!(c.backend, BackendConfig::Fixture { path: "fx.jsonl".into() });

        let http: BackendConfig =
            serde_json::from_value(serde_json::json!({"kind": "http", "endpoint": "http://h"})).unwrap();
        assert!(matches!(http, BackendConfig::Http { max_attempts: 5, timeout_secs: 120, .. }));
        assert!(serde_json::from_value::<RunConfig>(serde_json::json!({
            "test": "x", "backend": {"kind": "echo"}, "bogus": 1
        }))
        .is_err());
    }

    #[test]
    fn language_overrides() {
        let mut c = RunConfig::new("t", BackendConfig::Echo);
        c.languages.insert("de".into(), "Deutsch".into());
        assert_eq!(c.language_names().name("de"), "Deutsch");
        assert_eq!(c.language_names().name("en"), "English");
    }
}
