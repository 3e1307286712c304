//! Config file loading and flag overrides for `refine`, `shuffle` and
//! `gpt-eval`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use strefine_core::pipeline::RunConfig;
use toml::{Table, Value};

/// Keys whose string values are paths resolved against the config file's
/// directory when relative.
const PATH_KEYS: [&str; 6] = ["test", "train", "embeddings", "cache", "templates", "output_dir"];

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration. Flags below override its keys.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// jsonl or tsv
    #[arg(long)]
    pub format: Option<String>,
    /// refine_both, refine_st or paraphrase_st
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// zero_shot, random_m or top_m
    #[arg(long)]
    pub selection: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// nearest_first or nearest_last
    #[arg(long)]
    pub example_order: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// http, echo, gold_oracle or fixture
    #[arg(long)]
    pub backend: Option<String>,
    /// Endpoint for the http backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Response file for the fixture backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub max_inflight: Option<usize>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Language display name, as CODE=NAME. Repeatable.
    #[arg(long = "lang", value_name = "CODE=NAME")]
    pub languages: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn resolve(base: &Path, value: &mut Value) {
    if let Value::String(s) = value {
        let p = Path::new(s.as_str());
        if p.is_relative() {
            *s = base.join(p).to_string_lossy().into_owned();
        }
    }
}

/// Reads a config file, rewriting relative paths against its directory.
pub fn load_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut table: Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(v) = table.get_mut(key) {
            resolve(base, v);
        }
    }
    if let Some(Value::Table(backend)) = table.get_mut("backend") {
        if let Some(v) = backend.get_mut("path") {
            resolve(base, v);
        }
    }
    Ok(table)
}

fn backend_table(table: &mut Table) -> Result<&mut Table> {
    match table
        .entry("backend")
        .or_insert_with(|| Value::Table(Table::new()))
    {
        Value::Table(t) => Ok(t),
        _ => bail!("`backend` must be a table"),
    }
}

impl RunArgs {
    /// The merged table: config file first, then every flag that was given.
    pub fn table(&self) -> Result<Table> {
        let mut t = match &self.config {
            Some(p) => load_table(p)?,
            None => Table::new(),
        };
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(key.to_string(), v);
            }
        };
        set("test", self.test.as_deref().map(path_value));
        set("train", self.train.as_deref().map(path_value));
        set("embeddings", self.embeddings.as_deref().map(path_value));
        set("format", self.format.clone().map(Value::String));
        set("task", self.task.clone().map(Value::String));
        set("k", self.k.map(|v| Value::Integer(v as i64)));
        set("selection", self.selection.clone().map(Value::String));
        set("m", self.m.map(|v| Value::Integer(v as i64)));
        set("seed", self.seed.map(|v| Value::Integer(v as i64)));
        set("example_order", self.example_order.clone().map(Value::String));
        set("model", self.model.clone().map(Value::String));
        set("temperature", self.temperature.map(Value::Float));
        set("max_tokens", self.max_tokens.map(|v| Value::Integer(v.into())));
        set("max_inflight", self.max_inflight.map(|v| Value::Integer(v as i64)));
        set("cache", self.cache.as_deref().map(path_value));
        set("templates", self.templates.as_deref().map(path_value));
        set("output_dir", self.output_dir.as_deref().map(path_value));

        if let Some(kind) = &self.backend {
            let b = backend_table(&mut t)?;
            // Settings of a different backend kind do not carry over.
            if b.get("kind").and_then(Value::as_str) != Some(kind.as_str()) {
                b.clear();
                b.insert("kind".into(), Value::String(kind.clone()));
            }
        }
        if let Some(endpoint) = &self.endpoint {
            backend_table(&mut t)?.insert("endpoint".into(), Value::String(endpoint.clone()));
        }
        if let Some(path) = &self.fixture {
            backend_table(&mut t)?.insert("path".into(), path_value(path));
        }
        if !self.languages.is_empty() {
            let langs = match t
                .entry("languages")
                .or_insert_with(|| Value::Table(Table::new()))
            {
                Value::Table(l) => l,
                _ => bail!("`languages` must be a table"),
            };
            for pair in &self.languages {
                let Some((code, name)) = pair.split_once('=') else {
                    bail!("--lang expects CODE=NAME, got `{pair}`");
                };
                langs.insert(code.trim().to_string(), Value::String(name.trim().to_string()));
            }
        }
        Ok(t)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let config: RunConfig = Value::Table(self.table()?)
            .try_into()
            .context("invalid run configuration")?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use strefine_core::pipeline::{BackendConfig, Selection};

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "test = \"data/test.jsonl\"\nk = 3\nselection = \"random_m\"\nm = 2\ntrain = \"/abs/train.jsonl\"\n\n[backend]\nkind = \"fixture\"\npath = \"resp.jsonl\"\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(path),
            k: Some(5),
            ..Default::default()
        };
        let c = args.run_config().unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.m, 2);
        assert_eq!(c.selection, Selection::RandomM);
        assert_eq!(c.test, dir.path().join("data/test.jsonl"));
        assert_eq!(c.train.as_deref(), Some(Path::new("/abs/train.jsonl")));
        assert_eq!(
            c.backend,
            BackendConfig::Fixture {
                path: dir.path().join("resp.jsonl")
            }
        );

        let switched = RunArgs {
            backend: Some("echo".into()),
            ..args
        };
        assert_eq!(switched.run_config().unwrap().backend, BackendConfig::Echo);
    }

    #[test]
    fn flags_alone() {
        let args = RunArgs {
            test: Some("t.jsonl".into()),
            backend: Some("http".into()),
            endpoint: Some("http://localhost:8000".into()),
            languages: vec!["xx=Klingon".into()],
            ..Default::default()
        };
        let c = args.run_config().unwrap();
        assert!(matches!(c.backend, BackendConfig::Http { ref endpoint, timeout_secs: 120, .. } if endpoint == "http://localhost:8000"));
        assert_eq!(c.languages["xx"], "Klingon");
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let base = RunArgs {
            test: Some("t.jsonl".into()),
            backend: Some("echo".into()),
            ..Default::default()
        };
        let bad_m = RunArgs {
            m: Some(3),
            ..base.clone()
        };
        assert!(bad_m.run_config().is_err());
        let unknown = RunArgs {
            selection: Some("best_m".into()),
            ..base.clone()
        };
        assert!(unknown.run_config().is_err());
        let bad_lang = RunArgs {
            languages: vec!["en".into()],
            ..base
        };
        assert!(bad_lang.run_config().is_err());
        assert!(RunArgs::default().run_config().is_err());
    }
}
