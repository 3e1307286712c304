use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use strefine_core::corpus::{read_samples, validate, write_dataset, Dataset, Format, Sample, Split};
use strefine_core::finetune::{export_stage1, export_stage2};
use strefine_core::lang::LanguageNames;
use strefine_core::llm::{Cache, LlmError};
use strefine_core::metrics::{export_for_neural_scoring, DEFAULT_RESAMPLES, DEFAULT_SEED};
use strefine_core::pipeline::{
    align_to_reference, evaluate_run, load_corpus, load_embedding_file, run_gpt_eval, run_refinement,
    run_shuffle_ablation, shuffle_dataset, GptEvalOptions, PipelineError, RefinementRun, RunConfig, ShuffleKind,
    TOOLKIT, VERSION,
};
use strefine_core::prompts::{RefinementTask, TemplateSet};
use strefine_core::retrieval::{build_index, check_known_ids, write_binary};

mod config;

use config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "strefine", version, about = "Joint refinement of speech transcriptions and translations with LLMs")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a JSONL or TSV corpus into canonical JSONL with provenance.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check a corpus for duplicate ids, position gaps and empty fields.
    Validate {
        input: PathBuf,
        #[arg(long)]
        format: Option<Format>,
    },
    /// Convert embedding JSONL into the binary store.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Corpora whose sample ids the embeddings must belong to. Repeatable.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
    },
    /// Refine a test corpus and write refined.jsonl plus a run manifest.
    Refine {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a refined corpus and its unrefined baseline against the gold references.
    Evaluate {
        #[arg(long)]
        refined: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Metrics JSON destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write instruction-tuning records for stage 1 or stage 2.
    ExportFinetune {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, value_parser = ["1", "2"])]
        stage: String,
        #[arg(long, default_value = "refine_both")]
        task: RefinementTask,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long = "lang", value_name = "CODE=NAME")]
        languages: Vec<String>,
    },
    /// Shuffle a corpus, or run the shuffled-context ablation when a backend is configured.
    Shuffle {
        #[arg(long)]
        kind: ShuffleKind,
        #[arg(long, default_value_t = 0)]
        shuffle_seed: u64,
        /// Corpus to shuffle (corpus mode).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Shuffled corpus destination (corpus mode).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score original and refined translations of a seeded sample with an LLM judge.
    GptEval {
        #[arg(long)]
        refined: PathBuf,
        #[arg(long, default_value_t = 200)]
        sample_n: usize,
        #[arg(long, default_value = "gpt-4o")]
        judge_model: String,
        #[arg(long)]
        output: Option<PathBuf>,
        /// `--test` names the reference corpus; `--seed` picks the sample.
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write source/hypothesis/reference files for external neural scorers.
    ExportNeuralScoring {
        #[arg(long)]
        refined: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Raised when `validate` or `ingest` finds violations.
#[derive(Debug)]
struct ValidationFailed(usize);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} validation violation(s)", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(PipelineError::CoverageMismatch { .. }) = cause.downcast_ref::<PipelineError>() {
            return 3;
        }
        if cause.downcast_ref::<LlmError>().is_some_and(LlmError::is_exhaustion) {
            return 2;
        }
    }
    1
}

/// A closed pipe (e.g. `| head`) ends output quietly.
fn print_json(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_or_print(output: Option<&Path>, value: &Value) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", p.display())),
        None => {
            print_json(value);
            Ok(())
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn unvalidated(path: &Path, format: Option<Format>) -> Result<Dataset> {
    let format = format.unwrap_or_else(|| Format::from_path(path));
    let samples = read_samples(path, format).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset::new(name, Split::from_path(path), samples))
}

/// Refined outputs are read without dataset checks so that coverage
/// problems surface as coverage mismatches.
fn refined_samples(path: &Path) -> Result<Vec<Sample>> {
    read_samples(path, Format::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn check(dataset: &Dataset) -> Result<Value> {
    let report = validate(dataset);
    for d in &report.details {
        eprintln!("violation: {d}");
    }
    let summary = json!({
        "dataset": dataset.name,
        "split": dataset.split.to_string(),
        "samples": dataset.len(),
        "documents": dataset.documents().len(),
        "valid": report.is_empty(),
        "violations": report.counts,
    });
    if !report.is_empty() {
        print_json(&summary);
        return Err(ValidationFailed(report.details.len()).into());
    }
    Ok(summary)
}

fn language_names(pairs: &[String]) -> Result<LanguageNames> {
    pairs.iter().try_fold(LanguageNames::new(), |names, pair| match pair.split_once('=') {
        Some((code, name)) => Ok(names.with_override(code.trim(), name.trim())),
        None => bail!("--lang expects CODE=NAME, got `{pair}`"),
    })
}

fn run_summary(config: &RunConfig, run: &RefinementRun) -> Value {
    json!({
        "output_dir": config.output_dir,
        "samples": run.samples.len(),
        "chunks": run.chunks.len(),
        "fallback_samples": run.fallback_samples(),
        "requests": run.stats.requests,
        "cache_hits": run.stats.cache_hits,
        "backend_calls": run.stats.backend_calls,
        "elapsed_ms": run.elapsed_ms,
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { input, format, output } => {
            let format = format.unwrap_or_else(|| Format::from_path(&input));
            let dataset = unvalidated(&input, Some(format))?;
            let summary = check(&dataset)?;
            let meta = json!({
                "toolkit": TOOLKIT,
                "version": VERSION,
                "source": input,
                "source_format": format,
                "source_sha256": sha256_file(&input)?,
                "name": dataset.name,
                "split": dataset.split.to_string(),
            });
            write_dataset(&output, &dataset, Format::Jsonl, Some(&meta))
                .with_context(|| format!("writing {}", output.display()))?;
            print_json(&summary);
        }
        Command::Validate { input, format } => {
            print_json(&check(&unvalidated(&input, format)?)?);
        }
        Command::Index {
            embeddings,
            output,
            datasets,
        } => {
            let records = load_embedding_file(&embeddings).with_context(|| format!("reading {}", embeddings.display()))?;
            if !datasets.is_empty() {
                let loaded = datasets
                    .iter()
                    .map(|p| load_corpus(p, None))
                    .collect::<Result<Vec<_>, _>>()?;
                check_known_ids(&records, |id| loaded.iter().any(|d| d.get(id).is_some()))?;
            }
            let index = build_index(&records)?;
            write_binary(&output, &records)?;
            print_json(&json!({
                "records": index.len(),
                "dim": index.dim(),
                "output": output,
            }));
        }
        Command::Refine { run } => {
            let config = run.run_config()?;
            let result = run_refinement(&config)?;
            print_json(&run_summary(&config, &result));
        }
        Command::Evaluate {
            refined,
            reference,
            resamples,
            seed,
            output,
        } => {
            let reference = load_corpus(&reference, None)?;
            let evaluation = evaluate_run(&refined_samples(&refined)?, &reference, resamples, seed)?;
            write_or_print(output.as_deref(), &serde_json::to_value(&evaluation)?)?;
        }
        Command::ExportFinetune {
            train,
            stage,
            task,
            k,
            output,
            templates,
            languages,
        } => {
            let dataset = load_corpus(&train, None)?;
            let templates = match templates {
                Some(dir) => TemplateSet::load_dir(&dir)?,
                None => TemplateSet::default(),
            };
            let names = language_names(&languages)?;
            let manifest = if stage == "1" {
                export_stage1(&output, &dataset, k, &names, &templates)?
            } else {
                export_stage2(&output, &dataset, task, k, &names, &templates)?
            };
            print_json(&serde_json::to_value(&manifest)?);
        }
        Command::Shuffle {
            kind,
            shuffle_seed,
            input,
            output,
            run,
        } => {
            if run.config.is_some() || run.backend.is_some() {
                let config = run.run_config()?;
                let result = run_shuffle_ablation(&config, kind, shuffle_seed)?;
                print_json(&run_summary(&config, &result));
            } else {
                let (Some(input), Some(output)) = (input, output) else {
                    bail!("shuffle needs --input and --output, or a run configuration for the ablation");
                };
                let dataset = load_corpus(&input, None)?;
                let shuffled = shuffle_dataset(&dataset, kind, shuffle_seed)?;
                let meta = json!({
                    "toolkit": TOOLKIT,
                    "version": VERSION,
                    "source": input,
                    "source_sha256": sha256_file(&input)?,
                    "shuffle": {"kind": kind, "seed": shuffle_seed},
                });
                write_dataset(&output, &shuffled, Format::Jsonl, Some(&meta))
                    .with_context(|| format!("writing {}", output.display()))?;
                print_json(&json!({
                    "samples": shuffled.len(),
                    "documents": shuffled.documents().len(),
                    "output": output,
                }));
            }
        }
        Command::GptEval {
            refined,
            sample_n,
            judge_model,
            output,
            run,
        } => {
            let config = run.run_config()?;
            let reference = load_corpus(&config.test, config.format)?;
            let backend = config.backend.build(HashMap::new)?;
            let cache = config.cache.as_deref().map(Cache::open).transpose()?;
            let templates = match &config.templates {
                Some(dir) => TemplateSet::load_dir(dir)?,
                None => TemplateSet::default(),
            };
            let options = GptEvalOptions {
                sample_n,
                seed: config.seed,
                model: judge_model,
                temperature: config.temperature,
                max_tokens: config.max_tokens,
                max_inflight: config.max_inflight,
            };
            let report = run_gpt_eval(
                &refined_samples(&refined)?,
                &reference,
                &backend,
                cache.as_ref(),
                &templates,
                &config.language_names(),
                &options,
            )?;
            write_or_print(output.as_deref(), &serde_json::to_value(&report)?)?;
        }
        Command::ExportNeuralScoring {
            refined,
            reference,
            out_dir,
        } => {
            let reference = load_corpus(&reference, None)?;
            let refined = refined_samples(&refined)?;
            let aligned = align_to_reference(&refined, &reference)?;
            let ids: Vec<String> = reference.samples().iter().map(|s| s.id.clone()).collect();
            let sources: Vec<String> = reference.samples().iter().map(|s| s.gold_transcription.clone()).collect();
            let refs: Vec<String> = reference.samples().iter().map(|s| s.gold_translation.clone()).collect();
            let baseline: Vec<String> = reference.samples().iter().map(|s| s.auto_translation.clone()).collect();
            let hyps: Vec<String> = aligned.iter().map(|s| s.auto_translation.clone()).collect();
            let mut written = Vec::new();
            for (prefix, hyp) in [("baseline", &baseline), ("refined", &hyps)] {
                let e = export_for_neural_scoring(&out_dir, prefix, &ids, &sources, hyp, &refs)?;
                written.extend([e.source, e.hypothesis, e.reference, e.ids]);
            }
            print_json(&json!({ "segments": ids.len(), "files": written }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
