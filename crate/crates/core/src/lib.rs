//! Refinement of speech transcriptions and translations with large language
//! models: corpus handling, metrics, example retrieval, prompt construction,
//! chunked document context, LLM access, fine-tune export and the end-to-end
//! pipeline.

pub mod context;
pub mod corpus;
pub mod finetune;
pub mod lang;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod rng;

pub use context::{Chunk, RealignedSentence, RealignmentResult};
pub use corpus::{Dataset, Document, Format, Sample, Split};
pub use lang::{LanguageNames, LanguagePair};
pub use llm::{Backend, LlmRequest, LlmResponse};
pub use metrics::{MetricDelta, MetricReport};
pub use pipeline::{RefinementRun, RunConfig};
pub use prompts::{ParseStatus, ParsedRefinement, RefinementTask, TemplateSet};
pub use retrieval::{EmbeddingRecord, RetrievalIndex};
pub use rng::SplitMix64;
