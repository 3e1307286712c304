//! Synthetic inputs shared by the benchmarks.

use strefine_core::corpus::{Dataset, Sample, Split};
use strefine_core::retrieval::EmbeddingRecord;
use strefine_core::rng::SplitMix64;

const WORDS: [&str; 16] = [
    "the", "model", "speech", "translation", "error", "we", "refine", "output", "context", "sentence", "of", "and",
    "is", "a", "document", ".",
];

/// A sentence of `len` words drawn from a small vocabulary.
pub fn sentence(rng: &mut SplitMix64, len: usize) -> String {
    (0..len)
        .map(|_| WORDS[rng.below(WORDS.len() as u64) as usize])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` hypothesis/reference pairs of 10 to 30 words.
pub fn sentence_pairs(n: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let len = 10 + rng.below(21) as usize;
            (sentence(&mut rng, len), sentence(&mut rng, len))
        })
        .unzip()
}

fn unit(rng: &mut SplitMix64) -> f32 {
    (rng.next_u64() >> 40) as f32 / (1u32 << 24) as f32
}

/// `n` records with `d_a` + `d_s` uniform components.
pub fn embeddings(n: usize, d_a: usize, d_s: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| EmbeddingRecord {
            sample_id: format!("r{i:06}"),
            e_a: (0..d_a).map(|_| unit(&mut rng)).collect(),
            e_s: (0..d_s).map(|_| unit(&mut rng)).collect(),
        })
        .collect()
}

/// `docs` documents of `doc_len` sentences each.
pub fn corpus(docs: usize, doc_len: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let mut samples = Vec::with_capacity(docs * doc_len);
    for d in 0..docs {
        for p in 0..doc_len {
            let text = sentence(&mut rng, 12);
            samples.push(Sample {
                id: format!("d{d}s{p}"),
                doc_id: format!("d{d}"),
                position: p,
                auto_transcription: text.clone(),
                auto_translation: text.clone(),
                gold_transcription: text.clone(),
                gold_translation: text,
                src_lang: "en".into(),
                tgt_lang: "de".into(),
            });
        }
    }
    Dataset::new("bench", Split::Test, samples)
}
