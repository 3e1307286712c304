//! Corpus BLEU with the signature
//! `nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:2.0.0`.

use std::collections::HashMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::tokenize::normalize_13a;
use super::MetricsError;

pub const MAX_ORDER: usize = 4;
pub const SIGNATURE: &str = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|version:2.0.0";

/// Stand-in for log(0), as in the reference scorer.
const LOG_ZERO: f64 = -9_999_999_999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Smoothed n-gram precisions in percent, n = 1..4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

/// Sufficient statistics of one or more segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub hyp_len: u64,
    pub ref_len: u64,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

impl AddAssign<&BleuStats> for BleuStats {
    fn add_assign(&mut self, rhs: &BleuStats) {
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += rhs.correct[n];
            self.total[n] += rhs.total[n];
        }
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str]) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    for n in 1..=MAX_ORDER {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn segment(hypothesis: &str, reference: &str) -> Self {
        let hyp = normalize_13a(hypothesis);
        let reference = normalize_13a(reference);
        let hyp_tokens: Vec<&str> = hyp.split(' ').filter(|t| !t.is_empty()).collect();
        let ref_tokens: Vec<&str> = reference.split(' ').filter(|t| !t.is_empty()).collect();
        let ref_counts = ngram_counts(&ref_tokens);
        let mut stats = BleuStats {
            hyp_len: hyp_tokens.len() as u64,
            ref_len: ref_tokens.len() as u64,
            ..Default::default()
        };
        for (gram, count) in ngram_counts(&hyp_tokens) {
            let n = gram.len() - 1;
            stats.total[n] += count;
            if let Some(&r) = ref_counts.get(gram) {
                stats.correct[n] += count.min(r);
            }
        }
        stats
    }

    pub fn score(&self) -> BleuScore {
        let (hyp_len, ref_len) = (self.hyp_len, self.ref_len);
        let brevity_penalty = if hyp_len < ref_len {
            if hyp_len > 0 {
                (1.0 - ref_len as f64 / hyp_len as f64).exp()
            } else {
                0.0
            }
        } else {
            1.0
        };
        let mut precisions = [0.0; MAX_ORDER];
        let make = |score: f64, precisions: [f64; MAX_ORDER]| BleuScore {
            score,
            precisions,
            brevity_penalty,
            hyp_len: hyp_len as usize,
            ref_len: ref_len as usize,
            correct: self.correct,
            total: self.total,
        };
        if self.correct.iter().all(|&c| c == 0) {
            return make(0.0, precisions);
        }
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            precisions[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.total[n] as f64)
            } else {
                100.0 * self.correct[n] as f64 / self.total[n] as f64
            };
        }
        let log_sum: f64 = precisions
            .iter()
            .map(|&p| if p == 0.0 { LOG_ZERO } else { p.ln() })
            .sum();
        make(brevity_penalty * (log_sum / MAX_ORDER as f64).exp(), precisions)
    }
}

pub fn segment_stats(hypotheses: &[String], references: &[String]) -> Result<Vec<BleuStats>, MetricsError> {
    super::check_lengths(hypotheses.len(), references.len())?;
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::segment(h, r))
        .collect())
}

pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<BleuScore, MetricsError> {
    let mut total = BleuStats::default();
    for s in segment_stats(hypotheses, references)? {
        total += &s;
    }
    Ok(total.score())
}

/// Same smoothing and order as the corpus score; diagnostic only.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> BleuScore {
    BleuStats::segment(hypothesis, reference).score()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identity_is_100() {
        let b = corpus_bleu(&s(&["a b c d"]), &s(&["a b c d"])).unwrap();
        assert!((b.score - 100.0).abs() < 1e-9);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    // Values below come from sacrebleu 2.0.0 under SIGNATURE.
    #[test]
    fn short_hypothesis_without_4grams() {
        let b = corpus_bleu(&s(&["a b c"]), &s(&["a b c d"])).unwrap();
        assert!(b.score.abs() < 0.01);
        assert!((b.brevity_penalty - 0.7165313105737893).abs() < 1e-12);
        assert_eq!(b.precisions, [100.0, 100.0, 100.0, 0.0]);
    }

    #[test]
    fn disjoint_scores_zero() {
        let b = corpus_bleu(&s(&["x y z w"]), &s(&["a b c d"])).unwrap();
        assert_eq!(b.score, 0.0);
        assert_eq!(b.precisions, [0.0; 4]);
    }

    #[test]
    fn exp_smoothing_on_missing_orders() {
        // 1 correct unigram out of 4, no higher-order matches.
        let b = corpus_bleu(&s(&["a y z w"]), &s(&["a b c d"])).unwrap();
        assert_eq!(b.precisions, [25.0, 100.0 / (2.0 * 3.0), 100.0 / (4.0 * 2.0), 100.0 / 8.0]);
        let expected = (b.precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp();
        assert!((b.score - expected).abs() < 1e-9);
    }

    #[test]
    fn score_is_bp_times_geomean() {
        let b = corpus_bleu(
            &s(&["the cat sat on a mat today", "hello there my friend"]),
            &s(&["the cat sat on the mat", "hello there friend of mine"]),
        )
        .unwrap();
        let geo = (b.precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp();
        assert!((b.score - b.brevity_penalty * geo).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            corpus_bleu(&s(&["a"]), &s(&[])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(corpus_bleu(&[], &[]), Err(MetricsError::EmptyCorpus)));
    }
}
