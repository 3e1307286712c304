//! Case-sensitive word error rate with Unicode punctuation removed.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricsError;

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").unwrap());

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WerScore {
    /// Percent.
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
    /// Pairs dropped from a corpus score because the reference was empty.
    #[serde(default)]
    pub excluded: usize,
}

impl WerScore {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn from_counts(substitutions: usize, insertions: usize, deletions: usize, ref_words: usize) -> Self {
        let errors = substitutions + insertions + deletions;
        Self {
            wer: 100.0 * errors as f64 / ref_words as f64,
            substitutions,
            insertions,
            deletions,
            ref_words,
            excluded: 0,
        }
    }
}

/// Deletes every Unicode punctuation (category P) character and collapses
/// whitespace runs to single spaces.
pub fn strip_punctuation(text: &str) -> String {
    PUNCT
        .replace_all(text, "")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn words(text: &str) -> Vec<String> {
    strip_punctuation(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Default)]
struct Cell {
    cost: usize,
    sub: usize,
    ins: usize,
    del: usize,
}

/// Minimal word-level edit alignment, returned as (S, I, D).
///
/// Among alignments of equal cost, substitutions are preferred over
/// deletions, and deletions over insertions.
pub fn align_counts<T: PartialEq>(hyp: &[T], reference: &[T]) -> (usize, usize, usize) {
    let (n, m) = (reference.len(), hyp.len());
    let mut prev: Vec<Cell> = (0..=m)
        .map(|j| Cell {
            cost: j,
            ins: j,
            ..Default::default()
        })
        .collect();
    let mut cur = vec![Cell::default(); m + 1];
    for i in 1..=n {
        cur[0] = Cell {
            cost: i,
            del: i,
            ..Default::default()
        };
        for j in 1..=m {
            let diag = prev[j - 1];
            let mut best = if reference[i - 1] == hyp[j - 1] {
                diag
            } else {
                Cell {
                    cost: diag.cost + 1,
                    sub: diag.sub + 1,
                    ..diag
                }
            };
            let up = prev[j];
            if up.cost + 1 < best.cost {
                best = Cell {
                    cost: up.cost + 1,
                    del: up.del + 1,
                    ..up
                };
            }
            let left = cur[j - 1];
            if left.cost + 1 < best.cost {
                best = Cell {
                    cost: left.cost + 1,
                    ins: left.ins + 1,
                    ..left
                };
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let last = prev[m];
    (last.sub, last.ins, last.del)
}

pub fn sentence_wer(hypothesis: &str, reference: &str) -> Result<WerScore, MetricsError> {
    let reference = words(reference);
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hyp = words(hypothesis);
    let (s, i, d) = align_counts(&hyp, &reference);
    Ok(WerScore::from_counts(s, i, d, reference.len()))
}

/// Micro-averaged WER: edits and reference words are summed over all pairs
/// before dividing. Pairs with an empty reference are skipped and counted in
/// `excluded`.
pub fn corpus_wer(hypotheses: &[String], references: &[String]) -> Result<WerScore, MetricsError> {
    super::check_lengths(hypotheses.len(), references.len())?;
    let (mut s, mut i, mut d, mut words, mut excluded) = (0, 0, 0, 0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        match sentence_wer(h, r) {
            Ok(w) => {
                s += w.substitutions;
                i += w.insertions;
                d += w.deletions;
                words += w.ref_words;
            }
            Err(MetricsError::EmptyReference) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if words == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(WerScore {
        excluded,
        ..WerScore::from_counts(s, i, d, words)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[&str]) -> Vec<String> {
        x.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical() {
        assert_eq!(sentence_wer("a b c", "a b c").unwrap().wer, 0.0);
    }

    #[test]
    fn one_substitution() {
        let w = sentence_wer("a x c", "a b c").unwrap();
        assert_eq!((w.substitutions, w.insertions, w.deletions), (1, 0, 0));
        assert!((w.wer - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn punctuation_ignored_case_kept() {
        assert_eq!(sentence_wer("Hello world", "Hello, world").unwrap().wer, 0.0);
        assert_eq!(sentence_wer("hello world", "Hello world").unwrap().wer, 50.0);
    }

    #[test]
    fn insertions_and_deletions() {
        let w = sentence_wer("a b c d", "a c").unwrap();
        assert_eq!((w.substitutions, w.insertions, w.deletions), (0, 2, 0));
        let w = sentence_wer("a", "a b c").unwrap();
        assert_eq!((w.substitutions, w.insertions, w.deletions), (0, 0, 2));
        let w = sentence_wer("", "a b").unwrap();
        assert_eq!(w.deletions, 2);
        assert_eq!(w.wer, 100.0);
    }

    #[test]
    fn empty_reference_flagged() {
        assert!(matches!(sentence_wer("a", " ... "), Err(MetricsError::EmptyReference)));
    }

    #[test]
    fn corpus_micro_average() {
        assert_eq!(corpus_wer(&v(&["a b", "c"]), &v(&["a b", "c"])).unwrap().wer, 0.0);
        let w = corpus_wer(&v(&["a x c", "d"]), &v(&["a b c", "d"])).unwrap();
        assert!((w.wer - 25.0).abs() < 1e-9);
        assert!(matches!(corpus_wer(&[], &[]), Err(MetricsError::EmptyCorpus)));
        let w = corpus_wer(&v(&["a", "z"]), &v(&["a", "!"])).unwrap();
        assert_eq!((w.excluded, w.ref_words), (1, 1));
    }

    #[test]
    fn strip_is_idempotent_on_samples() {
        for s in ["Hello, world!", "  «Ja» — sagte er…  ", "x-y (z) [w] {v}", "¿Qué?"] {
            let once = strip_punctuation(s);
            assert_eq!(strip_punctuation(&once), once);
        }
    }
}
