//! Paired bootstrap resampling over corpus BLEU.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{segment_stats, BleuStats};
use super::MetricsError;
use crate::rng::SplitMix64;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 12345;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
    /// Mean of BLEU(a) - BLEU(b) over the resamples.
    pub mean_delta: f64,
    /// BLEU(a) - BLEU(b) on the full corpus.
    pub observed_delta: f64,
}

/// Tests whether system `a` differs from system `b` in corpus BLEU.
///
/// Resample `r` draws `n` sentence indices uniformly with replacement from
/// the stream `SplitMix64::derive(seed, r)`. The p-value is the fraction of
/// resamples whose delta does not keep the sign of the observed delta (it
/// flips or vanishes); an observed delta of zero yields 1.0.
pub fn paired_bootstrap(
    hyp_a: &[String],
    hyp_b: &[String],
    references: &[String],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult, MetricsError> {
    super::check_lengths(hyp_a.len(), references.len())?;
    super::check_lengths(hyp_b.len(), references.len())?;
    let n = references.len();
    if n < 2 {
        return Err(MetricsError::TooFewSegments(n));
    }
    if n_resamples == 0 {
        return Err(MetricsError::NoResamples);
    }
    let stats_a = segment_stats(hyp_a, references)?;
    let stats_b = segment_stats(hyp_b, references)?;
    let total = |stats: &[BleuStats], idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = BleuStats::default();
        for i in idx {
            acc += &stats[i];
        }
        acc.score().score
    };
    let observed_delta = total(&stats_a, &mut (0..n)) - total(&stats_b, &mut (0..n));
    let sign = if observed_delta > 0.0 {
        1.0
    } else if observed_delta < 0.0 {
        -1.0
    } else {
        0.0
    };

    let deltas: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = SplitMix64::derive(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
            total(&stats_a, &mut idx.iter().copied()) - total(&stats_b, &mut idx.iter().copied())
        })
        .collect();

    let against = deltas.iter().filter(|&&d| d * sign <= 0.0).count();
    Ok(SignificanceResult {
        p_value: against as f64 / n_resamples as f64,
        n_resamples,
        seed,
        mean_delta: deltas.iter().sum::<f64>() / n_resamples as f64,
        observed_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| format!("sentence number {i} has quite a few words in it today"))
            .collect()
    }

    #[test]
    fn identical_systems() {
        let refs = corpus(10);
        let r = paired_bootstrap(&refs, &refs, &refs, 200, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.mean_delta, 0.0);
    }

    #[test]
    fn dominant_system_is_significant() {
        let refs = corpus(50);
        let garbage: Vec<String> = refs
            .iter()
            .map(|s| s.split(' ').rev().collect::<Vec<_>>().join(" "))
            .collect();
        let r = paired_bootstrap(&refs, &garbage, &refs, 1000, 12345).unwrap();
        assert!(r.p_value < 0.01);
        assert!(r.observed_delta > 0.0);
        // Reversed arguments: delta negative, still significant.
        let r = paired_bootstrap(&garbage, &refs, &refs, 1000, 12345).unwrap();
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn deterministic() {
        let refs = corpus(20);
        let mut b = refs.clone();
        b[3] = "something else".into();
        b[7] = "sentence number".into();
        let x = paired_bootstrap(&refs, &b, &refs, 300, 99).unwrap();
        let y = paired_bootstrap(&refs, &b, &refs, 300, 99).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn too_few() {
        let one = corpus(1);
        assert!(matches!(
            paired_bootstrap(&one, &one, &one, 10, 1),
            Err(MetricsError::TooFewSegments(1))
        ));
    }
}
