use std::collections::HashMap;
use std::hash::Hash;

use super::ScoreReport;
use crate::error::{Error, Result};

pub(crate) fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram precisions for n = 1..4, uniform
/// weights, brevity penalty `min(1, e^{1−r/c})` and no smoothing.
pub fn bleu4<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(hypotheses: &[H], references: &[R]) -> Result<ScoreReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment {
            what: "hypothesis and reference counts differ".into(),
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        let (h, rf) = (h.as_ref(), rf.as_ref());
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let ref_counts = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * bp * log_mean.exp()
    };
    Ok(ScoreReport {
        metric: "bleu4".into(),
        score,
        precisions,
        recalls: Vec::new(),
        f_scores: Vec::new(),
        brevity_penalty: Some(bp),
        hyp_length: c,
        ref_length: r,
    })
}
