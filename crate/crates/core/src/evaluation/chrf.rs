use super::bleu::ngram_counts;
use super::ScoreReport;
use crate::error::{Error, Result};

pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 3.0;

/// Corpus chrF with β = 3 over character n-grams, n = 1..6, after removing
/// all whitespace. Counts are aggregated over the corpus per order; the
/// score averages `F3_n` over the orders that occur in the references.
pub fn chrf3<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<ScoreReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Alignment {
            what: "hypothesis and reference counts differ".into(),
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    let chars = |s: &str| -> Vec<char> { s.chars().filter(|c| !c.is_whitespace()).collect() };
    let mut matches = [0usize; CHRF_ORDER];
    let mut hyp_totals = [0usize; CHRF_ORDER];
    let mut ref_totals = [0usize; CHRF_ORDER];
    let (mut c, mut r) = (0, 0);
    let mut all_equal = true;
    for (h, rf) in hypotheses.iter().zip(references) {
        let h = chars(h.as_ref());
        let rf = chars(rf.as_ref());
        all_equal &= h == rf;
        c += h.len();
        r += rf.len();
        for n in 1..=CHRF_ORDER {
            let ref_counts = ngram_counts(&rf, n);
            ref_totals[n - 1] += ref_counts.values().sum::<usize>();
            for (gram, count) in ngram_counts(&h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                hyp_totals[n - 1] += count;
            }
        }
    }
    let ratio = |m: usize, t: usize| if t == 0 { 0.0 } else { m as f64 / t as f64 };
    let precisions: Vec<f64> = (0..CHRF_ORDER).map(|i| ratio(matches[i], hyp_totals[i])).collect();
    let recalls: Vec<f64> = (0..CHRF_ORDER).map(|i| ratio(matches[i], ref_totals[i])).collect();
    let b2 = CHRF_BETA * CHRF_BETA;
    let f_scores: Vec<f64> = precisions
        .iter()
        .zip(&recalls)
        .map(|(&p, &r)| {
            let denom = b2 * p + r;
            if denom == 0.0 {
                0.0
            } else {
                (1.0 + b2) * p * r / denom
            }
        })
        .collect();
    let present: Vec<f64> = (0..CHRF_ORDER)
        .filter(|&i| ref_totals[i] > 0)
        .map(|i| f_scores[i])
        .collect();
    let score = if present.is_empty() {
        // Nothing to recall: only an equally empty output is perfect.
        if all_equal {
            100.0
        } else {
            0.0
        }
    } else {
        100.0 * present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(ScoreReport {
        metric: "chrf3".into(),
        score,
        precisions,
        recalls,
        f_scores,
        brevity_penalty: None,
        hyp_length: c,
        ref_length: r,
    })
}
