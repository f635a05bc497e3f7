//! Corpus-level BLEU4 and chrF3.

mod bleu;
mod chrf;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::bleu4;
pub use chrf::{chrf3, CHRF_BETA, CHRF_ORDER};

use crate::data::{read_lines, tokenize};
use crate::error::{Error, Result};

/// Corpus score with its components. BLEU fills `precisions` (n = 1..4)
/// and `brevity_penalty`; chrF fills per-order `precisions`, `recalls` and
/// `f_scores`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: String,
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recalls: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brevity_penalty: Option<f64>,
    /// Tokens (BLEU) or non-space characters (chrF).
    pub hyp_length: usize,
    pub ref_length: usize,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Bleu4,
    Chrf3,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "bleu4" => Some(Metric::Bleu4),
            "chrf3" => Some(Metric::Chrf3),
            _ => None,
        }
    }
}

/// Scores line-aligned hypothesis and reference lines. BLEU splits on
/// whitespace; no other normalisation is applied.
pub fn score_lines<S: AsRef<str>>(metric: Metric, hyps: &[S], refs: &[S]) -> Result<ScoreReport> {
    match metric {
        Metric::Bleu4 => {
            let h: Vec<Vec<String>> = hyps.iter().map(|l| tokenize(l.as_ref())).collect();
            let r: Vec<Vec<String>> = refs.iter().map(|l| tokenize(l.as_ref())).collect();
            bleu4(&h, &r)
        }
        Metric::Chrf3 => chrf3(hyps, refs),
    }
}

pub fn score_files(metric: Metric, hyp_path: &Path, ref_path: &Path) -> Result<ScoreReport> {
    let hyps = read_lines(hyp_path)?;
    let refs = read_lines(ref_path)?;
    if hyps.len() != refs.len() {
        return Err(Error::Alignment {
            what: format!(
                "{} and {} have different line counts",
                hyp_path.display(),
                ref_path.display()
            ),
            left: hyps.len(),
            right: refs.len(),
        });
    }
    score_lines(metric, &hyps, &refs)
}
