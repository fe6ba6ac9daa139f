//! ROUGE-L F1 and correctness labeling of the top-1 generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Sample, SortedProbView};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Longest common subsequence length, O(|a|*|b|) time with a rolling row.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 of LCS precision and recall over token sequences. Zero when either
/// side is empty or nothing matches.
pub fn f1_from_tokens<F: Scalar, T: PartialEq>(candidate: &[T], reference: &[T]) -> F {
    if candidate.is_empty() || reference.is_empty() {
        return F::zero();
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return F::zero();
    }
    let lcs = F::from_usize(lcs).expect("count fits");
    let precision = lcs / F::from_usize(candidate.len()).expect("count fits");
    let recall = lcs / F::from_usize(reference.len()).expect("count fits");
    (F::lit(2.0) * precision * recall) / (precision + recall)
}

pub fn rouge_l_f1<F: Scalar>(candidate: &str, reference: &str) -> F {
    f1_from_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessLabel {
    pub sample_id: String,
    pub rouge_l_f1: f64,
    pub threshold: f64,
    /// `rouge_l_f1 > threshold`, strictly.
    pub correct: bool,
}

impl CorrectnessLabel {
    /// Relabels at another threshold without rescoring.
    pub fn at_threshold(&self, threshold: f64) -> Self {
        Self {
            threshold,
            correct: self.rouge_l_f1 > threshold,
            ..self.clone()
        }
    }
}

/// Index into `sample.generations` of the highest-probability generation
/// with non-empty text.
pub fn top1_answer_index<F: Scalar>(sample: &Sample, view: &SortedProbView<F>) -> Option<usize> {
    view.origin_index()
        .iter()
        .copied()
        .find(|&i| !sample.generations[i].is_degenerate())
}

/// Scores the top-1 answer against every reference and keeps the best.
pub fn label_sample<F: Scalar>(
    sample: &Sample,
    threshold: f64,
    view: &SortedProbView<F>,
) -> Result<CorrectnessLabel> {
    let fail = |reason: &str| Error::Labeling {
        sample_id: sample.id.clone(),
        reason: reason.into(),
    };
    let refs: Vec<Vec<String>> = sample
        .references
        .iter()
        .map(|r| tokenize(r))
        .filter(|t| !t.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(fail("every reference is empty after tokenization"));
    }
    let top = top1_answer_index(sample, view).ok_or_else(|| fail("no generation has text"))?;
    let cand = tokenize(&sample.generations[top].text);
    let best = refs
        .iter()
        .map(|r| f1_from_tokens::<f64, _>(&cand, r))
        .fold(0.0, f64::max);
    Ok(CorrectnessLabel {
        sample_id: sample.id.clone(),
        rouge_l_f1: best,
        threshold,
        correct: best > threshold,
    })
}
