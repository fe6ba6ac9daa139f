//! AUROC, correctness-threshold sweeps and threshold grid search.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{score_sample, Estimator};
use crate::records::{Sample, SortedProbView, ViewOptions};
use crate::rouge::label_sample;
use crate::scalar::Scalar;

/// Default grid for the threshold search: 0.00, 0.05, ..., 0.95.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

/// Parses `start:end:step` (inclusive) or a comma-separated list of values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid grid `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [start, end, step] => {
            let start: f64 = start.trim().parse().map_err(|_| bad())?;
            let end: f64 = end.trim().parse().map_err(|_| bad())?;
            let step: f64 = step.trim().parse().map_err(|_| bad())?;
            if step.is_nan() || step <= 0.0 || end < start {
                return Err(bad());
            }
            let count = ((end - start) / step + 1e-9).floor() as usize + 1;
            // rounded to kill accumulated representation error (0.15000000000000002)
            (0..count)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        [list] => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() {
        return Err(bad());
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("grid value {a} is outside [0, 1]")));
    }
    Ok(grid)
}

/// Probability that a random incorrect sample scores above a random correct
/// one, ties counting one half (Mann-Whitney U with midranks).
///
/// `incorrect[i]` marks the positive class. Pair counts are accumulated as
/// integers, so the result is the exact ratio rounded once.
pub fn auroc<F: Scalar>(scores: &[F], incorrect: &[bool]) -> Result<f64> {
    if scores.len() != incorrect.len() {
        return Err(Error::Config(format!(
            "{} scores but {} labels",
            scores.len(),
            incorrect.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config("scores must be finite".into()));
    }
    let n_pos = incorrect.iter().filter(|&&b| b).count() as u128;
    let n_neg = incorrect.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuroc(format!(
            "need both classes, got {n_pos} incorrect and {n_neg} correct"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));

    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| incorrect[i]).count() as u128;
        let neg = group.len() as u128 - pos;
        twice_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        start = end;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// One AUROC result for an (estimator, threshold) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: Estimator,
    pub rouge_threshold: f64,
    pub auroc: Option<f64>,
    pub n_correct: usize,
    pub n_incorrect: usize,
    pub n_excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn ok(
        estimator: Estimator,
        rouge_threshold: f64,
        auroc: f64,
        n_correct: usize,
        n_incorrect: usize,
        n_excluded: usize,
    ) -> Self {
        Self {
            estimator,
            rouge_threshold,
            auroc: Some(auroc),
            n_correct,
            n_incorrect,
            n_excluded,
            error: None,
        }
    }

    pub fn failed(
        estimator: Estimator,
        rouge_threshold: f64,
        n_correct: usize,
        n_incorrect: usize,
        n_excluded: usize,
        error: String,
    ) -> Self {
        Self {
            estimator,
            rouge_threshold,
            auroc: None,
            n_correct,
            n_incorrect,
            n_excluded,
            error: Some(error),
        }
    }
}

/// Validation AUROC for each threshold on the grid and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub grid: Vec<f64>,
    pub auroc: Vec<f64>,
    pub chosen: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    pub alpha_search: Option<AlphaSearch>,
}

impl EvalReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn row(&self, estimator: Estimator, threshold: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.rouge_threshold == threshold)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub view: ViewOptions,
}

/// Views and ROUGE-L scores computed once per sample, reused across
/// estimators and thresholds.
struct Prepared {
    views: Vec<SortedProbView<f64>>,
    /// Best ROUGE-L F1 of the top-1 answer, or the labeling error.
    rouge: Vec<std::result::Result<f64, String>>,
}

impl Prepared {
    fn new(dataset: &[Sample], opts: &EvalOptions) -> Self {
        let (views, rouge) = dataset
            .par_iter()
            .map(|s| {
                let view = SortedProbView::from_sample_with(s, opts.view);
                let label = label_sample(s, 0.0, &view)
                    .map(|l| l.rouge_l_f1)
                    .map_err(|e| {
                        log::warn!("{e}");
                        e.to_string()
                    });
                (view, label)
            })
            .unzip();
        Self { views, rouge }
    }

    fn scores(&self, dataset: &[Sample], estimator: Estimator) -> Result<Vec<f64>> {
        dataset
            .par_iter()
            .zip(&self.views)
            .map(|(s, v)| score_sample(s, v, estimator).map(|u| u.value))
            .collect()
    }

    fn row(&self, estimator: Estimator, threshold: f64, scores: &[f64]) -> ReportRow {
        let mut kept = Vec::new();
        let mut incorrect = Vec::new();
        for (score, rouge) in scores.iter().zip(&self.rouge) {
            if let Ok(f1) = rouge {
                kept.push(*score);
                incorrect.push(*f1 <= threshold);
            }
        }
        let n_incorrect = incorrect.iter().filter(|&&b| b).count();
        let n_correct = incorrect.len() - n_incorrect;
        let n_excluded = scores.len() - kept.len();
        match auroc(&kept, &incorrect) {
            Ok(a) => ReportRow::ok(estimator, threshold, a, n_correct, n_incorrect, n_excluded),
            Err(e) => ReportRow::failed(
                estimator,
                threshold,
                n_correct,
                n_incorrect,
                n_excluded,
                e.to_string(),
            ),
        }
    }

    fn excluded_ids(&self, dataset: &[Sample]) -> Vec<String> {
        dataset
            .iter()
            .zip(&self.rouge)
            .filter(|(_, r)| r.is_err())
            .map(|(s, _)| s.id.clone())
            .collect()
    }
}

fn check_inputs(dataset: &[Sample], estimators: &[Estimator], thresholds: &[f64]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
        return Err(Error::Config(format!("invalid ROUGE threshold {t}")));
    }
    estimators.iter().try_for_each(Estimator::validate)
}

/// Labels every sample at `rouge_threshold`, scores it with each estimator
/// and reports one AUROC row per estimator. Rows whose AUROC is undefined
/// carry the error instead of a value.
pub fn evaluate(dataset: &[Sample], estimators: &[Estimator], rouge_threshold: f64) -> Result<EvalReport> {
    sweep_with(dataset, estimators, &[rouge_threshold], &EvalOptions::default())
}

/// [`evaluate`] at several thresholds; rows are estimator-major.
pub fn sweep(dataset: &[Sample], estimators: &[Estimator], thresholds: &[f64]) -> Result<EvalReport> {
    sweep_with(dataset, estimators, thresholds, &EvalOptions::default())
}

pub fn sweep_with(
    dataset: &[Sample],
    estimators: &[Estimator],
    thresholds: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_inputs(dataset, estimators, thresholds)?;
    let prepared = Prepared::new(dataset, opts);
    let mut report = EvalReport::default();
    for &est in estimators {
        let scores = prepared.scores(dataset, est)?;
        for &t in thresholds {
            report.rows.push(prepared.row(est, t, &scores));
        }
    }
    let excluded = prepared.excluded_ids(dataset);
    if !excluded.is_empty() {
        report.metadata.insert("excluded".into(), excluded.join(","));
    }
    Ok(report)
}

/// Picks the PRO threshold with the highest validation AUROC, breaking ties
/// toward the smallest threshold.
pub fn grid_search_alpha(validation: &[Sample], grid: &[f64], rouge_threshold: f64) -> Result<AlphaSearch> {
    grid_search_alpha_with(validation, grid, rouge_threshold, &EvalOptions::default())
}

pub fn grid_search_alpha_with(
    validation: &[Sample],
    grid: &[f64],
    rouge_threshold: f64,
    opts: &EvalOptions,
) -> Result<AlphaSearch> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let estimators: Vec<Estimator> = grid.iter().map(|&a| Estimator::ProAdaptive(a)).collect();
    let report = sweep_with(validation, &estimators, &[rouge_threshold], opts)?;
    let mut aurocs = Vec::with_capacity(grid.len());
    for row in &report.rows {
        match row.auroc {
            Some(a) => aurocs.push(a),
            None => {
                return Err(Error::UndefinedAuroc(format!(
                    "validation set has {} correct and {} incorrect samples; use a larger validation split",
                    row.n_correct, row.n_incorrect
                )))
            }
        }
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let better = aurocs[i] > aurocs[best];
        let tie_smaller = aurocs[i] == aurocs[best] && grid[i] < grid[best];
        if better || tie_smaller {
            best = i;
        }
    }
    Ok(AlphaSearch {
        grid: grid.to_vec(),
        auroc: aurocs,
        chosen: grid[best],
    })
}
