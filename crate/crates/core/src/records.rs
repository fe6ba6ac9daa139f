//! Data model and JSONL interchange for generations, samples and reports.
//!
//! A dataset file holds one [`Sample`] per line:
//!
//! ```json
//! {"id": "q1", "question": "...", "references": ["..."],
//!  "generations": [{"text": "...", "token_logprobs": [-0.1, -0.02]}]}
//! ```
//!
//! Unknown fields are ignored. Log-probabilities are natural logs.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{AlphaSearch, EvalReport, ReportRow};
use crate::likelihood::{convert_logprobs, sequence_nll};
use crate::scalar::Scalar;

/// One sampled response with its per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    /// Upstream sampler order. Informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_hint: Option<i64>,
}

impl GenerationRecord {
    pub fn new(text: impl Into<String>, token_logprobs: Vec<f64>) -> Self {
        Self {
            text: text.into(),
            token_logprobs,
            rank_hint: None,
        }
    }

    /// Empty-after-trim text. Such generations still count for probability
    /// math but are never used as the answer for correctness labeling.
    pub fn is_degenerate(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.token_logprobs.is_empty() {
            return Err("token_logprobs is empty".into());
        }
        for (t, &lp) in self.token_logprobs.iter().enumerate() {
            if !lp.is_finite() {
                return Err(format!("token_logprobs[{t}] is not finite"));
            }
            if lp > 0.0 {
                return Err(format!("token_logprobs[{t}] = {lp} is positive"));
            }
        }
        Ok(())
    }
}

/// A question, its reference answers and the sampled generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
    pub generations: Vec<GenerationRecord>,
}

impl Sample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.references.is_empty() {
            return Err("references is empty".into());
        }
        if self.generations.is_empty() {
            return Err("generations is empty".into());
        }
        for (i, g) in self.generations.iter().enumerate() {
            g.validate().map_err(|e| format!("generations[{i}]: {e}"))?;
        }
        Ok(())
    }
}

/// Options controlling how a [`SortedProbView`] is built from a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ViewOptions {
    /// Collapse generations with identical text, keeping the highest probability.
    pub dedup_text: bool,
}

/// Sequence probabilities of a sample's generations in non-increasing order.
///
/// Ties keep the original generation order. Duplicate texts are kept as
/// separate entries unless [`ViewOptions::dedup_text`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedProbView<F = f64> {
    probs: Vec<F>,
    origin_index: Vec<usize>,
}

impl<F: Scalar> SortedProbView<F> {
    pub fn from_sample(sample: &Sample) -> Self {
        Self::from_sample_with(sample, ViewOptions::default())
    }

    pub fn from_sample_with(sample: &Sample, opts: ViewOptions) -> Self {
        let mut probs: Vec<F> = sample
            .generations
            .iter()
            .map(|g| sequence_nll(&convert_logprobs::<F>(&g.token_logprobs)).prob)
            .collect();
        let mut origin: Vec<usize> = (0..probs.len()).collect();

        if opts.dedup_text {
            let mut best: HashMap<&str, usize> = HashMap::new();
            let mut order = Vec::new();
            for (i, g) in sample.generations.iter().enumerate() {
                match best.get_mut(g.text.as_str()) {
                    Some(slot) => {
                        if probs[i] > probs[*slot] {
                            *slot = i;
                        }
                    }
                    None => {
                        best.insert(g.text.as_str(), i);
                        order.push(g.text.as_str());
                    }
                }
            }
            origin = order.iter().map(|t| best[t]).collect();
            probs = origin.iter().map(|&i| probs[i]).collect();
        }

        Self::sorted(probs, origin)
    }

    /// Builds a view from raw probabilities, e.g. an exact categorical
    /// distribution. Every value must lie in `(0, 1]`.
    pub fn from_probs(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("probability view is empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p > F::zero() && **p <= F::one())) {
            return Err(Error::Config(format!(
                "probability {bad} is outside (0, 1]"
            )));
        }
        let origin = (0..probs.len()).collect();
        Ok(Self::sorted(probs, origin))
    }

    fn sorted(probs: Vec<F>, origin: Vec<usize>) -> Self {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        // stable: equal probabilities keep generation order
        order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .expect("probabilities are finite")
        });
        Self {
            probs: order.iter().map(|&i| probs[i]).collect(),
            origin_index: order.iter().map(|&i| origin[i]).collect(),
        }
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    /// Maps sorted position to the index in `Sample::generations`.
    pub fn origin_index(&self) -> &[usize] {
        &self.origin_index
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Highest sequence probability.
    pub fn top(&self) -> F {
        self.probs[0]
    }
}

/// Reads a JSONL dataset, validating every sample. Blank lines are skipped.
pub fn read_dataset(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        if limit.is_some_and(|n| samples.len() >= n) {
            break;
        }
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            source,
        })?;
        let invalid = |reason: String| Error::Validation {
            path: path.to_owned(),
            line: lineno,
            sample_id: sample.id.clone(),
            reason,
        };
        sample.validate().map_err(invalid)?;
        if !seen.insert(sample.id.clone()) {
            return Err(invalid("duplicate id".into()));
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Serializes items as JSON lines.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::Report(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    write_string(path.as_ref(), &to_jsonl(samples)?)
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    let ctx = || format!("write {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(contents.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(ctx(), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Jsonl,
    Csv,
    #[default]
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" | "markdown-table" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Metadata {
        entries: std::collections::BTreeMap<String, String>,
    },
    Row(ReportRow),
    AlphaSearch(AlphaSearch),
}

const CSV_HEADER: [&str; 7] = [
    "estimator",
    "rouge_threshold",
    "auroc",
    "n_correct",
    "n_incorrect",
    "n_excluded",
    "error",
];

/// Renders a report. Output depends only on the report contents.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Jsonl => {
            let mut lines = Vec::new();
            if !report.metadata.is_empty() {
                lines.push(ReportLine::Metadata {
                    entries: report.metadata.clone(),
                });
            }
            lines.extend(report.rows.iter().cloned().map(ReportLine::Row));
            if let Some(search) = &report.alpha_search {
                lines.push(ReportLine::AlphaSearch(search.clone()));
            }
            to_jsonl(&lines)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| Error::Report(e.to_string());
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for row in &report.rows {
                w.write_record([
                    row.estimator.to_string(),
                    row.rouge_threshold.to_string(),
                    row.auroc.map(|a| a.to_string()).unwrap_or_default(),
                    row.n_correct.to_string(),
                    row.n_incorrect.to_string(),
                    row.n_excluded.to_string(),
                    row.error.clone().unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
        }
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    for (k, v) in &report.metadata {
        out.push_str(&format!("<!-- {k}: {v} -->\n"));
    }
    out.push_str("| estimator | rouge_threshold | auroc | n_correct | n_incorrect | n_excluded |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in &report.rows {
        let auroc = match (&row.auroc, &row.error) {
            (Some(a), _) => format!("{a:.4}"),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "-".into(),
        };
        out.push_str(&format!(
            "| {} | {:.4} | {} | {} | {} | {} |\n",
            row.estimator, row.rouge_threshold, auroc, row.n_correct, row.n_incorrect, row.n_excluded
        ));
    }
    if let Some(search) = &report.alpha_search {
        out.push_str("\n| alpha | validation_auroc |\n|---|---|\n");
        for (alpha, auroc) in search.grid.iter().zip(&search.auroc) {
            out.push_str(&format!("| {alpha:.4} | {auroc:.4} |\n"));
        }
        out.push_str(&format!("\nchosen alpha: {:.4}\n", search.chosen));
    }
    out
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    write_string(path.as_ref(), &render_report(report, format)?)
}

/// Reads a report previously written with [`ReportFormat::Jsonl`].
pub fn read_report_jsonl(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut report = EvalReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line).map_err(|source| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            source,
        })?;
        match parsed {
            ReportLine::Metadata { entries } => report.metadata.extend(entries),
            ReportLine::Row(row) => report.rows.push(row),
            ReportLine::AlphaSearch(s) => report.alpha_search = Some(s),
        }
    }
    Ok(report)
}
