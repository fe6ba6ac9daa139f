//! `pro-uq` command line.
//!
//! Exit codes: 0 success, 1 invalid flags or input, 2 runtime or evaluation
//! failure (including any report row whose AUROC is undefined).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{parse_estimator_list, score_sample, Estimator, UncertaintyScore, DEFAULT_ALPHA};
use crate::eval::{grid_search_alpha_with, parse_grid, sweep_with, EvalOptions, EvalReport};
use crate::fetch::{ApiKey, FetchClient, FetchConfig, Question, DEFAULT_API_KEY_ENV};
use crate::records::{read_dataset, render_report, to_jsonl, ReportFormat, Sample, SortedProbView, ViewOptions};
use crate::rouge::{label_sample, DEFAULT_THRESHOLD};
use crate::synth::{bound_check, gen_dataset, Family, SynthConfig, TailNoise, RNG_ALGORITHM};

const DEFAULT_ESTIMATORS: &str = "pe,pe-mc,ne,all,nll,pro-adaptive";

#[derive(Debug, Parser)]
#[command(name = "pro-uq", version, about = "Probability-only uncertainty scores for LLM answers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample answers with token logprobs from an OpenAI-compatible endpoint.
    Fetch(FetchArgs),
    /// Label each sample's top-1 answer by ROUGE-L F1.
    Label(LabelArgs),
    /// Write one uncertainty score per sample and estimator.
    Score(ScoreArgs),
    /// AUROC of each estimator at one correctness threshold.
    Evaluate(EvalArgs),
    /// AUROC over several correctness thresholds.
    Sweep(SweepArgs),
    /// Choose the PRO probability threshold on a validation file.
    GridSearch(GridArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Check the PRO entropy lower bound on random distributions.
    BoundCheck(BoundArgs),
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    /// Comma-separated ids: pe, pe-mc, ne, all, nll, pro-k<INT>, pro-a<FLOAT>, pro-adaptive.
    #[arg(long, default_value = DEFAULT_ESTIMATORS)]
    pub estimators: String,
    /// Threshold used by `pro-adaptive` without a value.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// K used by `pro-k` without a value.
    #[arg(long)]
    pub k: Option<usize>,
}

impl EstimatorArgs {
    fn parse(&self) -> Result<Vec<Estimator>> {
        parse_estimator_list(&self.estimators, self.alpha, self.k)
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// jsonl, csv or markdown.
    #[arg(long, default_value = "markdown")]
    pub format: String,
    /// Write here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// JSONL with `id`, `question` and `references` per line.
    pub questions: PathBuf,
    #[arg(long)]
    pub base_url: String,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: u32,
    /// Environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    /// Send n single-completion requests instead of one request with n.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Attempts per request.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub rouge_threshold: f64,
    #[arg(long)]
    pub dedup_text: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub estimators: EstimatorArgs,
    #[arg(long)]
    pub dedup_text: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub estimators: EstimatorArgs,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub rouge_threshold: f64,
    #[arg(long)]
    pub dedup_text: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub estimators: EstimatorArgs,
    /// Comma-separated ROUGE-L thresholds or start:end:step.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5")]
    pub thresholds: String,
    #[arg(long)]
    pub dedup_text: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Validation dataset.
    pub validation: PathBuf,
    /// start:end:step or a comma-separated list.
    #[arg(long, default_value = "0:0.95:0.05")]
    pub grid: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub rouge_threshold: f64,
    /// Evaluate the chosen threshold (and nll) on this test file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub dedup_text: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// spiked, zipf-like or dirichlet-like.
    #[arg(long, default_value = "spiked")]
    pub family: String,
    #[arg(long, default_value_t = 0.95)]
    pub correct_bias: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_support: usize,
    #[arg(long, default_value_t = 10)]
    pub max_support: usize,
    /// Append low-probability tail generations and scale down head mass.
    #[arg(long)]
    pub tail_noise: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 1000)]
    pub dists: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn check_threshold(t: f64) -> Result<f64> {
    if t.is_finite() && (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(Error::Config(format!("ROUGE threshold {t} is outside [0, 1]")))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} not found", path.display())))
    }
}

fn load(path: &Path) -> Result<Vec<Sample>> {
    require_file(path)?;
    read_dataset(path, None)
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(path) => crate::records::write_string(path, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("write stdout", e))
        }
    }
}

fn emit_report(report: &EvalReport, out: &OutputArgs, format: ReportFormat) -> Result<i32> {
    emit(out.output.as_deref(), &render_report(report, format)?)?;
    Ok(if report.has_errors() { 2 } else { 0 })
}

fn view_opts(dedup_text: bool) -> EvalOptions {
    EvalOptions {
        view: ViewOptions { dedup_text },
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Fetch(a) => {
            let mut config = FetchConfig::new(a.base_url, a.model);
            config.n = a.n;
            config.temperature = a.temperature;
            config.max_tokens = a.max_tokens;
            config.sequential = a.sequential;
            config.parallelism = a.parallelism;
            config.retry.max_attempts = a.retries;
            config.timeout = Duration::from_secs(a.timeout_secs);
            config.api_key = ApiKey::from_env(&a.api_key_env);
            config.validate()?;
            if config.api_key.is_none() {
                log::warn!("{} is not set; sending requests without a key", a.api_key_env);
            }
            require_file(&a.questions)?;
            let questions = read_questions(&a.questions)?;
            let samples = FetchClient::new(config)?.fetch_all(&questions)?;
            emit(a.output.as_deref(), &to_jsonl(&samples)?)?;
            Ok(0)
        }
        Command::Label(a) => {
            let threshold = check_threshold(a.rouge_threshold)?;
            let data = load(&a.data)?;
            let opts = ViewOptions { dedup_text: a.dedup_text };
            let labels: Vec<_> = data
                .par_iter()
                .filter_map(|s| {
                    let view = SortedProbView::<f64>::from_sample_with(s, opts);
                    label_sample(s, threshold, &view)
                        .map_err(|e| log::warn!("excluded: {e}"))
                        .ok()
                })
                .collect();
            emit(a.output.as_deref(), &to_jsonl(&labels)?)?;
            Ok(0)
        }
        Command::Score(a) => {
            let estimators = a.estimators.parse()?;
            let data = load(&a.data)?;
            let opts = ViewOptions { dedup_text: a.dedup_text };
            let scores: Vec<Vec<UncertaintyScore>> = data
                .par_iter()
                .map(|s| {
                    let view = SortedProbView::from_sample_with(s, opts);
                    estimators.iter().map(|&e| score_sample(s, &view, e)).collect()
                })
                .collect::<Result<_>>()?;
            let flat: Vec<UncertaintyScore> = scores.into_iter().flatten().collect();
            emit(a.output.as_deref(), &to_jsonl(&flat)?)?;
            Ok(0)
        }
        Command::Evaluate(a) => {
            let estimators = a.estimators.parse()?;
            let threshold = check_threshold(a.rouge_threshold)?;
            let format: ReportFormat = a.out.format.parse()?;
            let data = load(&a.data)?;
            let report = sweep_with(&data, &estimators, &[threshold], &view_opts(a.dedup_text))?;
            emit_report(&report, &a.out, format)
        }
        Command::Sweep(a) => {
            let estimators = a.estimators.parse()?;
            let thresholds = parse_grid(&a.thresholds)?;
            let format: ReportFormat = a.out.format.parse()?;
            let data = load(&a.data)?;
            let report = sweep_with(&data, &estimators, &thresholds, &view_opts(a.dedup_text))?;
            emit_report(&report, &a.out, format)
        }
        Command::GridSearch(a) => {
            let grid = parse_grid(&a.grid)?;
            let threshold = check_threshold(a.rouge_threshold)?;
            let format: ReportFormat = a.out.format.parse()?;
            if let Some(test) = &a.test {
                require_file(test)?;
            }
            let opts = view_opts(a.dedup_text);
            let validation = load(&a.validation)?;
            let search = grid_search_alpha_with(&validation, &grid, threshold, &opts)?;
            eprintln!("chosen alpha {}", search.chosen);
            let mut report = match &a.test {
                Some(test) => {
                    let test = read_dataset(test, None)?;
                    let ests = [Estimator::ProAdaptive(search.chosen), Estimator::Nll];
                    sweep_with(&test, &ests, &[threshold], &opts)?
                }
                None => EvalReport::default(),
            };
            report.alpha_search = Some(search);
            emit_report(&report, &a.out, format)
        }
        Command::Synth(a) => {
            let family: Family = a.family.parse()?;
            let mut cfg = SynthConfig::new(a.n, family, a.correct_bias, a.seed);
            cfg.support = a.min_support..=a.max_support;
            if a.tail_noise {
                cfg.tail = Some(TailNoise::default());
            }
            let data = gen_dataset(&cfg)?;
            emit(a.output.as_deref(), &to_jsonl(&data)?)?;
            eprintln!("generated {} samples (seed {}, rng {RNG_ALGORITHM})", data.len(), a.seed);
            Ok(0)
        }
        Command::BoundCheck(a) => {
            if a.dists == 0 {
                return Err(Error::Config("--dists must be at least 1".into()));
            }
            let r = bound_check(a.dists, a.seed)?;
            println!("distributions {} (rng {RNG_ALGORITHM}), checks {}", r.n_dists, r.n_checks);
            println!("max violation {:.1e}", r.max_violation);
            println!("max full-support error {:.1e}", r.max_equality_error);
            Ok(if r.passed(a.tolerance) { 0 } else { 2 })
        }
    }
}

fn read_questions(path: &Path) -> Result<Vec<Question>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
