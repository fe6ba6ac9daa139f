//! Uncertainty estimators over a sample's sorted sequence probabilities.
//!
//! Every estimator is oriented so that a higher value means more uncertain.
//! Probabilities are used as sampled, without renormalizing the view.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{avg_token_logprob, convert_logprobs};
use crate::records::{Sample, SortedProbView};
use crate::scalar::Scalar;

/// Threshold used for `pro-adaptive` when no value is given.
pub const DEFAULT_ALPHA: f64 = 0.4;

/// An estimator and its hyperparameter. Ids are stable strings used on the
/// command line and in reports: `pe`, `pe-mc`, `ne`, `all`, `nll`,
/// `pro-k<INT>`, `pro-a<FLOAT>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimator {
    /// Plug-in predictive entropy `-sum p ln p` over the sampled set.
    PePlugin,
    /// Monte Carlo predictive entropy `-(1/N) sum ln p`.
    PeMc,
    /// Length-normalized predictive entropy.
    Ne,
    /// Negated average token log-likelihood of the top-1 generation.
    All,
    /// Negative log-likelihood of the top-1 generation.
    Nll,
    ProFixedK(usize),
    ProAdaptive(f64),
}

impl Estimator {
    /// Parses an id, resolving `pro-adaptive`/`pro-a` and `pro-k` without a
    /// value to the supplied defaults.
    pub fn parse_with_defaults(s: &str, alpha: f64, k: Option<usize>) -> Result<Self> {
        let s = s.trim();
        let est = match s {
            "pe" => Self::PePlugin,
            "pe-mc" => Self::PeMc,
            "ne" => Self::Ne,
            "all" => Self::All,
            "nll" => Self::Nll,
            "pro-adaptive" | "pro-a" => Self::ProAdaptive(alpha),
            "pro-k" => Self::ProFixedK(
                k.ok_or_else(|| Error::Config("`pro-k` needs a value, e.g. pro-k3".into()))?,
            ),
            _ => {
                if let Some(v) = s.strip_prefix("pro-k") {
                    Self::ProFixedK(v.parse().map_err(|_| unknown(s))?)
                } else if let Some(v) = s.strip_prefix("pro-a") {
                    Self::ProAdaptive(v.parse().map_err(|_| unknown(s))?)
                } else {
                    return Err(unknown(s));
                }
            }
        };
        est.validate()?;
        Ok(est)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ProFixedK(0) => Err(Error::Config("pro-k requires K >= 1".into())),
            Self::ProAdaptive(a) => check_alpha(a),
            _ => Ok(()),
        }
    }
}

fn unknown(s: &str) -> Error {
    Error::Config(format!("unknown estimator id `{s}`"))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha {alpha} is outside [0, 1]")))
    }
}

/// Parses a comma-separated estimator list.
pub fn parse_estimator_list(list: &str, alpha: f64, k: Option<usize>) -> Result<Vec<Estimator>> {
    let ests = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Estimator::parse_with_defaults(s, alpha, k))
        .collect::<Result<Vec<_>>>()?;
    if ests.is_empty() {
        return Err(Error::Config("no estimators given".into()));
    }
    Ok(ests)
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PePlugin => f.write_str("pe"),
            Self::PeMc => f.write_str("pe-mc"),
            Self::Ne => f.write_str("ne"),
            Self::All => f.write_str("all"),
            Self::Nll => f.write_str("nll"),
            Self::ProFixedK(k) => write!(f, "pro-k{k}"),
            Self::ProAdaptive(a) => write!(f, "pro-a{a}"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_defaults(s, DEFAULT_ALPHA, None)
    }
}

impl From<Estimator> for String {
    fn from(e: Estimator) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Estimator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Raw estimator output before it is attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score<F = f64> {
    pub value: F,
    /// Number of sorted probabilities retained (PRO variants only).
    pub selected_k: Option<usize>,
}

impl<F> Score<F> {
    fn plain(value: F) -> Self {
        Self {
            value,
            selected_k: None,
        }
    }
}

/// One estimator's score for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore<F = f64> {
    pub sample_id: String,
    pub estimator: Estimator,
    pub value: F,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_k: Option<usize>,
}

/// Number of leading probabilities `>= alpha`, never less than one.
pub fn select_top_k<F: Scalar>(view: &SortedProbView<F>, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    if view.is_empty() {
        return Err(Error::Config("empty probability view".into()));
    }
    let threshold = F::lit(alpha);
    let k = view.probs().iter().take_while(|&&p| p >= threshold).count();
    Ok(k.max(1))
}

/// PRO score over the top `k` probabilities:
/// `-ln p_k - sum_{i<=k} p_i ln(p_i / p_k)`.
///
/// On an exact distribution this never exceeds the entropy, with equality
/// when `k` covers the full support.
pub fn pro_score<F: Scalar>(view: &SortedProbView<F>, k: usize) -> Result<Score<F>> {
    if k == 0 || k > view.len() {
        return Err(Error::Config(format!(
            "K = {k} is outside [1, {}]",
            view.len()
        )));
    }
    let head = &view.probs()[..k];
    let pk = head[k - 1];
    let spread: F = head.iter().map(|&p| p * (p / pk).ln()).sum();
    Ok(Score {
        value: -pk.ln() - spread,
        selected_k: Some(k),
    })
}

/// PRO with `K > N` clamped to `N`.
pub fn pro_fixed_k<F: Scalar>(view: &SortedProbView<F>, k: usize) -> Result<Score<F>> {
    let n = view.len();
    if k > n {
        log::warn!("K = {k} exceeds the {n} available generations; using K = {n}");
    }
    pro_score(view, k.min(n))
}

/// PRO with `K` chosen per sample by the probability threshold `alpha`.
pub fn pro_adaptive<F: Scalar>(view: &SortedProbView<F>, alpha: f64) -> Result<Score<F>> {
    pro_score(view, select_top_k(view, alpha)?)
}

pub fn pe_plugin<F: Scalar>(view: &SortedProbView<F>) -> Score<F> {
    let h: F = view.probs().iter().map(|&p| -(p * p.ln())).sum();
    Score::plain(h)
}

pub fn pe_mc<F: Scalar>(view: &SortedProbView<F>) -> Score<F> {
    let n = F::from_usize(view.len()).expect("length fits in float");
    let total: F = view.probs().iter().map(|&p| -p.ln()).sum();
    Score::plain(total / n)
}

pub fn ne_score<F: Scalar>(sample: &Sample) -> Score<F> {
    let n = F::from_usize(sample.generations.len().max(1)).expect("length fits in float");
    let total: F = sample
        .generations
        .iter()
        .map(|g| -avg_token_logprob(&convert_logprobs::<F>(&g.token_logprobs)))
        .sum();
    Score::plain(total / n)
}

pub fn all_score<F: Scalar>(view: &SortedProbView<F>, sample: &Sample) -> Score<F> {
    let top = &sample.generations[view.origin_index()[0]];
    Score::plain(-avg_token_logprob(&convert_logprobs::<F>(&top.token_logprobs)))
}

pub fn nll_score<F: Scalar>(view: &SortedProbView<F>) -> Score<F> {
    Score::plain(-view.top().ln())
}

/// Scores one sample with the given estimator.
pub fn score_sample<F: Scalar>(
    sample: &Sample,
    view: &SortedProbView<F>,
    estimator: Estimator,
) -> Result<UncertaintyScore<F>> {
    let score = match estimator {
        Estimator::PePlugin => pe_plugin(view),
        Estimator::PeMc => pe_mc(view),
        Estimator::Ne => ne_score(sample),
        Estimator::All => all_score(view, sample),
        Estimator::Nll => nll_score(view),
        Estimator::ProFixedK(k) => pro_fixed_k(view, k)?,
        Estimator::ProAdaptive(alpha) => pro_adaptive(view, alpha)?,
    };
    Ok(UncertaintyScore {
        sample_id: sample.id.clone(),
        estimator,
        value: score.value,
        selected_k: score.selected_k,
    })
}
