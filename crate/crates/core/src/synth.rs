//! Synthetic categorical answer distributions and datasets built from them.
//!
//! All randomness comes from ChaCha8 streams keyed by `(seed, index)`, so
//! every distribution and sample is reproducible on its own and generation
//! can run in parallel without changing the output.

use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::pro_score;
use crate::records::{GenerationRecord, Sample, SortedProbView};
use crate::scalar::Scalar;

/// Name of the generator, recorded in report metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), stream per (seed, index)";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Flat Dirichlet draw (normalized exponential variates).
    DirichletLike,
    /// Power law `i^-s` with a random exponent.
    ZipfLike,
    /// One dominant outcome, remaining mass spread evenly.
    Spiked,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::DirichletLike, Family::ZipfLike, Family::Spiked];
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet-like" | "dirichlet" => Ok(Self::DirichletLike),
            "zipf-like" | "zipf" => Ok(Self::ZipfLike),
            "spiked" => Ok(Self::Spiked),
            other => Err(Error::Config(format!("unknown distribution family `{other}`"))),
        }
    }
}

/// A normalized categorical distribution with the RNG coordinates that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist<F = f64> {
    probs: Vec<F>,
    pub seed: u64,
    pub stream: u64,
}

impl<F: Scalar> CategoricalDist<F> {
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("distribution support is empty".into()));
        }
        if probs.iter().any(|p| !(*p > F::zero() && *p <= F::one())) {
            return Err(Error::Config("probabilities must lie in (0, 1]".into()));
        }
        let total: F = probs.iter().copied().sum();
        let n = F::from_usize(probs.len()).expect("fits");
        let tol = F::lit(1e-12).max(F::epsilon() * n * F::lit(8.0));
        if (total - F::one()).abs() > tol {
            return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            probs,
            seed: 0,
            stream: 0,
        })
    }

    /// Mass `p` on the first outcome and `(1 - p) / (support - 1)` on each other.
    pub fn spiked(p: F, support: usize) -> Result<Self> {
        if support == 0 {
            return Err(Error::Config("support size must be at least 1".into()));
        }
        if support == 1 {
            return Self::new(vec![F::one()]);
        }
        let rest = (F::one() - p) / F::from_usize(support - 1).expect("fits");
        let mut probs = vec![p];
        probs.extend(std::iter::repeat_n(rest, support - 1));
        Self::new(probs)
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn view(&self) -> SortedProbView<F> {
        SortedProbView::from_probs(self.probs.clone()).expect("validated on construction")
    }
}

/// `-sum q ln q` over the full support.
pub fn exact_entropy<F: Scalar>(dist: &CategoricalDist<F>) -> F {
    dist.probs.iter().map(|&q| -(q * q.ln())).sum()
}

fn check_support(support: &RangeInclusive<usize>) -> Result<()> {
    if *support.start() < 1 || support.start() > support.end() {
        return Err(Error::Config(format!(
            "invalid support range {}..={}",
            support.start(),
            support.end()
        )));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, support: &RangeInclusive<usize>, family: Family) -> Vec<f64> {
    let m = rng.random_range(support.clone());
    let raw: Vec<f64> = match family {
        Family::DirichletLike => (0..m)
            .map(|_| rng.sample::<f64, _>(Exp1).max(1e-300))
            .collect(),
        Family::ZipfLike => {
            let s: f64 = rng.random_range(0.3..2.5);
            (1..=m).map(|i| (i as f64).powf(-s)).collect()
        }
        Family::Spiked => {
            if m == 1 {
                vec![1.0]
            } else {
                let p: f64 = rng.random_range(0.2..0.99);
                let rest = (1.0 - p) / (m - 1) as f64;
                std::iter::once(p).chain(std::iter::repeat_n(rest, m - 1)).collect()
            }
        }
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// `count` distributions with support drawn uniformly from `support`.
/// Distribution `i` uses stream `2 * i` of `seed`.
pub fn gen_distributions(
    count: usize,
    support: RangeInclusive<usize>,
    family: Family,
    seed: u64,
) -> Result<Vec<CategoricalDist>> {
    check_support(&support)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let stream = 2 * i;
            let mut rng = stream_rng(seed, stream);
            let mut dist = CategoricalDist::new(draw(&mut rng, &support, family))?;
            dist.seed = seed;
            dist.stream = stream;
            Ok(dist)
        })
        .collect()
}

/// Low-probability generations appended to each sample, with the head's
/// total mass scaled down at random. Models sampled sets that carry a noisy
/// tail and do not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TailNoise {
    pub max_extra: usize,
    pub logprob_range: (f64, f64),
    pub head_mass_range: (f64, f64),
}

impl Default for TailNoise {
    fn default() -> Self {
        Self {
            max_extra: 4,
            logprob_range: (-30.0, -10.0),
            head_mass_range: (0.95, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub family: Family,
    pub support: RangeInclusive<usize>,
    /// Chance that a low-entropy sample is answered correctly; high-entropy
    /// samples are correct with the complementary chance.
    pub correct_bias: f64,
    pub seed: u64,
    pub tail: Option<TailNoise>,
}

impl SynthConfig {
    pub fn new(n_samples: usize, family: Family, correct_bias: f64, seed: u64) -> Self {
        Self {
            n_samples,
            family,
            support: 2..=10,
            correct_bias,
            seed,
            tail: None,
        }
    }

    /// Small supports (2..=6) plus the default [`TailNoise`]. Including the
    /// tail (alpha = 0) or keeping only the top-1 answer both lose to a small
    /// positive threshold on data built this way.
    pub fn with_noisy_tail(mut self) -> Self {
        self.support = 2..=6;
        self.tail = Some(TailNoise::default());
        self
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds a dataset whose correctness is planted from each sample's exact
/// entropy: samples below the median entropy are correct with probability
/// `correct_bias`, the rest with `1 - correct_bias`.
///
/// Each outcome becomes one single-token generation carrying its full log
/// probability. A correct sample's reference is its top-1 text; an
/// incorrect one gets a reference sharing no tokens with any generation.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&cfg.correct_bias) {
        return Err(Error::Config(format!(
            "correct_bias {} is outside [0, 1]",
            cfg.correct_bias
        )));
    }
    if let Some(tail) = &cfg.tail {
        let (lo, hi) = tail.head_mass_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) || tail.logprob_range.0 > tail.logprob_range.1 {
            return Err(Error::Config("invalid tail noise ranges".into()));
        }
    }
    let dists = gen_distributions(cfg.n_samples, cfg.support.clone(), cfg.family, cfg.seed)?;
    let entropies: Vec<f64> = dists.iter().map(exact_entropy).collect();
    let cut = if entropies.is_empty() { 0.0 } else { median(&entropies) };

    dists
        .par_iter()
        .zip(&entropies)
        .enumerate()
        .map(|(i, (dist, &h))| {
            let mut rng = stream_rng(cfg.seed, 2 * i as u64 + 1);
            let p_correct = if h < cut { cfg.correct_bias } else { 1.0 - cfg.correct_bias };
            let correct = rng.random::<f64>() < p_correct;

            let head_scale = match &cfg.tail {
                Some(t) if t.head_mass_range.0 < t.head_mass_range.1 => {
                    rng.random_range(t.head_mass_range.0..=t.head_mass_range.1)
                }
                Some(t) => t.head_mass_range.0,
                None => 1.0,
            };
            let mut generations: Vec<GenerationRecord> = dist
                .probs()
                .iter()
                .enumerate()
                .map(|(j, &q)| GenerationRecord::new(format!("s{i}a{j}"), vec![(q * head_scale).ln()]))
                .collect();
            if let Some(t) = &cfg.tail {
                let extra = rng.random_range(0..=t.max_extra);
                let (lo, hi) = t.logprob_range;
                for j in 0..extra {
                    let lp = if lo < hi { rng.random_range(lo..hi) } else { lo };
                    generations.push(GenerationRecord::new(format!("s{i}t{j}"), vec![lp]));
                }
            }

            let mut sample = Sample {
                id: format!("synth-{i:06}"),
                question: format!("synthetic question {i}"),
                references: vec![format!("s{i}ref")],
                generations,
            };
            if correct {
                let view = SortedProbView::<f64>::from_sample(&sample);
                sample.references = vec![sample.generations[view.origin_index()[0]].text.clone()];
            }
            Ok(sample)
        })
        .collect()
}

/// Worst-case results of checking the PRO lower bound against exact entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub n_dists: usize,
    pub n_checks: usize,
    /// Largest `pro_score - entropy` over all `K` below full support, floored at 0.
    pub max_violation: f64,
    /// Largest `|pro_score - entropy|` at `K = support`.
    pub max_equality_error: f64,
    /// Largest deviation of the `K = 1` gap from `H + ln q_1`.
    pub max_gap_error: f64,
}

impl BoundCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation <= tol && self.max_equality_error <= tol && self.max_gap_error <= tol
    }
}

/// Checks `pro_score(q, K) <= H(q)` for every `K` and equality at full
/// support over distributions from all three families (support 2..=20).
pub fn bound_check(n_dists: usize, seed: u64) -> Result<BoundCheck> {
    let per_family = n_dists.div_ceil(Family::ALL.len());
    let mut dists = Vec::with_capacity(per_family * 3);
    for (f, family) in Family::ALL.into_iter().enumerate() {
        dists.extend(gen_distributions(per_family, 2..=20, family, seed.wrapping_add(f as u64))?);
    }
    let per_dist: Vec<(usize, f64, f64, f64)> = dists
        .par_iter()
        .map(|d| {
            let h = exact_entropy(d);
            let view = d.view();
            let m = d.support();
            let mut violation = 0.0f64;
            let mut equality = 0.0f64;
            for k in 1..=m {
                let pro = pro_score(&view, k)?.value;
                if k < m {
                    violation = violation.max(pro - h);
                } else {
                    equality = (pro - h).abs();
                }
            }
            let pro1 = pro_score(&view, 1)?.value;
            let gap_error = ((h - pro1) - (h + view.top().ln())).abs();
            Ok((m, violation, equality, gap_error))
        })
        .collect::<Result<_>>()?;

    Ok(per_dist.iter().fold(
        BoundCheck {
            n_dists: dists.len(),
            n_checks: 0,
            max_violation: 0.0,
            max_equality_error: 0.0,
            max_gap_error: 0.0,
        },
        |acc, &(m, v, e, g)| BoundCheck {
            n_checks: acc.n_checks + m,
            max_violation: acc.max_violation.max(v),
            max_equality_error: acc.max_equality_error.max(e),
            max_gap_error: acc.max_gap_error.max(g),
            ..acc
        },
    ))
}
