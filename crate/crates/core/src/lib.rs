//! Training-free uncertainty scores for LLM answers computed from token
//! log-probabilities alone, plus the tooling to evaluate them: ROUGE-L
//! correctness labels, AUROC, threshold sweeps and a grid search for the
//! adaptive PRO threshold.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod fetch;
pub mod likelihood;
pub mod records;
pub mod rouge;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::Estimator;
pub use eval::{AlphaSearch, EvalReport, ReportRow};
pub use records::{GenerationRecord, Sample, ViewOptions};
pub use scalar::Scalar;

pub type ProbView = records::SortedProbView<f64>;
pub type ProbView32 = records::SortedProbView<f32>;
pub type Likelihood = likelihood::SequenceLikelihood<f64>;
pub type Score = estimators::Score<f64>;
pub type UncertaintyScore = estimators::UncertaintyScore<f64>;
pub type CategoricalDist = synth::CategoricalDist<f64>;
