//! Sequence-level likelihood from per-token log-probabilities.

use crate::scalar::Scalar;

/// Negative log-likelihood (nats), probability and length of one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceLikelihood<F = f64> {
    pub nll: F,
    pub prob: F,
    pub length: usize,
}

/// Sums token log-probabilities before exponentiating so long sequences do
/// not underflow. The probability is floored at [`Scalar::prob_floor`].
pub fn sequence_nll<F: Scalar>(token_logprobs: &[F]) -> SequenceLikelihood<F> {
    let total: F = token_logprobs.iter().copied().sum();
    let nll = -total;
    // -0.0 when every token has logprob 0
    let nll = if nll == F::zero() { F::zero() } else { nll };
    SequenceLikelihood {
        nll,
        prob: (-nll).exp().max(F::prob_floor()),
        length: token_logprobs.len(),
    }
}

/// Mean token log-probability, `(1/T) * sum(logprobs)`. Returns zero for an
/// empty slice.
pub fn avg_token_logprob<F: Scalar>(token_logprobs: &[F]) -> F {
    if token_logprobs.is_empty() {
        return F::zero();
    }
    let total: F = token_logprobs.iter().copied().sum();
    total / F::from_usize(token_logprobs.len()).expect("length fits in float")
}

/// Converts stored `f64` log-probabilities into the working scalar type.
pub(crate) fn convert_logprobs<F: Scalar>(token_logprobs: &[f64]) -> Vec<F> {
    token_logprobs.iter().map(|&lp| F::lit(lp)).collect()
}
