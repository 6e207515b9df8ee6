//! Optimal multi-agent prioritization weights.
//!
//! A transition's weight is the product of three terms:
//!
//! ```text
//! w ∝ |Q_k − y| · exp(−|Q_k − Q*|) · f(π)
//! f(π) = 1 + Σ_i Π_{j≠i} π_j − n · Π_i π_i
//! ```
//!
//! where `y` is the fixed Bellman target, `Q*` an estimate of the optimal
//! joint value and `π_i` the probability each agent assigned to the action it
//! took. `f` peaks at 2 when exactly one agent's probability is 0 and the rest
//! are 1.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum PrioritizationError {
    #[error("action probability {value} for agent {agent} is outside [0,1]")]
    ProbabilityOutOfRange { agent: usize, value: f64 },
    #[error("need at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("non-finite weight input")]
    NonFinite,
    #[error("batch weight {index} is negative or non-finite: {value}")]
    InvalidWeight { index: usize, value: f64 },
}

/// Inputs for one transition's weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightInputs<T> {
    /// Current joint value `Q_k(s, u)`.
    pub q_k: T,
    /// Bellman target `y`.
    pub bellman_target: T,
    /// Optimal-value proxy `Q*`.
    pub q_star_estimate: T,
    /// Probability each agent gave its taken action.
    pub action_probs: Vec<T>,
}

/// Joint action probability term `f(π)`.
pub fn f_pi<T: Scalar>(action_probs: &[T]) -> Result<T, PrioritizationError> {
    let n = action_probs.len();
    if n < 2 {
        return Err(PrioritizationError::TooFewAgents(n));
    }
    for (agent, &p) in action_probs.iter().enumerate() {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(PrioritizationError::ProbabilityOutOfRange {
                agent,
                value: p.as_f64(),
            });
        }
    }
    Ok(f_pi_unchecked(action_probs))
}

// Leave-one-out products via prefix/suffix sweeps; no division, so zero
// probabilities are exact.
pub(crate) fn f_pi_unchecked<T: Scalar>(p: &[T]) -> T {
    let n = p.len();
    let mut suffix = T::one();
    let mut suffixes = [T::zero(); 64];
    let mut heap;
    let suf: &mut [T] = if n <= 64 {
        &mut suffixes[..n]
    } else {
        heap = vec![T::zero(); n];
        &mut heap
    };
    for i in (0..n).rev() {
        suf[i] = suffix;
        suffix *= p[i];
    }
    let all = suffix;
    let mut prefix = T::one();
    let mut loo = T::zero();
    for i in 0..n {
        loo += prefix * suf[i];
        prefix *= p[i];
    }
    T::one() + loo - T::from_usize(n).unwrap() * all
}

/// Unnormalized optimal weight of one transition.
pub fn optimal_weight<T: Scalar>(inputs: &WeightInputs<T>) -> Result<T, PrioritizationError> {
    let WeightInputs {
        q_k,
        bellman_target,
        q_star_estimate,
        action_probs,
    } = inputs;
    if !(q_k.is_finite() && bellman_target.is_finite() && q_star_estimate.is_finite()) {
        return Err(PrioritizationError::NonFinite);
    }
    let f = f_pi(action_probs)?;
    let bellman = (*q_k - *bellman_target).abs();
    let enhancement = (-(*q_k - *q_star_estimate).abs()).exp();
    Ok(bellman * enhancement * f)
}

/// Rescale a batch of weights to mean 1. An all-zero batch becomes all ones.
pub fn normalize_batch<T: Scalar>(weights: &[T]) -> Result<Vec<T>, PrioritizationError> {
    let mut out = weights.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn normalize_in_place<T: Scalar>(weights: &mut [T]) -> Result<(), PrioritizationError> {
    for (index, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w >= T::zero()) {
            return Err(PrioritizationError::InvalidWeight {
                index,
                value: w.as_f64(),
            });
        }
    }
    if weights.is_empty() {
        return Ok(());
    }
    let sum: T = weights.iter().copied().sum();
    if sum == T::zero() {
        log::info!("degenerate batch: all {} weights are zero, using uniform weights", weights.len());
        weights.iter_mut().for_each(|w| *w = T::one());
        return Ok(());
    }
    let scale = T::from_usize(weights.len()).unwrap() / sum;
    weights.iter_mut().for_each(|w| *w *= scale);
    Ok(())
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action<T: Scalar>(q_values: &[T]) -> usize {
    let mut best = 0;
    for (i, &q) in q_values.iter().enumerate().skip(1) {
        if q > q_values[best] {
            best = i;
        }
    }
    best
}

/// Probability of `chosen` under the ε-greedy policy induced by `q_values`.
pub fn policy_prob<T: Scalar>(q_values: &[T], chosen: usize, epsilon: T) -> T {
    let n = T::from_usize(q_values.len()).unwrap();
    let greedy = if greedy_action(q_values) == chosen {
        T::one() - epsilon
    } else {
        T::zero()
    };
    epsilon / n + greedy
}
