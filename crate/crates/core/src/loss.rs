//! Pairwise Bradley-Terry loss over one question's candidate energies.
//!
//! For positives `P` and negatives `N` the loss is the mean over all
//! `P x N` pairs of `softplus(E(p) - E(n))`, with gradients
//! `dL/dE(p) = mean_n sigmoid(E(p) - E(n)) / |P|` and the negated sum for
//! negatives. A group without positives or without negatives has no pairs and
//! is reported as skipped.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};
use crate::real::Real;

/// Outcome of [`bt_loss`] on one group.
#[derive(Clone, Debug, PartialEq)]
pub enum LossResult<T> {
    /// Degenerate group: no (positive, negative) pair exists.
    Skipped,
    Pairs {
        value: T,
        /// `dL/dE` for each positive, in input order.
        d_pos: Vec<T>,
        /// `dL/dE` for each negative, in input order.
        d_neg: Vec<T>,
    },
}

impl<T: Real> LossResult<T> {
    pub fn is_skipped(&self) -> bool {
        matches!(self, LossResult::Skipped)
    }

    pub fn value(&self) -> Option<T> {
        match self {
            LossResult::Skipped => None,
            LossResult::Pairs { value, .. } => Some(*value),
        }
    }
}

/// Mean pairwise Bradley-Terry loss and its gradient with respect to each energy.
///
/// Sums are accumulated in `f64` whatever `T` is.
pub fn bt_loss<T: Real>(pos: &[T], neg: &[T]) -> Result<LossResult<T>> {
    if let Some(bad) = pos.iter().chain(neg).find(|e| !e.is_finite()) {
        return Err(Error::NonFinite(format!("group energy {bad}")));
    }
    if pos.is_empty() || neg.is_empty() {
        return Ok(LossResult::Skipped);
    }
    let norm = 1.0 / (pos.len() * neg.len()) as f64;
    let mut total = 0.0f64;
    let mut d_pos = vec![0.0f64; pos.len()];
    let mut d_neg = vec![0.0f64; neg.len()];
    for (i, &ep) in pos.iter().enumerate() {
        let ep = ep.as_f64();
        for (j, &en) in neg.iter().enumerate() {
            let gap = ep - en.as_f64();
            total += softplus(gap);
            let w = sigmoid(gap);
            d_pos[i] += w;
            d_neg[j] -= w;
        }
    }
    Ok(LossResult::Pairs {
        value: T::lit(total * norm),
        d_pos: d_pos.into_iter().map(|g| T::lit(g * norm)).collect(),
        d_neg: d_neg.into_iter().map(|g| T::lit(g * norm)).collect(),
    })
}

/// Reference value of the same loss written as a Bradley-Terry negative
/// log-likelihood: with strengths `s = exp(-E)`, each pair contributes
/// `-ln(s_pos / (s_pos + s_neg))`. Used to cross-check [`bt_loss`].
///
/// Panics on a degenerate group.
pub fn bt_loss_nll_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    assert!(!pos.is_empty() && !neg.is_empty(), "oracle needs both positives and negatives");
    let mut total = 0.0;
    for &ep in pos {
        for &en in neg {
            let (sp, sn) = ((-ep).exp(), (-en).exp());
            total += -(sp / (sp + sn)).ln();
        }
    }
    total / (pos.len() * neg.len()) as f64
}

/// Number of (positive, negative) pairs ordered correctly, i.e. with strictly
/// lower positive energy, and the total number of pairs. Ties count as wrong.
pub fn ordered_pairs<T: Real>(pos: &[T], neg: &[T]) -> (usize, usize) {
    let correct = pos
        .iter()
        .map(|&p| neg.iter().filter(|&&n| p < n).count())
        .sum();
    (correct, pos.len() * neg.len())
}
