//! Weighted AUROC via the Mann-Whitney formulation.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AurocError {
    #[error("both classes need positive total weight")]
    SingleClass,
    #[error("scores, labels and weights differ in length")]
    LengthMismatch,
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half, with pairs weighted by the product of instance
/// weights. O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool], weights: &[f64]) -> Result<f64, AurocError> {
    if scores.len() != labels.len() || scores.len() != weights.len() {
        return Err(AurocError::LengthMismatch);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut total_pos, mut total_neg) = (0.0, 0.0);
    let mut neg_below = 0.0;
    let mut wins = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (mut pos, mut neg) = (0.0, 0.0);
        while i < order.len() && scores[order[i]] == t {
            let k = order[i];
            if labels[k] {
                pos += weights[k];
            } else {
                neg += weights[k];
            }
            i += 1;
        }
        wins += pos * (neg_below + 0.5 * neg);
        neg_below += neg;
        total_pos += pos;
        total_neg += neg;
    }
    if !(total_pos > 0.0 && total_neg > 0.0) {
        return Err(AurocError::SingleClass);
    }
    Ok(wins / (total_pos * total_neg))
}
