//! Weighted two-sample Kolmogorov-Smirnov statistic between goods and bads.
//!
//! Both weighted ECDFs are right-continuous step functions that only jump at
//! observed scores, so the supremum is evaluated at the distinct pooled
//! scores after a single sort. Ties across classes are resolved by
//! absorbing every observation at a score before evaluating the gap.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SegmentId, WeightedSample};

/// Guard below which a KS value is treated as zero when used as a denominator.
pub const KS_DENOMINATOR_EPS: f64 = 1e-9;

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KsError {
    #[error("both classes need at least one observation")]
    EmptyClass,
    #[error("weights must be positive and finite, got {0}")]
    NonPositiveWeight(f64),
    #[error("a class is empty after segment filtering")]
    EmptyClassAfterFilter,
    #[error("reference KS {0} is zero; percentage change undefined")]
    ZeroReferenceKs(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsValue {
    pub value: f64,
    /// Smallest observed score at which the supremum is attained.
    pub argmax_score: f64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `sup_t |F_bad(t) - F_good(t)|` with per-class weight normalization.
///
/// Inputs are `(score, weight)` pairs. Unit weights give the classical
/// two-sample statistic.
pub fn weighted_ks(goods: &[(f64, f64)], bads: &[(f64, f64)]) -> Result<KsValue, KsError> {
    if goods.is_empty() || bads.is_empty() {
        return Err(KsError::EmptyClass);
    }
    // (score, is_bad, weight)
    let mut pooled: Vec<(f64, bool, f64)> = Vec::with_capacity(goods.len() + bads.len());
    let mut total_good = CompensatedSum::default();
    let mut total_bad = CompensatedSum::default();
    for &(s, w) in goods {
        check_weight(w)?;
        total_good.add(w);
        pooled.push((s, false, w));
    }
    for &(s, w) in bads {
        check_weight(w)?;
        total_bad.add(w);
        pooled.push((s, true, w));
    }
    // Full ordering on (score, class, weight) makes the accumulation order a
    // function of the input multiset alone.
    pooled.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Ok(sup_gap(&pooled, total_good.value(), total_bad.value()))
}

fn check_weight(w: f64) -> Result<(), KsError> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(KsError::NonPositiveWeight(w))
    }
}

fn sup_gap(sorted: &[(f64, bool, f64)], total_good: f64, total_bad: f64) -> KsValue {
    let mut cum_good = CompensatedSum::default();
    let mut cum_bad = CompensatedSum::default();
    let mut best = KsValue {
        value: 0.0,
        argmax_score: sorted[0].0,
    };
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            let (_, is_bad, w) = sorted[i];
            if is_bad {
                cum_bad.add(w);
            } else {
                cum_good.add(w);
            }
            i += 1;
        }
        let gap = ecdf_gap(cum_good.value(), total_good, cum_bad.value(), total_bad);
        // Gaps equal up to rounding count as ties and keep the smaller score.
        if gap > best.value + TIE_TOLERANCE {
            best.argmax_score = t;
        }
        best.value = best.value.max(gap);
    }
    best.value = best.value.min(1.0);
    best
}

/// Shared by the resampling kernel so both paths produce identical bits.
#[inline]
pub(crate) fn ecdf_gap(cum_good: f64, total_good: f64, cum_bad: f64, total_bad: f64) -> f64 {
    (cum_good / total_good - cum_bad / total_bad).abs()
}

/// KS of a weighted sample, optionally restricted to a set of segments.
pub fn ks_of_sample(
    sample: &WeightedSample<'_>,
    restrict_to: Option<&BTreeSet<SegmentId>>,
) -> Result<KsValue, KsError> {
    let mut goods = Vec::new();
    let mut bads = Vec::new();
    for (obs, w) in sample.iter() {
        if restrict_to.is_some_and(|keep| !keep.contains(&obs.segment)) {
            continue;
        }
        if obs.label.is_bad() {
            bads.push((obs.score, w));
        } else {
            goods.push((obs.score, w));
        }
    }
    if goods.is_empty() || bads.is_empty() {
        return Err(KsError::EmptyClassAfterFilter);
    }
    weighted_ks(&goods, &bads)
}

/// `(ks_cur - ks_ref) / ks_ref`; negative means deterioration.
pub fn pct_change(ks_ref: f64, ks_cur: f64) -> Result<f64, KsError> {
    if ks_ref.is_nan() || ks_ref <= KS_DENOMINATOR_EPS {
        return Err(KsError::ZeroReferenceKs(ks_ref));
    }
    Ok((ks_cur - ks_ref) / ks_ref)
}
