//! Step 2: business-composition decomposition of the KS change.
//!
//! ```text
//! KS_cur - KS_ref = (KS_cur - KS_cur_com)            current-only universe
//!                 + (KS_cur_com - KS_mix)            residual aligned gap
//!                 + (KS_mix - KS_ref_com)            mix within common support
//!                 + (KS_ref_com - KS_ref)            reference-only universe
//! ```
//!
//! `KS_mix` is the reference KS on common-support rows, each row weighted by
//! `pi_cur(g) / pi_ref(g)` for its segment `g`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GovernanceConfig;
use crate::data::{PeriodSample, SegmentId, WeightedSample};
use crate::ks::{ks_of_sample, pct_change, KsError, KsValue, KS_DENOMINATOR_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum Gate2Error {
    #[error("no segment has enough observations in both periods")]
    EmptyCommonSupport,
    #[error("common-support rows of the {0} period lack goods or bads")]
    EmptyClassAfterFilter(&'static str),
    #[error("mix-adjusted KS {0} is zero; aligned residual change undefined")]
    ZeroMixAdjustedKs(f64),
    #[error(transparent)]
    Ks(#[from] KsError),
}

/// Segment universes split by period membership.
///
/// `thin` holds segments observed in both periods but below the minimum
/// count in at least one; their rows are excluded from the common support in
/// both periods, so their effect lands in the universe components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPartition {
    pub common: BTreeSet<SegmentId>,
    pub ref_only: BTreeSet<SegmentId>,
    pub cur_only: BTreeSet<SegmentId>,
    pub thin: BTreeSet<SegmentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub shares_ref: BTreeMap<SegmentId, f64>,
    pub shares_cur: BTreeMap<SegmentId, f64>,
    pub weight: BTreeMap<SegmentId, f64>,
}

impl MixWeights {
    /// Per-row weights for `sample`, `None` for rows outside common support.
    pub fn row_weights(&self, sample: &PeriodSample) -> Vec<Option<f64>> {
        sample
            .observations()
            .iter()
            .map(|o| self.weight.get(&o.segment).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Gate2Gateway {
    ExplainedByComposition,
    EscalateToStep3,
}

/// Component values as fractions of `KS_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentPcts {
    pub cur_only: f64,
    pub residual: f64,
    pub mix: f64,
    pub ref_only: f64,
}

/// Per-segment KS table. Diagnostic only; not part of the gateway logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostic {
    pub segment: SegmentId,
    pub n_ref: usize,
    pub n_cur: usize,
    pub ks_ref: Option<f64>,
    pub ks_cur: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub ks_ref: KsValue,
    pub ks_cur: KsValue,
    pub ks_ref_com: KsValue,
    pub ks_cur_com: KsValue,
    pub ks_mix_adjusted: KsValue,
    pub comp_cur_only: f64,
    pub comp_residual: f64,
    pub comp_mix: f64,
    pub comp_ref_only: f64,
    pub pct_components: ComponentPcts,
    pub pct_change_total: f64,
    pub pct_aligned_residual: f64,
    pub gateway: Gate2Gateway,
    pub partition: SupportPartition,
    pub mix_weights: MixWeights,
    pub segment_diagnostics: Vec<SegmentDiagnostic>,
}

impl DecompositionResult {
    pub fn components_sum(&self) -> f64 {
        self.comp_cur_only + self.comp_residual + self.comp_mix + self.comp_ref_only
    }
}

pub fn partition_support(
    reference: &PeriodSample,
    current: &PeriodSample,
    min_segment_count: usize,
) -> Result<SupportPartition, Gate2Error> {
    let ref_counts = reference.segment_counts();
    let cur_counts = current.segment_counts();
    let mut part = SupportPartition {
        common: BTreeSet::new(),
        ref_only: BTreeSet::new(),
        cur_only: BTreeSet::new(),
        thin: BTreeSet::new(),
    };
    let all: BTreeSet<&SegmentId> = ref_counts.keys().chain(cur_counts.keys()).collect();
    for g in all {
        match (ref_counts.get(g), cur_counts.get(g)) {
            (Some(&r), Some(&c)) if r >= min_segment_count && c >= min_segment_count => {
                part.common.insert(g.clone())
            }
            (Some(_), Some(_)) => part.thin.insert(g.clone()),
            (Some(_), None) => part.ref_only.insert(g.clone()),
            (None, Some(_)) => part.cur_only.insert(g.clone()),
            (None, None) => unreachable!(),
        };
    }
    if part.common.is_empty() {
        return Err(Gate2Error::EmptyCommonSupport);
    }
    Ok(part)
}

pub fn compute_mix_weights(
    reference: &PeriodSample,
    current: &PeriodSample,
    part: &SupportPartition,
) -> Result<MixWeights, Gate2Error> {
    if part.common.is_empty() {
        return Err(Gate2Error::EmptyCommonSupport);
    }
    let shares = |sample: &PeriodSample| -> BTreeMap<SegmentId, f64> {
        let counts = sample.segment_counts();
        let total: usize = part
            .common
            .iter()
            .map(|g| counts.get(g).copied().unwrap_or(0))
            .sum();
        part.common
            .iter()
            .map(|g| {
                (
                    g.clone(),
                    counts.get(g).copied().unwrap_or(0) as f64 / total as f64,
                )
            })
            .collect()
    };
    let shares_ref = shares(reference);
    let shares_cur = shares(current);
    let weight = part
        .common
        .iter()
        .map(|g| (g.clone(), shares_cur[g] / shares_ref[g]))
        .collect();
    Ok(MixWeights {
        shares_ref,
        shares_cur,
        weight,
    })
}

/// Reference rows on common support with their mix weights, plus the KS of
/// the mix-adjusted reference sample.
pub(crate) fn mix_adjusted_reference(
    reference: &PeriodSample,
    part: &SupportPartition,
    mix: &MixWeights,
) -> Result<(PeriodSample, Vec<f64>), Gate2Error> {
    let ref_com = reference
        .restrict_to(&part.common)
        .map_err(|_| Gate2Error::EmptyClassAfterFilter("reference"))?;
    let weights = mix
        .row_weights(&ref_com)
        .into_iter()
        .map(|w| w.expect("restricted rows are on common support"))
        .collect();
    Ok((ref_com, weights))
}

pub fn decompose(
    reference: &PeriodSample,
    current: &PeriodSample,
    config: &GovernanceConfig,
) -> Result<DecompositionResult, Gate2Error> {
    let part = partition_support(reference, current, config.min_segment_count)?;
    let mix = compute_mix_weights(reference, current, &part)?;

    let ref_unit = WeightedSample::unit(reference);
    let cur_unit = WeightedSample::unit(current);
    let ks_ref = ks_of_sample(&ref_unit, None)?;
    let ks_cur = ks_of_sample(&cur_unit, None)?;
    let ks_ref_com = ks_of_sample(&ref_unit, Some(&part.common))
        .map_err(|_| Gate2Error::EmptyClassAfterFilter("reference"))?;
    let ks_cur_com = ks_of_sample(&cur_unit, Some(&part.common))
        .map_err(|_| Gate2Error::EmptyClassAfterFilter("current"))?;

    let (ref_com, weights) = mix_adjusted_reference(reference, &part, &mix)?;
    let mixed = WeightedSample::new(&ref_com, weights).expect("mix weights are positive");
    let ks_mix = ks_of_sample(&mixed, None)?;

    let total = pct_change(ks_ref.value, ks_cur.value)?;
    if ks_mix.value.is_nan() || ks_mix.value <= KS_DENOMINATOR_EPS {
        return Err(Gate2Error::ZeroMixAdjustedKs(ks_mix.value));
    }
    let pct_aligned = (ks_cur_com.value - ks_mix.value) / ks_mix.value;

    let comp_cur_only = ks_cur.value - ks_cur_com.value;
    let comp_residual = ks_cur_com.value - ks_mix.value;
    let comp_mix = ks_mix.value - ks_ref_com.value;
    let comp_ref_only = ks_ref_com.value - ks_ref.value;
    let base = ks_ref.value;

    Ok(DecompositionResult {
        ks_ref,
        ks_cur,
        ks_ref_com,
        ks_cur_com,
        ks_mix_adjusted: ks_mix,
        comp_cur_only,
        comp_residual,
        comp_mix,
        comp_ref_only,
        pct_components: ComponentPcts {
            cur_only: comp_cur_only / base,
            residual: comp_residual / base,
            mix: comp_mix / base,
            ref_only: comp_ref_only / base,
        },
        pct_change_total: total,
        pct_aligned_residual: pct_aligned,
        gateway: if pct_aligned < config.tau {
            Gate2Gateway::EscalateToStep3
        } else {
            Gate2Gateway::ExplainedByComposition
        },
        segment_diagnostics: segment_table(reference, current),
        partition: part,
        mix_weights: mix,
    })
}

fn segment_table(reference: &PeriodSample, current: &PeriodSample) -> Vec<SegmentDiagnostic> {
    let ref_counts = reference.segment_counts();
    let cur_counts = current.segment_counts();
    let segment_ks = |sample: &PeriodSample, g: &SegmentId| {
        let keep = BTreeSet::from([g.clone()]);
        ks_of_sample(&WeightedSample::unit(sample), Some(&keep))
            .ok()
            .map(|k| k.value)
    };
    let all: BTreeSet<&SegmentId> = ref_counts.keys().chain(cur_counts.keys()).collect();
    all.into_iter()
        .map(|g| SegmentDiagnostic {
            segment: g.clone(),
            n_ref: ref_counts.get(g).copied().unwrap_or(0),
            n_cur: cur_counts.get(g).copied().unwrap_or(0),
            ks_ref: segment_ks(reference, g),
            ks_cur: segment_ks(current, g),
        })
        .collect()
}
