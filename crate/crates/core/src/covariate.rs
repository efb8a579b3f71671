//! Step 3: covariate-shift alignment on the common support.
//!
//! A domain classifier separates current rows (`Z = 1`) from mix-weighted
//! reference rows (`Z = 0`). Its odds give the density-ratio weight
//!
//! ```text
//! w_X = ((1 - eta) / eta) * p / (1 - p)
//! ```
//!
//! which, multiplied by the Step 2 mix weight, yields the covariate-aligned
//! reference KS.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auroc::{auroc, AurocError};
use crate::config::GovernanceConfig;
use crate::data::{Observation, PeriodSample, SegmentId, WeightedSample};
use crate::ks::{ks_of_sample, KsError, KsValue, KS_DENOMINATOR_EPS};
use crate::logistic::{self, Design, IrlsOptions};
use crate::regime::{mix_adjusted_reference, DecompositionResult, Gate2Error, MixWeights};
use crate::rng::{self, StreamDomain};

/// Fitted probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Largest standardized coefficient before the fit is flagged as unstable.
pub const SEPARATION_COEF_LIMIT: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum Gate3Error {
    #[error("no covariates available; covariate alignment is not applicable")]
    NoCovariates,
    #[error("domain dataset needs rows from both periods with positive weight")]
    SingleClass,
    #[error("covariate-aligned KS {0} is zero; percentage change undefined")]
    ZeroXAlignedKs(f64),
    #[error("row weights do not line up with the reference rows")]
    Misaligned,
    #[error(transparent)]
    Ks(#[from] KsError),
    #[error(transparent)]
    Gate2(#[from] Gate2Error),
}

impl From<AurocError> for Gate3Error {
    fn from(_: AurocError) -> Self {
        Gate3Error::SingleClass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

/// Stacked reference/current rows ready for classifier fitting.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    /// Raw (unstandardized) features, row-major, `width` columns.
    pub features: Vec<f64>,
    pub width: usize,
    pub z: Vec<bool>,
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
    pub n_covariates: usize,
    /// Segment levels; the first is the dropped reference category.
    pub segment_levels: Vec<SegmentId>,
    pub standardization: Vec<Standardization>,
    /// Set when only one segment is present, so no indicator columns exist.
    pub single_segment: bool,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }
}

fn feature_row(obs: &Observation, levels: &[SegmentId], out: &mut Vec<f64>) {
    out.extend_from_slice(&obs.covariates);
    out.extend(
        levels
            .iter()
            .skip(1)
            .map(|g| if *g == obs.segment { 1.0 } else { 0.0 }),
    );
}

/// Stacks mix-weighted reference rows (`Z = 0`) over current rows (`Z = 1`).
pub fn build_domain_dataset(
    ref_common: &WeightedSample<'_>,
    cur_common: &PeriodSample,
) -> Result<DomainDataset, Gate3Error> {
    let p = ref_common.base().dim();
    if p == 0 || cur_common.dim() == 0 {
        return Err(Gate3Error::NoCovariates);
    }
    let levels: Vec<SegmentId> = ref_common
        .base()
        .segment_universe()
        .union(cur_common.segment_universe())
        .cloned()
        .collect();
    let width = p + levels.len().saturating_sub(1);
    let n = ref_common.base().len() + cur_common.len();

    let mut features = Vec::with_capacity(n * width);
    let mut z = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (obs, w) in ref_common.iter() {
        feature_row(obs, &levels, &mut features);
        z.push(false);
        weights.push(w);
    }
    for obs in cur_common.observations() {
        feature_row(obs, &levels, &mut features);
        z.push(true);
        weights.push(1.0);
    }

    let total: f64 = weights.iter().sum();
    let standardization = (0..width)
        .map(|j| {
            let mean = (0..n)
                .map(|i| weights[i] * features[i * width + j])
                .sum::<f64>()
                / total;
            let var = (0..n)
                .map(|i| weights[i] * (features[i * width + j] - mean).powi(2))
                .sum::<f64>()
                / total;
            let sd = var.sqrt();
            let scale = if sd > 1e-12 * mean.abs().max(1.0) {
                sd
            } else {
                1.0
            };
            Standardization { mean, scale }
        })
        .collect();

    let mut feature_names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    feature_names.extend(levels.iter().skip(1).map(|g| format!("segment={g}")));

    Ok(DomainDataset {
        features,
        width,
        z,
        weights,
        feature_names,
        n_covariates: p,
        single_segment: levels.len() == 1,
        segment_levels: levels,
        standardization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifier {
    /// Intercept first, then one coefficient per standardized feature.
    pub coefficients: Vec<f64>,
    pub standardization: Vec<Standardization>,
    pub feature_names: Vec<String>,
    pub segment_levels: Vec<SegmentId>,
    pub n_covariates: usize,
    pub train_auroc: f64,
    pub holdout_auroc: Option<f64>,
    /// Weighted share of `Z = 1` rows in the fitting sample.
    pub eta: f64,
    pub converged: bool,
    pub iterations: usize,
    pub separation_unstable: bool,
}

impl DomainClassifier {
    /// AUROC used for the shift diagnostic: holdout when available.
    pub fn diagnostic_auroc(&self) -> f64 {
        self.holdout_auroc.unwrap_or(self.train_auroc)
    }

    fn linear_predictor(&self, raw: &[f64]) -> f64 {
        let mut eta = self.coefficients[0];
        for (j, x) in raw.iter().enumerate() {
            let s = self.standardization[j];
            eta += self.coefficients[j + 1] * (x - s.mean) / s.scale;
        }
        eta
    }

    /// `p(Z = 1 | x, g)`, floored away from 0 and 1. Segments outside the
    /// fitted levels fall in the reference category.
    pub fn probability(&self, obs: &Observation) -> f64 {
        let mut raw = Vec::with_capacity(self.standardization.len());
        feature_row(obs, &self.segment_levels, &mut raw);
        logistic::sigmoid(self.linear_predictor(&raw)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

pub fn fit_domain_classifier(
    dataset: &DomainDataset,
    config: &GovernanceConfig,
) -> Result<DomainClassifier, Gate3Error> {
    let n = dataset.len();
    let holdout: Vec<bool> = if config.holdout_fraction > 0.0 {
        let mut r = rng::stream(config.seed, StreamDomain::Holdout, 0);
        (0..n)
            .map(|_| r.random::<f64>() < config.holdout_fraction)
            .collect()
    } else {
        vec![false; n]
    };

    let d = dataset.width + 1;
    let mut design = Vec::new();
    let mut z = Vec::new();
    let mut c = Vec::new();
    let mut train_idx = Vec::new();
    for (i, _) in holdout.iter().enumerate().filter(|(_, &held)| !held) {
        design.push(1.0);
        for (j, x) in dataset.row(i).iter().enumerate() {
            let s = dataset.standardization[j];
            design.push((x - s.mean) / s.scale);
        }
        z.push(dataset.z[i]);
        c.push(dataset.weights[i]);
        train_idx.push(i);
    }
    let w1: f64 = z.iter().zip(&c).filter(|(z, _)| **z).map(|(_, w)| w).sum();
    let w0: f64 = z.iter().zip(&c).filter(|(z, _)| !**z).map(|(_, w)| w).sum();
    if !(w1 > 0.0 && w0 > 0.0) {
        return Err(Gate3Error::SingleClass);
    }
    let fit = logistic::fit(
        &Design {
            rows: &design,
            width: d,
        },
        &z,
        &c,
        IrlsOptions::default(),
    );

    let mut model = DomainClassifier {
        coefficients: fit.coefficients,
        standardization: dataset.standardization.clone(),
        feature_names: dataset.feature_names.clone(),
        segment_levels: dataset.segment_levels.clone(),
        n_covariates: dataset.n_covariates,
        train_auroc: 0.0,
        holdout_auroc: None,
        eta: w1 / (w1 + w0),
        converged: fit.converged,
        iterations: fit.iterations,
        separation_unstable: false,
    };

    let scores: Vec<f64> = (0..n)
        .map(|i| model.linear_predictor(dataset.row(i)))
        .collect();
    let subset = |keep: bool| -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for i in (0..n).filter(|&i| holdout[i] == keep) {
            out.0.push(scores[i]);
            out.1.push(dataset.z[i]);
            out.2.push(dataset.weights[i]);
        }
        out
    };
    let (s, l, w) = subset(false);
    model.train_auroc = auroc(&s, &l, &w)?;
    if config.holdout_fraction > 0.0 {
        let (s, l, w) = subset(true);
        model.holdout_auroc = Some(auroc(&s, &l, &w)?);
    }
    let max_coef = model.coefficients[1..]
        .iter()
        .fold(0.0f64, |m, b| m.max(b.abs()));
    model.separation_unstable = model.train_auroc >= 1.0 - 1e-12
        || model.train_auroc <= 1e-12
        || max_coef > SEPARATION_COEF_LIMIT;
    Ok(model)
}

/// Density-ratio weight from a domain probability and the class prior.
/// Returns exactly 1 when `p == eta`.
pub fn shift_weight(eta: f64, p: f64) -> f64 {
    ((1.0 - eta) * p) / (eta * (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub mean_unclipped: f64,
    pub fraction_clipped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateWeights {
    pub unclipped: Vec<f64>,
    pub weights: Vec<f64>,
    pub stats: WeightStats,
}

/// Per-row covariate-shift weights for the reference common-support rows,
/// clipped into `config.weight_clip`.
pub fn covariate_weights(
    model: &DomainClassifier,
    ref_common: &PeriodSample,
    config: &GovernanceConfig,
) -> CovariateWeights {
    let clip = config.weight_clip;
    let unclipped: Vec<f64> = ref_common
        .observations()
        .iter()
        .map(|o| shift_weight(model.eta, model.probability(o)))
        .collect();
    let mut clipped_count = 0usize;
    let weights: Vec<f64> = unclipped
        .iter()
        .map(|&w| {
            let c = w.clamp(clip.low, clip.high);
            if c != w {
                clipped_count += 1;
            }
            c
        })
        .collect();
    let n = weights.len() as f64;
    let stats = WeightStats {
        min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: weights.iter().sum::<f64>() / n,
        mean_unclipped: unclipped.iter().sum::<f64>() / n,
        fraction_clipped: clipped_count as f64 / n,
    };
    CovariateWeights {
        unclipped,
        weights,
        stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Gate3Gateway {
    ExplainedByCovariateShift,
    EscalateToStep4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XAlignment {
    pub ks_cur_com: KsValue,
    pub ks_x_aligned: KsValue,
    pub pct_x_aligned: f64,
    pub gateway: Gate3Gateway,
}

/// KS of the reference common-support rows under `mix * covariate` weights,
/// compared against the current common-support KS.
pub fn x_aligned_ks(
    ref_common: &PeriodSample,
    mix: &MixWeights,
    cov_weights: &[f64],
    cur_common: &PeriodSample,
    config: &GovernanceConfig,
) -> Result<XAlignment, Gate3Error> {
    if cov_weights.len() != ref_common.len() {
        return Err(Gate3Error::Misaligned);
    }
    let total: Vec<f64> = mix
        .row_weights(ref_common)
        .into_iter()
        .zip(cov_weights)
        .map(|(m, &x)| m.map(|m| m * x))
        .collect::<Option<_>>()
        .ok_or(Gate3Error::Misaligned)?;
    let weighted = WeightedSample::new(ref_common, total).map_err(|_| Gate3Error::Misaligned)?;
    let ks_x = ks_of_sample(&weighted, None)?;
    let ks_cur_com = ks_of_sample(&WeightedSample::unit(cur_common), None)?;
    if ks_x.value.is_nan() || ks_x.value <= KS_DENOMINATOR_EPS {
        return Err(Gate3Error::ZeroXAlignedKs(ks_x.value));
    }
    let pct = (ks_cur_com.value - ks_x.value) / ks_x.value;
    Ok(XAlignment {
        ks_cur_com,
        ks_x_aligned: ks_x,
        pct_x_aligned: pct,
        gateway: if pct < config.tau {
            Gate3Gateway::EscalateToStep4
        } else {
            Gate3Gateway::ExplainedByCovariateShift
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateShiftResult {
    pub auroc: f64,
    pub shift_negligible: bool,
    pub classifier: DomainClassifier,
    pub weight_stats: WeightStats,
    pub ks_cur_com: KsValue,
    pub ks_mix_adjusted: KsValue,
    pub ks_x_aligned: KsValue,
    pub pct_x_aligned: f64,
    pub gateway: Gate3Gateway,
    pub single_segment: bool,
}

/// Runs Step 3 on top of a Step 2 decomposition.
pub fn run_gate3(
    reference: &PeriodSample,
    current: &PeriodSample,
    decomposition: &DecompositionResult,
    config: &GovernanceConfig,
) -> Result<CovariateShiftResult, Gate3Error> {
    let part = &decomposition.partition;
    let (ref_com, mix_row) = mix_adjusted_reference(reference, part, &decomposition.mix_weights)?;
    let cur_com = current
        .restrict_to(&part.common)
        .map_err(|_| Gate2Error::EmptyClassAfterFilter("current"))?;
    let mixed = WeightedSample::new(&ref_com, mix_row).expect("mix weights are positive");

    let dataset = build_domain_dataset(&mixed, &cur_com)?;
    let model = fit_domain_classifier(&dataset, config)?;
    let cov = covariate_weights(&model, &ref_com, config);
    let aligned = x_aligned_ks(
        &ref_com,
        &decomposition.mix_weights,
        &cov.weights,
        &cur_com,
        config,
    )?;
    let auroc = model.diagnostic_auroc();
    Ok(CovariateShiftResult {
        auroc,
        shift_negligible: auroc < config.auroc_negligible,
        weight_stats: cov.stats,
        ks_cur_com: aligned.ks_cur_com,
        ks_mix_adjusted: decomposition.ks_mix_adjusted,
        ks_x_aligned: aligned.ks_x_aligned,
        pct_x_aligned: aligned.pct_x_aligned,
        gateway: aligned.gateway,
        single_segment: dataset.single_segment,
        classifier: model,
    })
}
