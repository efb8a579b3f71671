//! Step 1: is the KS change real, and does it materially breach `tau`?
//!
//! Goods and bads are resampled with replacement inside each period, keeping
//! the class counts fixed. Each replicate `b` draws from its own stream
//! `(seed, b)` and the replicate vector is assembled in index order, so the
//! output does not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GovernanceConfig;
use crate::data::{Observation, PeriodSample, WeightedSample};
use crate::ks::{ecdf_gap, ks_of_sample, pct_change, KsError, KsValue, KS_DENOMINATOR_EPS};
use crate::rng::{self, StreamDomain};

/// Dropped-replicate share above which the result carries a warning.
pub const DEGENERATE_WARNING_SHARE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum Gate1Error {
    #[error(transparent)]
    Ks(#[from] KsError),
    #[error("every bootstrap replicate had a zero reference KS")]
    AllReplicatesDegenerate,
    #[error("cannot take quantiles of an empty vector")]
    EmptyVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Gate1Class {
    NoDeterioration,
    SignificantNoBreach,
    BreachNotConfirmed,
    ConfirmedBreach,
}

impl Gate1Class {
    /// 0 = least severe.
    pub fn severity(self) -> u8 {
        match self {
            Gate1Class::NoDeterioration => 0,
            Gate1Class::SignificantNoBreach => 1,
            Gate1Class::BreachNotConfirmed => 2,
            Gate1Class::ConfirmedBreach => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate1Result {
    pub ks_ref: KsValue,
    pub ks_cur: KsValue,
    pub pct_change_observed: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub classification: Gate1Class,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub replicates_dropped: usize,
    /// More than 1% of replicates were dropped.
    pub degenerate_warning: bool,
    /// The interval fell in a cell the four-row decision table does not list.
    pub table_extension: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    /// Finite `%dKS` values in replicate order, degenerate replicates removed.
    pub values: Vec<f64>,
    pub dropped: usize,
}

/// Class-stratified resample of one period: `n_good` goods then `n_bad` bads,
/// each drawn uniformly with replacement from its class.
pub fn stratified_resample<R: Rng + ?Sized>(sample: &PeriodSample, rng: &mut R) -> PeriodSample {
    let (goods, bads): (Vec<&Observation>, Vec<&Observation>) = sample
        .observations()
        .iter()
        .partition(|o| !o.label.is_bad());
    let mut rows = Vec::with_capacity(sample.len());
    for class in [&goods, &bads] {
        for _ in 0..class.len() {
            rows.push(class[rng.random_range(0..class.len())].clone());
        }
    }
    PeriodSample::from_trusted(sample.period(), rows, sample.dim())
}

/// Pre-sorted class scores for O(n) replicate evaluation: a resample is a
/// vector of multiplicities over the sorted positions, so no per-replicate
/// sort is needed.
struct ResampleKernel {
    goods: ClassIndex,
    bads: ClassIndex,
}

struct ClassIndex {
    sorted: Vec<f64>,
    /// Row-order class index -> position in `sorted`.
    rank: Vec<u32>,
}

impl ClassIndex {
    fn new(scores: Vec<f64>) -> Self {
        let mut order: Vec<u32> = (0..scores.len() as u32).collect();
        order.sort_by(|&a, &b| scores[a as usize].total_cmp(&scores[b as usize]));
        let mut rank = vec![0u32; scores.len()];
        for (pos, &row) in order.iter().enumerate() {
            rank[row as usize] = pos as u32;
        }
        let sorted = order.iter().map(|&i| scores[i as usize]).collect();
        ClassIndex { sorted, rank }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, counts: &mut [u32]) {
        counts.fill(0);
        let n = self.rank.len();
        for _ in 0..n {
            counts[self.rank[rng.random_range(0..n)] as usize] += 1;
        }
    }
}

impl ResampleKernel {
    fn new(sample: &PeriodSample) -> Self {
        let (mut goods, mut bads) = (Vec::new(), Vec::new());
        for obs in sample.observations() {
            if obs.label.is_bad() {
                bads.push(obs.score);
            } else {
                goods.push(obs.score);
            }
        }
        ResampleKernel {
            goods: ClassIndex::new(goods),
            bads: ClassIndex::new(bads),
        }
    }

    /// Draws one stratified resample (goods first, then bads, matching
    /// [`stratified_resample`]) and returns its KS.
    fn replicate_ks<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut Buffers) -> f64 {
        buf.goods.resize(self.goods.sorted.len(), 0);
        buf.bads.resize(self.bads.sorted.len(), 0);
        self.goods.draw(rng, &mut buf.goods);
        self.bads.draw(rng, &mut buf.bads);
        merged_ks(&self.goods.sorted, &buf.goods, &self.bads.sorted, &buf.bads)
    }
}

#[derive(Default)]
struct Buffers {
    goods: Vec<u32>,
    bads: Vec<u32>,
}

fn merged_ks(gs: &[f64], gc: &[u32], bs: &[f64], bc: &[u32]) -> f64 {
    let total_good = gc.iter().map(|&c| c as f64).sum::<f64>();
    let total_bad = bc.iter().map(|&c| c as f64).sum::<f64>();
    let (mut i, mut j) = (0, 0);
    let (mut cum_good, mut cum_bad) = (0u64, 0u64);
    let mut best: f64 = 0.0;
    while i < gs.len() || j < bs.len() {
        let t = match (gs.get(i), bs.get(j)) {
            (Some(&g), Some(&b)) => g.min(b),
            (Some(&g), None) => g,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < gs.len() && gs[i] == t {
            cum_good += gc[i] as u64;
            i += 1;
        }
        while j < bs.len() && bs[j] == t {
            cum_bad += bc[j] as u64;
            j += 1;
        }
        let gap = ecdf_gap(cum_good as f64, total_good, cum_bad as f64, total_bad);
        if gap > best {
            best = gap;
        }
    }
    best.min(1.0)
}

pub(crate) fn with_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> T {
    if parallelism == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// `%dKS^(b) = (KS_cur^(b) - KS_ref^(b)) / KS_ref^(b)` for `b = 1..B`.
pub fn bootstrap_distribution(
    reference: &PeriodSample,
    current: &PeriodSample,
    config: &GovernanceConfig,
) -> Result<BootstrapDistribution, Gate1Error> {
    let ref_kernel = ResampleKernel::new(reference);
    let cur_kernel = ResampleKernel::new(current);
    let seed = config.seed;
    let replicates: Vec<Option<f64>> = with_pool(config.parallelism, || {
        (0..config.bootstrap as u64)
            .into_par_iter()
            .map_init(Buffers::default, |buf, b| {
                let mut rng = rng::stream(seed, StreamDomain::Bootstrap, b);
                let ks_ref = ref_kernel.replicate_ks(&mut rng, buf);
                let ks_cur = cur_kernel.replicate_ks(&mut rng, buf);
                (ks_ref > KS_DENOMINATOR_EPS).then(|| (ks_cur - ks_ref) / ks_ref)
            })
            .collect()
    });
    let dropped = replicates.iter().filter(|r| r.is_none()).count();
    let values: Vec<f64> = replicates.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Gate1Error::AllReplicatesDegenerate);
    }
    Ok(BootstrapDistribution { values, dropped })
}

/// Linear interpolation between order statistics at `h = (n - 1) q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval `[q_{alpha/2}, q_{1-alpha/2}]`.
pub fn percentile_ci(values: &[f64], alpha: f64) -> Result<(f64, f64), Gate1Error> {
    if values.is_empty() {
        return Err(Gate1Error::EmptyVector);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile(&sorted, alpha / 2.0),
        quantile(&sorted, 1.0 - alpha / 2.0),
    ))
}

/// Places a confidence interval against 0 and `tau`.
///
/// The four table rows are strict inequalities; intervals outside them are
/// resolved toward monitoring (see [`is_table_extension`]).
pub fn classify_gate1(ci_low: f64, ci_high: f64, tau: f64) -> Gate1Class {
    if ci_high < tau {
        Gate1Class::ConfirmedBreach
    } else if ci_low <= tau {
        Gate1Class::BreachNotConfirmed
    } else if ci_high < 0.0 {
        Gate1Class::SignificantNoBreach
    } else {
        Gate1Class::NoDeterioration
    }
}

/// True when the interval matches none of the four strict table rows
/// (e.g. it spans both `tau` and 0, or lies entirely above 0).
pub fn is_table_extension(ci_low: f64, ci_high: f64, tau: f64) -> bool {
    let row1 = tau < ci_low && ci_low < 0.0 && 0.0 < ci_high;
    let row2 = tau < ci_low && ci_low <= ci_high && ci_high < 0.0;
    let row3 = ci_low < tau && tau < ci_high && ci_high < 0.0;
    let row4 = ci_low <= ci_high && ci_high < tau;
    !(row1 || row2 || row3 || row4)
}

/// Runs Step 1 end to end and also returns the replicate distribution.
pub fn run_gate1(
    reference: &PeriodSample,
    current: &PeriodSample,
    config: &GovernanceConfig,
) -> Result<(Gate1Result, BootstrapDistribution), Gate1Error> {
    let ks_ref = ks_of_sample(&WeightedSample::unit(reference), None)?;
    let ks_cur = ks_of_sample(&WeightedSample::unit(current), None)?;
    let observed = pct_change(ks_ref.value, ks_cur.value)?;
    let dist = bootstrap_distribution(reference, current, config)?;
    let (ci_low, ci_high) = percentile_ci(&dist.values, config.alpha)?;
    let result = Gate1Result {
        ks_ref,
        ks_cur,
        pct_change_observed: observed,
        ci_low,
        ci_high,
        classification: classify_gate1(ci_low, ci_high, config.tau),
        replicates_requested: config.bootstrap,
        replicates_used: dist.values.len(),
        replicates_dropped: dist.dropped,
        degenerate_warning: dist.dropped as f64
            > DEGENERATE_WARNING_SHARE * config.bootstrap as f64,
        table_extension: is_table_extension(ci_low, ci_high, config.tau),
    };
    Ok((result, dist))
}
