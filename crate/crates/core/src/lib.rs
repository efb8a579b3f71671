//! Three-gate KS deterioration diagnostics for credit scoring models.
//!
//! A reference and a current period sample go through:
//!
//! 1. a stratified bootstrap interval on the relative KS change,
//! 2. a decomposition of the change into universe, mix and residual parts,
//! 3. covariate-shift reweighting via a domain classifier.
//!
//! [`run_diagnosis`] runs the gates in order and stops at the first one
//! that explains the change.

pub mod auroc;
pub mod bootstrap;
pub mod config;
pub mod covariate;
pub mod data;
pub mod ks;
pub mod logistic;
pub mod pipeline;
pub mod regime;
pub mod report;
pub mod rng;
pub mod selftest;
pub mod simgen;

pub use bootstrap::{Gate1Class, Gate1Result};
pub use config::{ConfigError, GovernanceConfig, WeightClip};
pub use covariate::{CovariateShiftResult, Gate3Gateway};
pub use data::{
    load_period_csv, parse_period_csv, DataError, Label, Observation, Period, PeriodSample,
    SegmentId, WeightedSample,
};
pub use ks::{weighted_ks, KsValue};
pub use pipeline::{
    run_diagnosis, AdvisoryCode, Diagnosis, DiagnosticReport, FinalDiagnosis, ReportWarning,
    WarningCode,
};
pub use regime::{DecompositionResult, Gate2Gateway};
pub use simgen::{builtin_scenario, generate, ScenarioId, ScenarioSpec};
