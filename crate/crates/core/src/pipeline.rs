//! Orchestration of the three gates and the final diagnosis.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_gate1, BootstrapDistribution, Gate1Class, Gate1Result};
use crate::config::{ConfigError, GovernanceConfig};
use crate::covariate::{run_gate3, CovariateShiftResult, Gate3Error, Gate3Gateway};
use crate::data::PeriodSample;
use crate::regime::{decompose, DecompositionResult, Gate2Gateway};

pub const SCHEMA_VERSION: u32 = 1;

/// Share of `KS_ref` a composition component must reach before it triggers
/// its advisory code.
pub const ADVISORY_MATERIALITY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FinalDiagnosis {
    NoActionSamplingVariation,
    SignificantNoBreach,
    MonitorBreachNotConfirmed,
    ExplainedByComposition,
    ExplainedByCovariateShift,
    ModelDegradationEscalation,
    DegenerateStopped,
}

impl FinalDiagnosis {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(self) -> i32 {
        match self {
            FinalDiagnosis::NoActionSamplingVariation
            | FinalDiagnosis::SignificantNoBreach
            | FinalDiagnosis::ExplainedByComposition
            | FinalDiagnosis::ExplainedByCovariateShift => 0,
            FinalDiagnosis::MonitorBreachNotConfirmed => 2,
            FinalDiagnosis::ModelDegradationEscalation => 3,
            FinalDiagnosis::DegenerateStopped => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdvisoryCode {
    NoFurtherAnalysis,
    IncreaseMonitoringFrequency,
    RootCauseAnalysis,
    CurOnlySegmentMonitoring,
    ReferenceComparabilityRefinement,
    MixAdjustedBenchmark,
    SegmentLevelMonitoring,
    CovariateShiftInvestigation,
    CovariateShiftMonitoring,
    ModelRecalibrationReview,
    ChallengerModelAnalysis,
    FeatureReview,
    SegmentationRedesignReview,
    ModelRedevelopmentReview,
    ManualReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    Step1Degenerate,
    DegenerateReplicates,
    DecisionTableExtension,
    Step2Degenerate,
    ThinSegmentsExcluded,
    Step3Degenerate,
    NoCovariates,
    NegligibleCovariateShift,
    ClassifierNotConverged,
    SeparationUnstable,
    SingleSegmentDomain,
    WeightsClipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportWarning {
    pub code: WarningCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub seed: u64,
    pub reference_digest: String,
    pub current_digest: String,
    pub n_ref: usize,
    pub n_cur: usize,
    pub full_trace: bool,
    /// Interpretation choices baked into this build.
    pub conventions: Vec<String>,
}

pub const CONVENTIONS: &[&str] = &[
    "KS_SUP_OVER_POOLED_DISTINCT_SCORES",
    "BOOTSTRAP_STRATIFIED_BY_CLASS",
    "PERCENTILE_CI_LINEAR_INTERPOLATION",
    "STEP2_GATEWAY_ALIGNED_RESIDUAL_VS_TAU",
    "STEP3_GATEWAY_X_ALIGNED_VS_TAU",
    "DOMAIN_CLASSIFIER_MIX_WEIGHTED",
    "DOMAIN_PRIOR_WEIGHTED",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub schema_version: u32,
    pub config: GovernanceConfig,
    pub gate1: Option<Gate1Result>,
    pub gate2: Option<DecompositionResult>,
    pub gate3: Option<CovariateShiftResult>,
    pub final_diagnosis: FinalDiagnosis,
    pub advisory_codes: Vec<AdvisoryCode>,
    pub warnings: Vec<ReportWarning>,
    pub provenance: Provenance,
}

impl DiagnosticReport {
    /// Checks which gate results may be present for the recorded outcome.
    pub fn check_structure(&self) -> Result<(), String> {
        let trace = self.provenance.full_trace;
        let class = self.gate1.as_ref().map(|g| g.classification);
        let breach = class == Some(Gate1Class::ConfirmedBreach);
        let stopped = self.final_diagnosis == FinalDiagnosis::DegenerateStopped;
        if self.gate1.is_none() && !stopped {
            return Err("missing gate1 without a degenerate stop".into());
        }
        if self.gate2.is_some() && !breach && !trace {
            return Err("gate2 present without a confirmed breach".into());
        }
        if breach && self.gate2.is_none() && !stopped {
            return Err("confirmed breach without gate2".into());
        }
        let escalated =
            self.gate2.as_ref().map(|g| g.gateway) == Some(Gate2Gateway::EscalateToStep3);
        if self.gate3.is_some() && !(breach && escalated) && !trace {
            return Err("gate3 present without a step 2 escalation".into());
        }
        if breach && escalated && self.gate3.is_none() && !stopped {
            return Err("step 2 escalation without gate3".into());
        }
        let expected = match class {
            None => FinalDiagnosis::DegenerateStopped,
            Some(Gate1Class::NoDeterioration) => FinalDiagnosis::NoActionSamplingVariation,
            Some(Gate1Class::SignificantNoBreach) => FinalDiagnosis::SignificantNoBreach,
            Some(Gate1Class::BreachNotConfirmed) => FinalDiagnosis::MonitorBreachNotConfirmed,
            Some(Gate1Class::ConfirmedBreach) => match (&self.gate2, &self.gate3) {
                (None, _) => FinalDiagnosis::DegenerateStopped,
                (Some(g2), _) if g2.gateway == Gate2Gateway::ExplainedByComposition => {
                    FinalDiagnosis::ExplainedByComposition
                }
                (Some(_), None) => FinalDiagnosis::DegenerateStopped,
                (Some(_), Some(g3)) => match g3.gateway {
                    Gate3Gateway::ExplainedByCovariateShift => {
                        FinalDiagnosis::ExplainedByCovariateShift
                    }
                    Gate3Gateway::EscalateToStep4 => FinalDiagnosis::ModelDegradationEscalation,
                },
            },
        };
        if expected != self.final_diagnosis {
            return Err(format!(
                "final diagnosis {:?} but gates imply {:?}",
                self.final_diagnosis, expected
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub report: DiagnosticReport,
    /// Step 1 replicate distribution, when Step 1 ran.
    pub bootstrap: Option<BootstrapDistribution>,
}

fn warn(warnings: &mut Vec<ReportWarning>, code: WarningCode, message: impl Into<String>) {
    warnings.push(ReportWarning {
        code,
        message: message.into(),
    });
}

fn composition_advisories(d: &DecompositionResult, codes: &mut Vec<AdvisoryCode>) {
    if !d.partition.cur_only.is_empty() {
        codes.push(AdvisoryCode::CurOnlySegmentMonitoring);
    }
    if !d.partition.ref_only.is_empty() {
        codes.push(AdvisoryCode::ReferenceComparabilityRefinement);
    }
    if d.pct_components.mix.abs() >= ADVISORY_MATERIALITY {
        codes.push(AdvisoryCode::MixAdjustedBenchmark);
        codes.push(AdvisoryCode::SegmentLevelMonitoring);
    }
}

fn gate3_warnings(g3: &CovariateShiftResult, warnings: &mut Vec<ReportWarning>) {
    if g3.shift_negligible {
        warn(
            warnings,
            WarningCode::NegligibleCovariateShift,
            format!(
                "domain classifier AUROC {:.3} is below the negligible threshold",
                g3.auroc
            ),
        );
    }
    if !g3.classifier.converged {
        warn(
            warnings,
            WarningCode::ClassifierNotConverged,
            format!(
                "IRLS stopped after {} iterations without converging",
                g3.classifier.iterations
            ),
        );
    }
    if g3.classifier.separation_unstable {
        warn(
            warnings,
            WarningCode::SeparationUnstable,
            "domain classifier coefficients are very large; periods are nearly separable",
        );
    }
    if g3.single_segment {
        warn(
            warnings,
            WarningCode::SingleSegmentDomain,
            "common support has a single segment; classifier uses covariates only",
        );
    }
    if g3.weight_stats.fraction_clipped > 0.0 {
        warn(
            warnings,
            WarningCode::WeightsClipped,
            format!(
                "{:.2}% of covariate weights were clipped",
                100.0 * g3.weight_stats.fraction_clipped
            ),
        );
    }
}

/// Runs the full diagnostic on a reference/current pair.
pub fn run_diagnosis(
    reference: &PeriodSample,
    current: &PeriodSample,
    config: &GovernanceConfig,
) -> Result<Diagnosis, ConfigError> {
    config.validate()?;
    let trace = config.full_trace;
    let mut warnings = Vec::new();
    let mut codes = Vec::new();

    let provenance = Provenance {
        tool: "ksgate".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        reference_digest: reference.digest(),
        current_digest: current.digest(),
        n_ref: reference.len(),
        n_cur: current.len(),
        full_trace: trace,
        conventions: CONVENTIONS.iter().map(|s| s.to_string()).collect(),
    };
    let finish = |gate1, gate2, gate3, final_diagnosis, codes, warnings, bootstrap| Diagnosis {
        report: DiagnosticReport {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            gate1,
            gate2,
            gate3,
            final_diagnosis,
            advisory_codes: codes,
            warnings,
            provenance: provenance.clone(),
        },
        bootstrap,
    };

    let (gate1, dist) = match run_gate1(reference, current, config) {
        Ok(r) => r,
        Err(e) => {
            warn(&mut warnings, WarningCode::Step1Degenerate, e.to_string());
            codes.push(AdvisoryCode::ManualReview);
            return Ok(finish(
                None,
                None,
                None,
                FinalDiagnosis::DegenerateStopped,
                codes,
                warnings,
                None,
            ));
        }
    };
    if gate1.degenerate_warning {
        warn(
            &mut warnings,
            WarningCode::DegenerateReplicates,
            format!(
                "{} of {} bootstrap replicates were degenerate",
                gate1.replicates_dropped, gate1.replicates_requested
            ),
        );
    }
    if gate1.table_extension {
        warn(
            &mut warnings,
            WarningCode::DecisionTableExtension,
            "interval falls outside the four listed decision rows; classified conservatively",
        );
    }

    let step2_needed = gate1.classification == Gate1Class::ConfirmedBreach;
    let mut final_diagnosis = match gate1.classification {
        Gate1Class::NoDeterioration => {
            codes.push(AdvisoryCode::NoFurtherAnalysis);
            Some(FinalDiagnosis::NoActionSamplingVariation)
        }
        Gate1Class::SignificantNoBreach => {
            codes.push(AdvisoryCode::NoFurtherAnalysis);
            Some(FinalDiagnosis::SignificantNoBreach)
        }
        Gate1Class::BreachNotConfirmed => {
            codes.push(AdvisoryCode::IncreaseMonitoringFrequency);
            Some(FinalDiagnosis::MonitorBreachNotConfirmed)
        }
        Gate1Class::ConfirmedBreach => {
            codes.push(AdvisoryCode::RootCauseAnalysis);
            None
        }
    };

    let gate2 = if step2_needed || trace {
        match decompose(reference, current, config) {
            Ok(d) => Some(d),
            Err(e) => {
                warn(&mut warnings, WarningCode::Step2Degenerate, e.to_string());
                if step2_needed {
                    codes.push(AdvisoryCode::ManualReview);
                    final_diagnosis = Some(FinalDiagnosis::DegenerateStopped);
                }
                None
            }
        }
    } else {
        None
    };
    if let Some(d) = &gate2 {
        if !d.partition.thin.is_empty() {
            let names: Vec<&str> = d.partition.thin.iter().map(|g| g.as_str()).collect();
            warn(
                &mut warnings,
                WarningCode::ThinSegmentsExcluded,
                format!(
                    "segments below {} observations excluded from common support: {}",
                    config.min_segment_count,
                    names.join(", ")
                ),
            );
        }
    }

    let mut step3_needed = false;
    if let (Some(d), None) = (&gate2, final_diagnosis) {
        composition_advisories(d, &mut codes);
        match d.gateway {
            Gate2Gateway::ExplainedByComposition => {
                final_diagnosis = Some(FinalDiagnosis::ExplainedByComposition)
            }
            Gate2Gateway::EscalateToStep3 => {
                codes.push(AdvisoryCode::CovariateShiftInvestigation);
                step3_needed = true;
            }
        }
    }

    let gate3 = match &gate2 {
        Some(d) if step3_needed || trace => match run_gate3(reference, current, d, config) {
            Ok(g) => Some(g),
            Err(e) => {
                let code = if e == Gate3Error::NoCovariates {
                    WarningCode::NoCovariates
                } else {
                    WarningCode::Step3Degenerate
                };
                warn(&mut warnings, code, e.to_string());
                if step3_needed {
                    codes.push(AdvisoryCode::ManualReview);
                    final_diagnosis = Some(FinalDiagnosis::DegenerateStopped);
                }
                None
            }
        },
        _ => None,
    };
    if let Some(g3) = &gate3 {
        gate3_warnings(g3, &mut warnings);
        if step3_needed {
            match g3.gateway {
                Gate3Gateway::ExplainedByCovariateShift => {
                    codes.push(AdvisoryCode::CovariateShiftMonitoring);
                    final_diagnosis = Some(FinalDiagnosis::ExplainedByCovariateShift);
                }
                Gate3Gateway::EscalateToStep4 => {
                    codes.extend([
                        AdvisoryCode::ModelRecalibrationReview,
                        AdvisoryCode::ChallengerModelAnalysis,
                        AdvisoryCode::FeatureReview,
                        AdvisoryCode::SegmentationRedesignReview,
                        AdvisoryCode::ModelRedevelopmentReview,
                    ]);
                    final_diagnosis = Some(FinalDiagnosis::ModelDegradationEscalation);
                }
            }
        }
    }

    let final_diagnosis = final_diagnosis.expect("every path assigns a diagnosis");
    Ok(finish(
        Some(gate1),
        gate2,
        gate3,
        final_diagnosis,
        codes,
        warnings,
        Some(dist),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Observation, Period};

    fn tiny(period: Period, shift: f64) -> PeriodSample {
        let rows = (0..6000)
            .map(|i| {
                let bad = i % 3 == 0;
                let score = ((i * 37) % 101) as f64 / 10.0 + if bad { shift } else { 0.0 };
                Observation::new(
                    score,
                    Label::from_bit(bad),
                    if i % 2 == 0 { "A" } else { "B" },
                    vec![(i % 7) as f64],
                )
            })
            .collect();
        PeriodSample::new(period, rows).unwrap()
    }

    fn config() -> GovernanceConfig {
        GovernanceConfig {
            bootstrap: 200,
            ..GovernanceConfig::default()
        }
    }

    #[test]
    fn identical_periods_need_no_action() {
        let r = tiny(Period::Reference, 4.0);
        let c = tiny(Period::Current, 4.0);
        let d = run_diagnosis(&r, &c, &config()).unwrap();
        assert_eq!(
            d.report.final_diagnosis,
            FinalDiagnosis::NoActionSamplingVariation
        );
        assert!(d.report.gate2.is_none() && d.report.gate3.is_none());
        assert_eq!(d.report.advisory_codes, [AdvisoryCode::NoFurtherAnalysis]);
        d.report.check_structure().unwrap();
    }

    #[test]
    fn full_trace_keeps_final_diagnosis() {
        let r = tiny(Period::Reference, 4.0);
        let c = tiny(Period::Current, 4.0);
        let plain = run_diagnosis(&r, &c, &config()).unwrap().report;
        let traced = run_diagnosis(
            &r,
            &c,
            &GovernanceConfig {
                full_trace: true,
                ..config()
            },
        )
        .unwrap()
        .report;
        assert_eq!(plain.final_diagnosis, traced.final_diagnosis);
        assert_eq!(plain.advisory_codes, traced.advisory_codes);
        assert!(traced.gate2.is_some() && traced.gate3.is_some());
        traced.check_structure().unwrap();
    }

    #[test]
    fn collapsed_model_is_breach() {
        let r = tiny(Period::Reference, 6.0);
        let c = tiny(Period::Current, 0.5);
        let d = run_diagnosis(&r, &c, &config()).unwrap().report;
        assert_eq!(
            d.gate1.as_ref().unwrap().classification,
            Gate1Class::ConfirmedBreach
        );
        assert!(d.gate2.is_some());
        d.check_structure().unwrap();
    }

    #[test]
    fn invalid_config_is_rejected() {
        let r = tiny(Period::Reference, 4.0);
        let cfg = GovernanceConfig {
            alpha: 1.5,
            ..config()
        };
        assert!(run_diagnosis(&r, &r, &cfg).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(FinalDiagnosis::ExplainedByCovariateShift.exit_code(), 0);
        assert_eq!(FinalDiagnosis::MonitorBreachNotConfirmed.exit_code(), 2);
        assert_eq!(FinalDiagnosis::ModelDegradationEscalation.exit_code(), 3);
        assert_eq!(FinalDiagnosis::DegenerateStopped.exit_code(), 4);
    }
}
