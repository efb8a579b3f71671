//! Built-in scenario suite with tolerance bands.

use serde::Serialize;

use crate::bootstrap::Gate1Class;
use crate::config::GovernanceConfig;
use crate::pipeline::{run_diagnosis, DiagnosticReport, FinalDiagnosis};
use crate::regime::Gate2Gateway;
use crate::simgen::{builtin_scenario, generate, ScenarioId, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCheck {
    pub scenario: ScenarioId,
    pub name: String,
    pub observed: String,
    pub expected: String,
    pub pass: bool,
}

fn within(scenario: ScenarioId, name: &str, observed: f64, center: f64, tol: f64) -> BandCheck {
    BandCheck {
        scenario,
        name: name.into(),
        observed: format!("{observed:.4}"),
        expected: format!("{center} ± {tol}"),
        pass: (observed - center).abs() <= tol,
    }
}

fn range(scenario: ScenarioId, name: &str, observed: f64, lo: f64, hi: f64) -> BandCheck {
    BandCheck {
        scenario,
        name: name.into(),
        observed: format!("{observed:.4}"),
        expected: format!("[{lo}, {hi}]"),
        pass: (lo..=hi).contains(&observed),
    }
}

fn equals<T: PartialEq + std::fmt::Debug>(
    scenario: ScenarioId,
    name: &str,
    observed: T,
    expected: T,
) -> BandCheck {
    BandCheck {
        scenario,
        name: name.into(),
        observed: format!("{observed:?}"),
        expected: format!("{expected:?}"),
        pass: observed == expected,
    }
}

fn missing(scenario: ScenarioId, name: &str) -> BandCheck {
    BandCheck {
        scenario,
        name: name.into(),
        observed: "absent".into(),
        expected: "present".into(),
        pass: false,
    }
}

/// Configuration the suite runs under: defaults plus `seed`, with Steps 2
/// and 3 always traced.
pub fn suite_config(seed: u64, parallelism: usize) -> GovernanceConfig {
    GovernanceConfig {
        seed,
        parallelism,
        full_trace: true,
        ..GovernanceConfig::default()
    }
}

pub fn run_scenario(
    id: ScenarioId,
    config: &GovernanceConfig,
) -> Result<DiagnosticReport, SimError> {
    let (r, c) = generate(&builtin_scenario(id, config.seed))?;
    Ok(run_diagnosis(&r, &c, config)
        .expect("suite configuration is valid")
        .report)
}

/// Band checks for one scenario's report.
pub fn check_bands(id: ScenarioId, report: &DiagnosticReport) -> Vec<BandCheck> {
    use ScenarioId::*;
    let mut out = Vec::new();
    let class = report.gate1.as_ref().map(|g| g.classification);
    let step1 = |expected| equals(id, "gate1 classification", class, Some(expected));
    match id {
        Step1Case1 => out.push(step1(Gate1Class::NoDeterioration)),
        Step1Case2 => out.push(step1(Gate1Class::SignificantNoBreach)),
        Step1Case3 => out.push(step1(Gate1Class::BreachNotConfirmed)),
        Step1Case4 => out.push(step1(Gate1Class::ConfirmedBreach)),
        S2A | S2B | S2C | S2D => {
            let Some(g2) = &report.gate2 else {
                out.push(missing(id, "gate2"));
                return out;
            };
            match id {
                S2A | S2B => {
                    let (r, c) = if id == S2A {
                        (0.598, 0.458)
                    } else {
                        (0.689, 0.550)
                    };
                    out.push(within(id, "KS_ref", g2.ks_ref.value, r, 0.02));
                    out.push(within(id, "KS_cur", g2.ks_cur.value, c, 0.02));
                    out.push(within(
                        id,
                        "aligned residual change",
                        g2.pct_aligned_residual,
                        0.0,
                        0.05,
                    ));
                    out.push(equals(
                        id,
                        "gateway",
                        g2.gateway,
                        Gate2Gateway::ExplainedByComposition,
                    ));
                    if id == S2B {
                        out.push(equals(
                            id,
                            "cur-only component nonzero",
                            g2.comp_cur_only != 0.0,
                            true,
                        ));
                        out.push(equals(
                            id,
                            "ref-only component nonzero",
                            g2.comp_ref_only != 0.0,
                            true,
                        ));
                    }
                }
                S2C => {
                    out.push(equals(id, "cur-only component", g2.comp_cur_only, 0.0));
                    out.push(equals(id, "ref-only component", g2.comp_ref_only, 0.0));
                    out.push(range(id, "mix component", g2.comp_mix, -0.01, 0.01));
                    let total = g2.ks_cur.value - g2.ks_ref.value;
                    out.push(range(
                        id,
                        "residual share of change",
                        g2.comp_residual / total,
                        0.95,
                        f64::INFINITY,
                    ));
                    out.push(equals(
                        id,
                        "gateway",
                        g2.gateway,
                        Gate2Gateway::EscalateToStep3,
                    ));
                }
                _ => {
                    let all_nonzero = [
                        g2.comp_cur_only,
                        g2.comp_residual,
                        g2.comp_mix,
                        g2.comp_ref_only,
                    ]
                    .iter()
                    .all(|&c| c != 0.0);
                    out.push(equals(id, "all components nonzero", all_nonzero, true));
                    out.push(within(
                        id,
                        "total change",
                        g2.pct_change_total,
                        -0.165,
                        0.04,
                    ));
                    out.push(range(
                        id,
                        "residual share of KS_ref",
                        g2.pct_components.residual,
                        -0.12,
                        -0.03,
                    ));
                }
            }
        }
        S3A | S3B => {
            let (Some(g2), Some(g3)) = (&report.gate2, &report.gate3) else {
                out.push(missing(id, "gate3"));
                return out;
            };
            if id == S3A {
                out.push(within(id, "domain AUROC", g3.auroc, 0.772, 0.04));
                out.push(range(
                    id,
                    "|KS_x - KS_cur_com|",
                    (g3.ks_x_aligned.value - g3.ks_cur_com.value).abs(),
                    0.0,
                    0.03,
                ));
                out.push(equals(
                    id,
                    "final diagnosis",
                    report.final_diagnosis,
                    FinalDiagnosis::ExplainedByCovariateShift,
                ));
            } else {
                out.push(range(id, "domain AUROC", g3.auroc, 0.0, 0.70));
                out.push(range(
                    id,
                    "|KS_x - KS_ref_com|",
                    (g3.ks_x_aligned.value - g2.ks_ref_com.value).abs(),
                    0.0,
                    0.04,
                ));
                out.push(equals(
                    id,
                    "final diagnosis",
                    report.final_diagnosis,
                    FinalDiagnosis::ModelDegradationEscalation,
                ));
            }
        }
    }
    out
}
