//! Acceptance suite. Each test prints one `ACCEPTANCE Cn PASS|FAIL` line
//! to stderr (bypassing output capture) and then asserts.

use std::io::Write;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use ksgate_core::auroc::auroc;
use ksgate_core::bootstrap::run_gate1;
use ksgate_core::regime::decompose;
use ksgate_core::simgen::{CovariateShiftSpec, SegmentSpec, ShiftMode};
use ksgate_core::{
    builtin_scenario, generate, run_diagnosis, weighted_ks, FinalDiagnosis, Gate1Class,
    Gate2Gateway, GovernanceConfig, Label, Observation, Period, PeriodSample, ScenarioId,
    ScenarioSpec,
};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "ACCEPTANCE C{id:<2} {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn seed0() -> GovernanceConfig {
    GovernanceConfig {
        seed: 0,
        ..GovernanceConfig::default()
    }
}

fn random_period(rng: &mut ChaCha8Rng, period: Period, segments: &[(usize, f64)]) -> PeriodSample {
    let mut rows = Vec::new();
    for &(g, sep) in segments {
        let count = rng.random_range(30..=900);
        for i in 0..count {
            // both classes are guaranteed in every segment
            let bad = if i < 2 { i == 1 } else { rng.random_bool(0.3) };
            let noise: f64 = rng.random_range(-3.0..3.0);
            // coarse grid so that ties are common
            let score = ((noise + if bad { sep } else { 0.0 }) * 20.0).round() / 20.0;
            rows.push(Observation::new(
                score,
                Label::from_bit(bad),
                format!("G{g}"),
                vec![],
            ));
        }
    }
    PeriodSample::new(period, rows).unwrap()
}

#[test]
fn c01_telescoping_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = seed0();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let k = rng.random_range(1..=6);
        let mut ref_segs = Vec::new();
        let mut cur_segs = Vec::new();
        for g in 0..k {
            // each segment lives in ref only, cur only, or both
            let membership = if g == 0 { 2 } else { rng.random_range(0..3) };
            if membership != 1 {
                ref_segs.push((g, rng.random_range(0.0..3.0)));
            }
            if membership != 0 {
                cur_segs.push((g, rng.random_range(0.0..3.0)));
            }
        }
        let r = random_period(&mut rng, Period::Reference, &ref_segs);
        let c = random_period(&mut rng, Period::Current, &cur_segs);
        assert!(r.len() <= 5_400 && c.len() <= 5_400);
        let d = decompose(&r, &c, &cfg).unwrap();
        let gap = (d.components_sum() - (d.ks_cur.value - d.ks_ref.value)).abs();
        worst = worst.max(gap);
        checked += 1;
    }
    verdict(
        1,
        "telescoping identity",
        worst <= 1e-12,
        format!("1000 pairs, max |error| {worst:.2e}"),
    );
}

#[test]
fn c02_analytic_ks_oracle() {
    let std = Normal::standard();
    let mut details = Vec::new();
    let mut pass = true;
    for sep in [0.5, 1.0, 2.0, 2.5] {
        let spec = ScenarioSpec {
            segments: vec![SegmentSpec::new("ALL")
                .reference(1.0, sep)
                .current(1.0, sep)],
            covariate: CovariateShiftSpec::none(0),
            n_ref: 50_000,
            n_cur: 50_000,
            seed: 0,
        };
        let (r, _) = generate(&spec).unwrap();
        let goods: Vec<(f64, f64)> = r
            .observations()
            .iter()
            .filter(|o| !o.label.is_bad())
            .map(|o| (o.score, 1.0))
            .collect();
        let bads: Vec<(f64, f64)> = r
            .observations()
            .iter()
            .filter(|o| o.label.is_bad())
            .map(|o| (o.score, 1.0))
            .collect();
        let ks = weighted_ks(&goods, &bads).unwrap().value;
        let exact = 2.0 * std.cdf(sep / 2.0) - 1.0;
        pass &= (ks - exact).abs() <= 0.02;
        details.push(format!("sep {sep}: {ks:.4} vs {exact:.4}"));
    }
    verdict(2, "analytic KS oracle", pass, details.join(", "));
}

#[test]
fn c03_decision_table() {
    let cfg = GovernanceConfig {
        seed: 0,
        bootstrap: 1000,
        tau: -0.20,
        alpha: 0.05,
        ..GovernanceConfig::default()
    };
    let cases = [
        (ScenarioId::Step1Case1, Gate1Class::NoDeterioration),
        (ScenarioId::Step1Case2, Gate1Class::SignificantNoBreach),
        (ScenarioId::Step1Case3, Gate1Class::BreachNotConfirmed),
        (ScenarioId::Step1Case4, Gate1Class::ConfirmedBreach),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (id, expected) in cases {
        let (r, c) = generate(&builtin_scenario(id, 0)).unwrap();
        let (g1, _) = run_gate1(&r, &c, &cfg).unwrap();
        pass &= g1.classification == expected;
        details.push(format!(
            "{id} {:+.3} [{:+.3}, {:+.3}] {:?}",
            g1.pct_change_observed, g1.ci_low, g1.ci_high, g1.classification
        ));
    }
    verdict(3, "decision table", pass, details.join("; "));
}

fn s2(id: ScenarioId) -> ksgate_core::DecompositionResult {
    let (r, c) = generate(&builtin_scenario(id, 0)).unwrap();
    decompose(&r, &c, &seed0()).unwrap()
}

#[test]
fn c04_s2a_pure_mix_shift() {
    let d = s2(ScenarioId::S2A);
    let pass = (d.ks_ref.value - 0.598).abs() <= 0.02
        && (d.ks_cur.value - 0.458).abs() <= 0.02
        && d.pct_aligned_residual.abs() <= 0.05
        && d.gateway == Gate2Gateway::ExplainedByComposition;
    verdict(
        4,
        "S2-A pure mix shift",
        pass,
        format!(
            "KS {:.4} -> {:.4}, aligned {:+.4}, {:?}",
            d.ks_ref.value, d.ks_cur.value, d.pct_aligned_residual, d.gateway
        ),
    );
}

#[test]
fn c05_s2b_universe_change() {
    let d = s2(ScenarioId::S2B);
    let pass = (d.ks_ref.value - 0.689).abs() <= 0.02
        && (d.ks_cur.value - 0.550).abs() <= 0.02
        && d.pct_aligned_residual.abs() <= 0.05
        && d.comp_cur_only != 0.0
        && d.comp_ref_only != 0.0
        && d.gateway == Gate2Gateway::ExplainedByComposition;
    verdict(
        5,
        "S2-B universe change",
        pass,
        format!(
            "KS {:.4} -> {:.4}, aligned {:+.4}, cur-only {:+.4}, ref-only {:+.2e}, {:?}",
            d.ks_ref.value,
            d.ks_cur.value,
            d.pct_aligned_residual,
            d.comp_cur_only,
            d.comp_ref_only,
            d.gateway
        ),
    );
}

#[test]
fn c06_s2c_pure_residual() {
    let d = s2(ScenarioId::S2C);
    let total = d.ks_cur.value - d.ks_ref.value;
    let share = d.comp_residual / total;
    let pass = d.comp_cur_only == 0.0
        && d.comp_ref_only == 0.0
        && d.comp_mix.abs() <= 0.01
        && share >= 0.95
        && d.gateway == Gate2Gateway::EscalateToStep3;
    verdict(
        6,
        "S2-C pure residual",
        pass,
        format!(
            "universe comps {} / {}, mix {:+.4}, residual share {:.3}, {:?}",
            d.comp_cur_only, d.comp_ref_only, d.comp_mix, share, d.gateway
        ),
    );
}

#[test]
fn c07_s2d_mixed() {
    let d = s2(ScenarioId::S2D);
    let comps = [
        d.comp_cur_only,
        d.comp_residual,
        d.comp_mix,
        d.comp_ref_only,
    ];
    let pass = comps.iter().all(|&c| c != 0.0)
        && (d.pct_change_total + 0.165).abs() <= 0.04
        && (-0.12..=-0.03).contains(&d.pct_components.residual);
    verdict(
        7,
        "S2-D mixed drivers",
        pass,
        format!(
            "components {comps:+.4?}, total {:+.4}, residual share {:+.4}",
            d.pct_change_total, d.pct_components.residual
        ),
    );
}

fn s3(id: ScenarioId) -> ksgate_core::DiagnosticReport {
    let (r, c) = generate(&builtin_scenario(id, 0)).unwrap();
    run_diagnosis(&r, &c, &seed0()).unwrap().report
}

#[test]
fn c08_s3a_covariate_shift() {
    let rep = s3(ScenarioId::S3A);
    let g3 = rep.gate3.as_ref().expect("step 3 ran");
    let gap = (g3.ks_x_aligned.value - g3.ks_cur_com.value).abs();
    let pass = (g3.auroc - 0.772).abs() <= 0.04
        && gap <= 0.03
        && rep.final_diagnosis == FinalDiagnosis::ExplainedByCovariateShift;
    verdict(
        8,
        "S3-A covariate shift",
        pass,
        format!(
            "AUROC {:.4}, |KS_x - KS_cur_com| {gap:.4}, {:?}",
            g3.auroc, rep.final_diagnosis
        ),
    );
}

#[test]
fn c09_s3b_concept_drift() {
    let rep = s3(ScenarioId::S3B);
    let g2 = rep.gate2.as_ref().expect("step 2 ran");
    let g3 = rep.gate3.as_ref().expect("step 3 ran");
    let gap = (g3.ks_x_aligned.value - g2.ks_ref_com.value).abs();
    let pass = g3.auroc <= 0.70
        && gap <= 0.04
        && rep.final_diagnosis == FinalDiagnosis::ModelDegradationEscalation;
    verdict(
        9,
        "S3-B concept drift",
        pass,
        format!(
            "AUROC {:.4}, |KS_x - KS_ref_com| {gap:.4}, {:?}",
            g3.auroc, rep.final_diagnosis
        ),
    );
}

#[test]
fn c10_null_calibration() {
    let mut no_det = 0;
    let mut worst_weight: f64 = 0.0;
    let runs = 100;
    for seed in 0..runs {
        let spec = ScenarioSpec {
            segments: vec![
                SegmentSpec::new("A").reference(0.6, 2.0).current(0.6, 2.0),
                SegmentSpec::new("B").reference(0.4, 1.5).current(0.4, 1.5),
            ],
            covariate: CovariateShiftSpec {
                p: 2,
                highrisk_share_ref: 0.35,
                highrisk_share_cur: 0.35,
                highrisk_sep: None,
                mode: ShiftMode::None,
            },
            n_ref: 2_000,
            n_cur: 2_000,
            seed,
        };
        let (r, c) = generate(&spec).unwrap();
        let cfg = GovernanceConfig {
            seed,
            full_trace: true,
            ..GovernanceConfig::default()
        };
        let rep = run_diagnosis(&r, &c, &cfg).unwrap().report;
        if rep.gate1.as_ref().unwrap().classification == Gate1Class::NoDeterioration {
            no_det += 1;
        }
        let mean = rep.gate3.as_ref().expect("forced step 3").weight_stats.mean;
        worst_weight = worst_weight.max((mean - 1.0).abs());
    }
    let rate = no_det as f64 / runs as f64;
    verdict(
        10,
        "null calibration",
        rate >= 0.90 && worst_weight <= 0.05,
        format!("NoDeterioration {no_det}/{runs}, max |mean weight - 1| {worst_weight:.4}"),
    );
}

fn brute_ks(goods: &[f64], bads: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for &t in goods.iter().chain(bads) {
        let fg = goods.iter().filter(|&&s| s <= t).count() as f64 / goods.len() as f64;
        let fb = bads.iter().filter(|&&s| s <= t).count() as f64 / bads.len() as f64;
        best = best.max((fg - fb).abs());
    }
    best
}

fn brute_auroc(scores: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                let w = weights[i] * weights[j];
                den += w;
                num += w * match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

#[test]
fn c11_oracle_equivalences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut ks_err, mut auc_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..60);
        let mut scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 * 0.37)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..10.0)).collect();
        if rng.random_bool(0.2) {
            scores.iter_mut().for_each(|s| *s = rng.random::<f64>());
        }
        let goods: Vec<f64> = (0..n).filter(|&i| !labels[i]).map(|i| scores[i]).collect();
        let bads: Vec<f64> = (0..n).filter(|&i| labels[i]).map(|i| scores[i]).collect();
        let unit = |xs: &[f64]| xs.iter().map(|&s| (s, 1.0)).collect::<Vec<_>>();
        let fast = weighted_ks(&unit(&goods), &unit(&bads)).unwrap().value;
        ks_err = ks_err.max((fast - brute_ks(&goods, &bads)).abs());
        let a = auroc(&scores, &labels, &weights).unwrap();
        auc_err = auc_err.max((a - brute_auroc(&scores, &labels, &weights)).abs());
    }
    verdict(
        11,
        "oracle equivalences",
        ks_err <= 1e-12 && auc_err <= 1e-12,
        format!("500 instances, max KS error {ks_err:.2e}, max AUROC error {auc_err:.2e}"),
    );
}

fn selftest_json(threads: usize, dir: &std::path::Path, name: &str) -> Vec<u8> {
    let path = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_ksgate"))
        .args([
            "selftest",
            "--seed",
            "0",
            "--threads",
            &threads.to_string(),
            "-o",
        ])
        .arg(&path)
        .output()
        .expect("binary runs");
    assert!(
        status.status.success(),
        "selftest failed:\n{}",
        String::from_utf8_lossy(&status.stdout)
    );
    std::fs::read(path).unwrap()
}

#[test]
fn c12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let first = selftest_json(1, dir.path(), "a.json");
    let second = selftest_json(1, dir.path(), "b.json");
    let eight = selftest_json(8, dir.path(), "c.json");
    verdict(
        12,
        "determinism",
        first == second && first == eight,
        format!(
            "{} bytes; rerun identical {}, threads 1 vs 8 identical {}",
            first.len(),
            first == second,
            first == eight
        ),
    );
}
