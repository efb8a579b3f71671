use std::collections::BTreeMap;

use proptest::prelude::*;

use ksgate_core::bootstrap::classify_gate1;
use ksgate_core::report::{from_json, render_markdown, to_json};
use ksgate_core::simgen::{CovariateShiftSpec, SegmentSpec, ShiftMode};
use ksgate_core::{
    builtin_scenario, generate, load_period_csv, parse_period_csv, run_diagnosis, FinalDiagnosis,
    GovernanceConfig, Label, Observation, Period, PeriodSample, ScenarioId, ScenarioSpec,
    SegmentId,
};

fn small(id: ScenarioId, seed: u64, n: usize) -> (PeriodSample, PeriodSample) {
    let mut spec = builtin_scenario(id, seed);
    spec.n_ref = n;
    spec.n_cur = n;
    generate(&spec).unwrap()
}

fn quick(seed: u64) -> GovernanceConfig {
    GovernanceConfig {
        seed,
        bootstrap: 200,
        ..GovernanceConfig::default()
    }
}

#[test]
fn structure_holds_with_and_without_trace() {
    for id in ScenarioId::ALL {
        let (r, c) = small(id, 3, 3_000);
        let plain = run_diagnosis(&r, &c, &quick(3)).unwrap().report;
        plain
            .check_structure()
            .unwrap_or_else(|e| panic!("{id}: {e}"));
        let traced = run_diagnosis(
            &r,
            &c,
            &GovernanceConfig {
                full_trace: true,
                ..quick(3)
            },
        )
        .unwrap()
        .report;
        traced
            .check_structure()
            .unwrap_or_else(|e| panic!("{id} traced: {e}"));
        assert_eq!(plain.final_diagnosis, traced.final_diagnosis, "{id}");
        assert_eq!(plain.advisory_codes, traced.advisory_codes, "{id}");
        assert_eq!(plain.gate1, traced.gate1);
    }
}

#[test]
fn parallelism_does_not_change_reports() {
    let (r, c) = small(ScenarioId::S2D, 5, 4_000);
    let one = run_diagnosis(
        &r,
        &c,
        &GovernanceConfig {
            parallelism: 1,
            ..quick(5)
        },
    )
    .unwrap();
    let four = run_diagnosis(
        &r,
        &c,
        &GovernanceConfig {
            parallelism: 4,
            ..quick(5)
        },
    )
    .unwrap();
    assert_eq!(to_json(&one.report), to_json(&four.report));
    assert_eq!(one.bootstrap, four.bootstrap);
}

#[test]
fn report_json_round_trip_is_stable() {
    let (r, c) = small(ScenarioId::S3A, 1, 4_000);
    let rep = run_diagnosis(
        &r,
        &c,
        &GovernanceConfig {
            full_trace: true,
            ..quick(1)
        },
    )
    .unwrap()
    .report;
    let text = to_json(&rep);
    let back = from_json(&text).unwrap();
    assert_eq!(to_json(&back), text);
    assert!(text.contains("\"final_diagnosis\": \"EXPLAINED_BY_COVARIATE_SHIFT\""));
    assert!(!text.contains("parallelism"));
}

#[test]
fn halted_summary_omits_later_steps() {
    let (r, c) = small(ScenarioId::Step1Case2, 0, 5_000);
    let rep = run_diagnosis(&r, &c, &quick(0)).unwrap().report;
    assert!(rep.gate2.is_none());
    let md = render_markdown(&rep);
    assert!(md.contains("Step 1"));
    assert!(!md.contains("Step 2") && !md.contains("Step 3"));
}

#[test]
fn waterfall_rows_sum_to_total() {
    let (r, c) = small(ScenarioId::S2D, 0, 20_000);
    let rep = run_diagnosis(
        &r,
        &c,
        &GovernanceConfig {
            full_trace: true,
            ..quick(0)
        },
    )
    .unwrap()
    .report;
    let g2 = rep.gate2.as_ref().unwrap();
    let comps = [
        g2.comp_ref_only,
        g2.comp_mix,
        g2.comp_residual,
        g2.comp_cur_only,
    ];
    assert!(comps.iter().all(|&v| v != 0.0));
    assert!((comps.iter().sum::<f64>() - (g2.ks_cur.value - g2.ks_ref.value)).abs() < 1e-12);
    let md = render_markdown(&rep);
    for name in [
        "reference-only universe",
        "mix within common support",
        "residual aligned gap",
        "current-only universe",
    ] {
        assert!(md.contains(name), "{name}");
    }
}

#[test]
fn mix_weighted_reference_reproduces_current_shares() {
    let (r, c) = small(ScenarioId::S2A, 2, 10_000);
    let d = ksgate_core::regime::decompose(&r, &c, &quick(2)).unwrap();
    let mut mass: BTreeMap<SegmentId, f64> = BTreeMap::new();
    for o in r.observations() {
        *mass.entry(o.segment.clone()).or_default() += d.mix_weights.weight[&o.segment];
    }
    let total: f64 = mass.values().sum();
    for (g, m) in mass {
        assert!((m / total - d.mix_weights.shares_cur[&g]).abs() < 1e-12);
    }
}

#[test]
fn covariate_reweighting_moves_toward_current() {
    for seed in 0..5 {
        let (r, c) = small(ScenarioId::S3A, seed, 8_000);
        let rep = run_diagnosis(
            &r,
            &c,
            &GovernanceConfig {
                full_trace: true,
                ..quick(seed)
            },
        )
        .unwrap()
        .report;
        let g3 = rep.gate3.unwrap();
        let before = (g3.ks_mix_adjusted.value - g3.ks_cur_com.value).abs();
        let after = (g3.ks_x_aligned.value - g3.ks_cur_com.value).abs();
        assert!(after < before, "seed {seed}: {after} vs {before}");
        assert!(g3.auroc > 0.7);
    }
}

#[test]
fn zero_covariates_stop_when_step3_is_needed() {
    let spec = ScenarioSpec {
        segments: vec![SegmentSpec::new("ALL")
            .reference(1.0, 2.5)
            .current(1.0, 0.8)],
        covariate: CovariateShiftSpec {
            p: 0,
            highrisk_share_ref: 0.5,
            highrisk_share_cur: 0.5,
            highrisk_sep: None,
            mode: ShiftMode::None,
        },
        n_ref: 3_000,
        n_cur: 3_000,
        seed: 0,
    };
    let (r, c) = generate(&spec).unwrap();
    let rep = run_diagnosis(&r, &c, &quick(0)).unwrap().report;
    assert_eq!(rep.final_diagnosis, FinalDiagnosis::DegenerateStopped);
    assert!(rep.gate2.is_some() && rep.gate3.is_none());
    rep.check_structure().unwrap();
}

#[test]
fn single_class_period_is_rejected_at_load() {
    let rows = |bad_too: bool| {
        (0..50)
            .map(|i| {
                let bad = bad_too && i % 2 == 0;
                Observation::new(i as f64, Label::from_bit(bad), "A", vec![0.0])
            })
            .collect::<Vec<_>>()
    };
    assert!(PeriodSample::new(Period::Reference, rows(true)).is_ok());
    assert!(PeriodSample::new(Period::Current, rows(false)).is_err());
}

#[test]
fn file_digest_matches_canonical_digest() {
    let (r, _) = small(ScenarioId::S2B, 0, 500);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.csv");
    r.save_csv(&path).unwrap();
    let loaded = load_period_csv(&path, Period::Reference).unwrap();
    assert_eq!(loaded.observations(), r.observations());
    assert_eq!(loaded.digest(), r.digest());
    assert!(load_period_csv(&dir.path().join("missing.csv"), Period::Reference).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(
        rows in prop::collection::vec(
            (-1e6f64..1e6, any::<bool>(), 0usize..4, prop::collection::vec(-1e3f64..1e3, 2)),
            2..80,
        )
    ) {
        let mut obs: Vec<Observation> = rows
            .iter()
            .map(|(s, b, g, x)| Observation::new(*s, Label::from_bit(*b), format!("seg{g}"), x.clone()))
            .collect();
        obs[0].label = Label::Good;
        obs[1].label = Label::Bad;
        let sample = PeriodSample::new(Period::Current, obs).unwrap();
        let mut buf = Vec::new();
        sample.write_csv(&mut buf).unwrap();
        let back = parse_period_csv(&buf, Period::Current).unwrap();
        prop_assert_eq!(back.observations(), sample.observations());
        prop_assert_eq!(back.digest(), sample.digest());
    }

    #[test]
    fn severity_is_monotone_in_tau(a in -1.0f64..0.5, w in 0.0f64..0.6, t1 in -0.9f64..-0.01, t2 in -0.9f64..-0.01) {
        let (lo, hi) = (a, a + w);
        let (small_tau, big_tau) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        // a stricter (higher) threshold never yields a milder verdict
        prop_assert!(classify_gate1(lo, hi, big_tau).severity() >= classify_gate1(lo, hi, small_tau).severity());
    }
}
