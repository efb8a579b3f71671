//! JSON serialization and human-readable rendering of diagnostic reports.

use std::fmt::Write;

use serde_json::Value;
use thiserror::Error;

use crate::bootstrap::Gate1Class;
use crate::pipeline::{DiagnosticReport, SCHEMA_VERSION};

/// Significant digits kept for floating-point values in JSON output.
pub const JSON_SIGNIFICANT_DIGITS: usize = 10;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {found}; expected {expected}")]
    SchemaVersion { found: String, expected: u32 },
}

/// Rounds `x` to `JSON_SIGNIFICANT_DIGITS` significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", JSON_SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific notation parses back")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_significant(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// JSON value of `item` with floats rounded.
pub fn to_value<T: serde::Serialize>(item: &T) -> Value {
    let mut value = serde_json::to_value(item).expect("report serializes");
    round_floats(&mut value);
    value
}

/// Pretty JSON with floats rounded, terminated by a newline. Identical
/// reports produce identical bytes.
pub fn to_json(report: &DiagnosticReport) -> String {
    let mut text = serde_json::to_string_pretty(&to_value(report)).expect("value serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<DiagnosticReport, ReportError> {
    let value: Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        other => {
            return Err(ReportError::SchemaVersion {
                found: other.map_or_else(|| "missing".to_string(), |v| v.to_string()),
                expected: SCHEMA_VERSION,
            })
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

fn screaming<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Markdown summary for reviewers.
pub fn render_markdown(report: &DiagnosticReport) -> String {
    let mut out = String::new();
    let cfg = &report.config;
    let _ = writeln!(out, "# KS governance diagnostic\n");
    let _ = writeln!(
        out,
        "**Final diagnosis:** `{}`\n",
        screaming(&report.final_diagnosis)
    );
    let _ = writeln!(
        out,
        "Threshold tau = {}, alpha = {}, B = {}, seed = {}.\n",
        pct(cfg.tau),
        cfg.alpha,
        cfg.bootstrap,
        report.provenance.seed
    );

    if let Some(g1) = &report.gate1 {
        let _ = writeln!(out, "## Step 1: bootstrap significance\n");
        let _ = writeln!(out, "| | value |\n|---|---|");
        let _ = writeln!(out, "| KS reference | {:.4} |", g1.ks_ref.value);
        let _ = writeln!(out, "| KS current | {:.4} |", g1.ks_cur.value);
        let _ = writeln!(out, "| change | {} |", pct(g1.pct_change_observed));
        let _ = writeln!(
            out,
            "| {:.0}% CI | [{}, {}] |",
            100.0 * (1.0 - cfg.alpha),
            pct(g1.ci_low),
            pct(g1.ci_high)
        );
        let _ = writeln!(
            out,
            "| replicates used | {} of {} |\n",
            g1.replicates_used, g1.replicates_requested
        );
        let position = if g1.ci_high < cfg.tau {
            "entirely below tau"
        } else if g1.ci_low <= cfg.tau {
            "straddles tau"
        } else {
            "entirely above tau"
        };
        let _ = writeln!(
            out,
            "Interval {position}: `{}`.\n",
            screaming(&g1.classification)
        );
        if g1.classification != Gate1Class::ConfirmedBreach && report.gate2.is_some() {
            let _ = writeln!(out, "_Later steps shown for trace only._\n");
        }
    }

    if let Some(g2) = &report.gate2 {
        let _ = writeln!(out, "## Step 2: business composition\n");
        let _ = writeln!(
            out,
            "| component | KS points | share of KS ref |\n|---|---|---|"
        );
        let rows = [
            (
                "reference-only universe",
                g2.comp_ref_only,
                g2.pct_components.ref_only,
            ),
            (
                "mix within common support",
                g2.comp_mix,
                g2.pct_components.mix,
            ),
            (
                "residual aligned gap",
                g2.comp_residual,
                g2.pct_components.residual,
            ),
            (
                "current-only universe",
                g2.comp_cur_only,
                g2.pct_components.cur_only,
            ),
        ];
        for (name, value, share) in rows {
            let _ = writeln!(out, "| {name} | {value:+.4} | {} |", pct(share));
        }
        let _ = writeln!(
            out,
            "| **total** | {:+.4} | {} |\n",
            g2.ks_cur.value - g2.ks_ref.value,
            pct(g2.pct_change_total)
        );
        let _ = writeln!(
            out,
            "Common support: {} segment(s). Mix-adjusted reference KS {:.4}, current common KS {:.4}.\n",
            g2.partition.common.len(),
            g2.ks_mix_adjusted.value,
            g2.ks_cur_com.value
        );
        let _ = writeln!(
            out,
            "Aligned residual change {} vs tau {}: `{}`.\n",
            pct(g2.pct_aligned_residual),
            pct(cfg.tau),
            screaming(&g2.gateway)
        );
    }

    if let Some(g3) = &report.gate3 {
        let _ = writeln!(out, "## Step 3: covariate shift\n");
        let _ = writeln!(
            out,
            "Domain classifier AUROC {:.3}{}.\n",
            g3.auroc,
            if g3.shift_negligible {
                " (negligible shift)"
            } else {
                ""
            }
        );
        let s = &g3.weight_stats;
        let _ = writeln!(
            out,
            "Covariate weights: mean {:.3}, range [{:.3}, {:.3}], {:.2}% clipped.\n",
            s.mean,
            s.min,
            s.max,
            100.0 * s.fraction_clipped
        );
        let _ = writeln!(
            out,
            "KS mix-adjusted {:.4}, covariate-aligned {:.4}, current common {:.4}.\n",
            g3.ks_mix_adjusted.value, g3.ks_x_aligned.value, g3.ks_cur_com.value
        );
        let _ = writeln!(
            out,
            "Covariate-aligned change {} vs tau {}: `{}`.\n",
            pct(g3.pct_x_aligned),
            pct(cfg.tau),
            screaming(&g3.gateway)
        );
    }

    if !report.advisory_codes.is_empty() {
        let _ = writeln!(out, "## Advisory\n");
        for code in &report.advisory_codes {
            let _ = writeln!(out, "- `{}`", screaming(code));
        }
        out.push('\n');
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(out, "## Warnings\n");
        for w in &report.warnings {
            let _ = writeln!(out, "- `{}`: {}", screaming(&w.code), w.message);
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "Reference sha256 `{}` ({} rows), current sha256 `{}` ({} rows).",
        report.provenance.reference_digest,
        report.provenance.n_ref,
        report.provenance.current_digest,
        report.provenance.n_cur
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_significant(0.1 + 0.2), 0.3);
        assert_eq!(round_significant(1.234567890123e-7), 1.23456789e-7);
        assert_eq!(round_significant(-2.0), -2.0);
        assert_eq!(round_significant(0.0), 0.0);
        assert!(round_significant(f64::NAN).is_nan());
    }

    #[test]
    fn integers_untouched() {
        let mut v = serde_json::json!({"a": 12345678901234u64, "b": [0.1234567890123, 3]});
        round_floats(&mut v);
        assert_eq!(v["a"], 12345678901234u64);
        assert_eq!(v["b"][0].as_f64().unwrap(), 0.123456789);
        assert_eq!(v["b"][1], 3);
    }

    #[test]
    fn schema_version_checked() {
        let err = from_json(r#"{"schema_version": 7}"#).unwrap_err();
        assert!(matches!(err, ReportError::SchemaVersion { .. }));
        assert!(from_json("{").is_err());
    }
}
