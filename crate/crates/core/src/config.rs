//! Governance configuration and its flat `key = value` file format.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Bounds applied to covariate-shift weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightClip {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceConfig {
    /// Breach threshold on the KS percentage change, as a negative fraction.
    pub tau: f64,
    pub alpha: f64,
    /// Bootstrap replicate count `B`.
    pub bootstrap: usize,
    pub seed: u64,
    pub min_segment_count: usize,
    pub weight_clip: WeightClip,
    pub auroc_negligible: f64,
    /// Worker threads, 0 = all cores. Results never depend on it, so it is
    /// left out of serialized reports.
    #[serde(skip, default)]
    pub parallelism: usize,
    /// Run Steps 2 and 3 even when an earlier gateway halts.
    pub full_trace: bool,
    /// Fraction of the domain dataset held out for AUROC evaluation (0 = none).
    pub holdout_fraction: f64,
}

impl Default for GovernanceConfig {
    fn default() -> Self {
        GovernanceConfig {
            tau: -0.20,
            alpha: 0.05,
            bootstrap: 1000,
            seed: 0,
            min_segment_count: 30,
            weight_clip: WeightClip {
                low: 0.01,
                high: 100.0,
            },
            auroc_negligible: 0.55,
            parallelism: 0,
            full_trace: false,
            holdout_fraction: 0.0,
        }
    }
}

impl GovernanceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if !(self.tau < 0.0 && self.tau.is_finite()) {
            return fail("tau must be negative");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if self.bootstrap == 0 {
            return fail("bootstrap must be at least 1");
        }
        if self.min_segment_count == 0 {
            return fail("min_segment_count must be positive");
        }
        let WeightClip { low, high } = self.weight_clip;
        if !(low > 0.0 && low <= 1.0 && high >= 1.0 && high.is_finite()) {
            return fail("weight_clip must satisfy 0 < low <= 1 <= high");
        }
        if !(0.5..1.0).contains(&self.auroc_negligible) {
            return fail("auroc_negligible must lie in [0.5, 1)");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    pub fn from_file_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = GovernanceConfig::default();
        cfg.apply_file(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration in the file format; `from_file_text`
    /// reads it back unchanged.
    pub fn to_file_text(&self) -> String {
        format!(
            "tau = {}\nalpha = {}\nbootstrap = {}\nseed = {}\nmin_segment_count = {}\n\
             weight_clip = {}, {}\nauroc_negligible = {}\nparallelism = {}\nfull_trace = {}\n\
             holdout_fraction = {}\n",
            self.tau,
            self.alpha,
            self.bootstrap,
            self.seed,
            self.min_segment_count,
            self.weight_clip.low,
            self.weight_clip.high,
            self.auroc_negligible,
            self.parallelism,
            self.full_trace,
            self.holdout_fraction,
        )
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        fn num<T: FromStr>(v: &str) -> Option<T> {
            v.parse().ok()
        }
        match key {
            "tau" => self.tau = num(value).ok_or_else(bad)?,
            "alpha" => self.alpha = num(value).ok_or_else(bad)?,
            "bootstrap" => self.bootstrap = num(value).ok_or_else(bad)?,
            "seed" => self.seed = num(value).ok_or_else(bad)?,
            "min_segment_count" => self.min_segment_count = num(value).ok_or_else(bad)?,
            "weight_clip" => {
                let (lo, hi) = value.split_once(',').ok_or_else(bad)?;
                self.weight_clip = WeightClip {
                    low: num(lo.trim()).ok_or_else(bad)?,
                    high: num(hi.trim()).ok_or_else(bad)?,
                };
            }
            "auroc_negligible" => self.auroc_negligible = num(value).ok_or_else(bad)?,
            "parallelism" => self.parallelism = num(value).ok_or_else(bad)?,
            "full_trace" => self.full_trace = num(value).ok_or_else(bad)?,
            "holdout_fraction" => self.holdout_fraction = num(value).ok_or_else(bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = GovernanceConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tau, -0.20);
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.bootstrap, 1000);
    }

    #[test]
    fn file_round_trip() {
        let mut cfg = GovernanceConfig {
            tau: -0.15,
            seed: 42,
            full_trace: true,
            ..Default::default()
        };
        cfg.weight_clip = WeightClip {
            low: 0.05,
            high: 20.0,
        };
        let back = GovernanceConfig::from_file_text(&cfg.to_file_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg =
            GovernanceConfig::from_file_text("# audit config\n\ntau = -0.1 # looser\nseed=9\n")
                .unwrap();
        assert_eq!(cfg.tau, -0.1);
        assert_eq!(cfg.seed, 9);
        assert!(matches!(
            GovernanceConfig::from_file_text("taux = 1"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            GovernanceConfig::from_file_text("tau"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            GovernanceConfig::from_file_text("bootstrap = -3"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            GovernanceConfig::from_file_text("tau = 0.2"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            GovernanceConfig::from_file_text("weight_clip = 2, 100"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
