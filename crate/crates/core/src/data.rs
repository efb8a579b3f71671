//! Core domain types and CSV ingestion.
//!
//! A portfolio period is a CSV file with the exact header
//! `score,label,segment` optionally followed by `x1,...,xp`. Validation is
//! fail-closed: unknown columns, non-finite numbers, labels other than the
//! literals `0`/`1` and single-class files are all rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("file is empty or has no data rows")]
    EmptyFile,
    #[error("missing column `{expected}` at position {position}")]
    MissingColumn { expected: String, position: usize },
    #[error("unexpected column `{0}`; only score,label,segment,x1..xp are accepted")]
    UnexpectedColumn(String),
    #[error("line {line}: score `{value}` is not a finite number")]
    NonFiniteScore { line: u64, value: String },
    #[error("line {line}: covariate `{value}` is not a finite number")]
    NonFiniteCovariate { line: u64, value: String },
    #[error("line {line}: label `{value}` is not 0 or 1")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedCovariates {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: segment `{value}` is empty or contains a reserved character")]
    BadSegment { line: u64, value: String },
    #[error("sample must contain at least one good and one bad observation")]
    SingleClassSample,
}

/// Outcome class of one account. `Bad` is the default event (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Good,
    Bad,
}

impl Label {
    pub fn from_bit(bad: bool) -> Self {
        if bad {
            Label::Bad
        } else {
            Label::Good
        }
    }

    pub fn is_bad(self) -> bool {
        self == Label::Bad
    }

    fn as_csv(self) -> &'static str {
        match self {
            Label::Good => "0",
            Label::Bad => "1",
        }
    }
}

/// Product, channel or regime identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(name: impl Into<String>) -> Self {
        SegmentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn is_valid(name: &str) -> bool {
        !name.is_empty() && !name.contains([',', '"', '\n', '\r'])
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub score: f64,
    pub label: Label,
    pub segment: SegmentId,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(
        score: f64,
        label: Label,
        segment: impl Into<SegmentId>,
        covariates: Vec<f64>,
    ) -> Self {
        Observation {
            score,
            label,
            segment: segment.into(),
            covariates,
        }
    }
}

impl From<String> for SegmentId {
    fn from(s: String) -> Self {
        SegmentId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Reference,
    Current,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Reference => f.write_str("reference"),
            Period::Current => f.write_str("current"),
        }
    }
}

/// A validated, immutable set of scored observations for one period.
#[derive(Debug, Clone)]
pub struct PeriodSample {
    period: Period,
    observations: Vec<Observation>,
    dim: usize,
    segments: BTreeSet<SegmentId>,
    source_digest: Option<String>,
}

impl PeriodSample {
    /// Validates and wraps `observations`. The covariate dimension is taken
    /// from the first row.
    pub fn new(period: Period, observations: Vec<Observation>) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::EmptyFile);
        }
        let dim = observations[0].covariates.len();
        let mut segments = BTreeSet::new();
        let (mut goods, mut bads) = (0usize, 0usize);
        for (i, obs) in observations.iter().enumerate() {
            let line = i as u64 + 1;
            if !obs.score.is_finite() {
                return Err(DataError::NonFiniteScore {
                    line,
                    value: obs.score.to_string(),
                });
            }
            if obs.covariates.len() != dim {
                return Err(DataError::RaggedCovariates {
                    line,
                    expected: dim + 3,
                    found: obs.covariates.len() + 3,
                });
            }
            if let Some(x) = obs.covariates.iter().find(|x| !x.is_finite()) {
                return Err(DataError::NonFiniteCovariate {
                    line,
                    value: x.to_string(),
                });
            }
            if !SegmentId::is_valid(obs.segment.as_str()) {
                return Err(DataError::BadSegment {
                    line,
                    value: obs.segment.to_string(),
                });
            }
            match obs.label {
                Label::Good => goods += 1,
                Label::Bad => bads += 1,
            }
            if !segments.contains(&obs.segment) {
                segments.insert(obs.segment.clone());
            }
        }
        if goods == 0 || bads == 0 {
            return Err(DataError::SingleClassSample);
        }
        Ok(PeriodSample {
            period,
            observations,
            dim,
            segments,
            source_digest: None,
        })
    }

    /// Builds a sample from rows already known to satisfy every invariant.
    pub(crate) fn from_trusted(period: Period, observations: Vec<Observation>, dim: usize) -> Self {
        let segments = observations.iter().map(|o| o.segment.clone()).collect();
        PeriodSample {
            period,
            observations,
            dim,
            segments,
            source_digest: None,
        }
    }

    pub fn period(&self) -> Period {
        self.period
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Covariate dimension `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segment_universe(&self) -> &BTreeSet<SegmentId> {
        &self.segments
    }

    pub fn segment_counts(&self) -> BTreeMap<SegmentId, usize> {
        let mut counts = BTreeMap::new();
        for obs in &self.observations {
            *counts.entry(obs.segment.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// `(n_good, n_bad)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let bads = self
            .observations
            .iter()
            .filter(|o| o.label.is_bad())
            .count();
        (self.observations.len() - bads, bads)
    }

    /// Rows whose segment is in `keep`, in original order.
    pub fn restrict_to(&self, keep: &BTreeSet<SegmentId>) -> Result<PeriodSample, DataError> {
        let rows: Vec<Observation> = self
            .observations
            .iter()
            .filter(|o| keep.contains(&o.segment))
            .cloned()
            .collect();
        if rows.is_empty() {
            return Err(DataError::EmptyFile);
        }
        let mut sample = PeriodSample::new(self.period, rows)?;
        sample.dim = self.dim;
        Ok(sample)
    }

    /// SHA-256 of the source file when loaded from disk, otherwise of the
    /// canonical CSV serialization.
    pub fn digest(&self) -> String {
        match &self.source_digest {
            Some(d) => d.clone(),
            None => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf)
                    .expect("writing to a Vec cannot fail");
                hex::encode(Sha256::digest(&buf))
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "score,label,segment")?;
        for j in 1..=self.dim {
            write!(out, ",x{j}")?;
        }
        writeln!(out)?;
        for obs in &self.observations {
            // `{}` on f64 prints the shortest string that parses back to the same bits.
            write!(out, "{},{},{}", obs.score, obs.label.as_csv(), obs.segment)?;
            for x in &obs.covariates {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let io_err = |source| DataError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut out = io::BufWriter::new(file);
        self.write_csv(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }
}

/// A period sample with one positive weight per observation.
#[derive(Debug, Clone)]
pub struct WeightedSample<'a> {
    base: &'a PeriodSample,
    weights: Vec<f64>,
}

impl<'a> WeightedSample<'a> {
    pub fn new(base: &'a PeriodSample, weights: Vec<f64>) -> Result<Self, WeightError> {
        if weights.len() != base.len() {
            return Err(WeightError::LengthMismatch {
                weights: weights.len(),
                rows: base.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(WeightError::NonPositive {
                index: i,
                value: weights[i],
            });
        }
        Ok(WeightedSample { base, weights })
    }

    pub fn unit(base: &'a PeriodSample) -> Self {
        WeightedSample {
            base,
            weights: vec![1.0; base.len()],
        }
    }

    pub fn base(&self) -> &'a PeriodSample {
        self.base
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a Observation, f64)> + '_ {
        self.base
            .observations
            .iter()
            .zip(self.weights.iter().copied())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("{weights} weights for {rows} observations")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("weight {index} is {value}; weights must be positive and finite")]
    NonPositive { index: usize, value: f64 },
}

/// Loads and validates one period from a CSV file.
pub fn load_period_csv(path: &Path, period: Period) -> Result<PeriodSample, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut sample = parse_period_csv(&bytes, period)?;
    sample.source_digest = Some(hex::encode(Sha256::digest(&bytes)));
    Ok(sample)
}

/// Parses CSV bytes in the portfolio format.
pub fn parse_period_csv(bytes: &[u8], period: Period) -> Result<PeriodSample, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(DataError::EmptyFile),
    };
    let dim = check_header(&header)?;
    let width = dim + 3;

    let mut rows = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(DataError::RaggedCovariates {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let score = parse_finite(&record[0]).ok_or_else(|| DataError::NonFiniteScore {
            line,
            value: record[0].to_string(),
        })?;
        let label = match &record[1] {
            "0" => Label::Good,
            "1" => Label::Bad,
            other => {
                return Err(DataError::BadLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let segment = &record[2];
        if !SegmentId::is_valid(segment) {
            return Err(DataError::BadSegment {
                line,
                value: segment.to_string(),
            });
        }
        let covariates = (3..width)
            .map(|j| {
                parse_finite(&record[j]).ok_or_else(|| DataError::NonFiniteCovariate {
                    line,
                    value: record[j].to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Observation::new(score, label, segment, covariates));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let mut sample = PeriodSample::new(period, rows)?;
    sample.dim = dim;
    Ok(sample)
}

fn check_header(header: &csv::StringRecord) -> Result<usize, DataError> {
    for (position, expected) in ["score", "label", "segment"].into_iter().enumerate() {
        if header.get(position) != Some(expected) {
            return Err(DataError::MissingColumn {
                expected: expected.to_string(),
                position,
            });
        }
    }
    for (j, name) in header.iter().enumerate().skip(3) {
        if name != format!("x{}", j - 2) {
            return Err(DataError::UnexpectedColumn(name.to_string()));
        }
    }
    Ok(header.len() - 3)
}

fn parse_finite(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}
