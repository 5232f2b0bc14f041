//! Overhead analysis statistics.
//!
//! Descriptive statistics with linear-interpolation quantiles, the
//! Shapiro–Wilk normality test (Royston's AS R94 approximation),
//! Kruskal–Wallis and Dunn's post hoc test on pooled midranks with a ties
//! correction and Bonferroni adjustment, Cliff's delta by full enumeration,
//! and absolute/relative overhead against a baseline median.

mod descriptive;
mod effect;
mod overhead;
mod rank;
pub mod report;
mod shapiro;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptive::{describe, quantile_sorted, Describe};
pub use effect::{classify_delta, cliffs_delta, Magnitude};
pub use overhead::{overhead, overhead_from_medians, OverheadRow};
pub use rank::{bonferroni, dunn_posthoc, kruskal_wallis, midranks, DunnResult};
pub use shapiro::shapiro_wilk;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("sample size {0} outside the supported range 3..=5000")]
    SampleSizeOutOfRange(usize),
    #[error("sample has zero range; statistic undefined")]
    DegenerateSample,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    ShapiroWilk,
    KruskalWallis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

/// A labelled set of observations (one tool–benchmark pair, or one op kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    pub values: Vec<f64>,
}

impl Group {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        check_values(&values)?;
        Ok(Group { label: label.into(), values })
    }
}

pub(crate) fn check_values(values: &[f64]) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}
