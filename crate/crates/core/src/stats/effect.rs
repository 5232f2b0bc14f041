use serde::{Deserialize, Serialize};

use super::{check_values, StatsError};

/// `(#{x > y} - #{x < y}) / (|x| |y|)` over every pair.
pub fn cliffs_delta(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_values(x)?;
    check_values(y)?;
    let mut dominance: i64 = 0;
    for &a in x {
        for &b in y {
            dominance += match a.partial_cmp(&b).expect("finite") {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    Ok(dominance as f64 / (x.len() * y.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
        }
    }
}

/// Romano et al. thresholds: 0.147 / 0.33 / 0.474.
pub fn classify_delta(delta: f64) -> Magnitude {
    let a = delta.abs();
    if a < 0.147 {
        Magnitude::Negligible
    } else if a < 0.33 {
        Magnitude::Small
    } else if a < 0.474 {
        Magnitude::Medium
    } else {
        Magnitude::Large
    }
}
