use serde::{Deserialize, Serialize};

use super::{describe, StatsError};

/// Absolute and relative overhead of a tool against the no-tool baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub baseline_median: f64,
    pub tool_median: f64,
    pub delta_t: f64,
    /// Percent of the baseline median; negative when the tool run was faster.
    pub pct_delta: f64,
}

pub fn overhead_from_medians(baseline_median: f64, tool_median: f64) -> OverheadRow {
    let delta_t = tool_median - baseline_median;
    OverheadRow { baseline_median, tool_median, delta_t, pct_delta: 100.0 * delta_t / baseline_median }
}

pub fn overhead(baseline: &[f64], tool: &[f64]) -> Result<OverheadRow, StatsError> {
    let b = describe(baseline)?.median;
    let t = describe(tool)?.median;
    Ok(overhead_from_medians(b, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_groups() {
        let r = overhead(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!((r.delta_t, r.pct_delta), (0.0, 0.0));
    }

    #[test]
    fn negative_preserved() {
        let r = overhead(&[196.21], &[194.84]).unwrap();
        assert!((r.delta_t + 1.37).abs() < 1e-9);
        assert!((r.pct_delta + 0.698).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn sign_and_scale(b in proptest::collection::vec(1.0f64..100.0, 1..10),
                          t in proptest::collection::vec(1.0f64..100.0, 1..10),
                          c in 0.01f64..100.0) {
            let r = overhead(&b, &t).unwrap();
            prop_assert_eq!(r.pct_delta.signum() == r.delta_t.signum() || r.delta_t == 0.0, true);
            let bs: Vec<f64> = b.iter().map(|v| v * c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
            let rs = overhead(&bs, &ts).unwrap();
            prop_assert!((rs.delta_t - c * r.delta_t).abs() <= 1e-9 * (1.0 + (c * r.delta_t).abs()) * 100.0);
            prop_assert!((rs.pct_delta - r.pct_delta).abs() <= 1e-9 * (1.0 + r.pct_delta.abs()) * 100.0);
        }
    }
}
