use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{check_values, StatsError, TestMethod, TestResult};

/// Midranks (1-based) of `values` and the tie term `sum(t^3 - t)` over tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

struct Pooled {
    n_total: f64,
    sizes: Vec<f64>,
    rank_sums: Vec<f64>,
    ties: f64,
}

fn pool<G: AsRef<[f64]>>(groups: &[G]) -> Result<Pooled, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for g in groups {
        check_values(g.as_ref())?;
    }
    let all: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    let (ranks, ties) = midranks(&all);
    let mut rank_sums = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        let n = g.as_ref().len();
        rank_sums.push(ranks[offset..offset + n].iter().sum());
        offset += n;
    }
    Ok(Pooled {
        n_total: all.len() as f64,
        sizes: groups.iter().map(|g| g.as_ref().len() as f64).collect(),
        rank_sums,
        ties,
    })
}

/// Kruskal–Wallis H with ties correction; p from chi-squared, k - 1 df.
pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestResult, StatsError> {
    let p = pool(groups)?;
    let n = p.n_total;
    let sum: f64 = p.rank_sums.iter().zip(&p.sizes).map(|(r, n_i)| r * r / n_i).sum();
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let correction = 1.0 - p.ties / (n * n * n - n);
    let h = if correction <= 0.0 { 0.0 } else { (h_raw / correction).max(0.0) };
    let df = (groups.len() - 1) as f64;
    let p_value = if h == 0.0 { 1.0 } else { ChiSquared::new(df).expect("df >= 1").sf(h).clamp(0.0, 1.0) };
    Ok(TestResult { statistic: h, p_value, method: TestMethod::KruskalWallis })
}

/// `min(1, m * p)`.
pub fn bonferroni(p_raw: f64, comparisons: usize) -> f64 {
    (p_raw * comparisons as f64).min(1.0)
}

/// Pairwise Dunn test results. All matrices are `k x k`, symmetric for the
/// p-values, antisymmetric for `z`, with a unit p diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    pub comparisons: usize,
    pub z: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    pub p_adjusted: Vec<Vec<f64>>,
}

pub fn dunn_posthoc<G: AsRef<[f64]>>(groups: &[G]) -> Result<DunnResult, StatsError> {
    let p = pool(groups)?;
    let k = groups.len();
    let m = k * (k - 1) / 2;
    let n = p.n_total;
    let variance_unit = n * (n + 1.0) / 12.0 - if n > 1.0 { p.ties / (12.0 * (n - 1.0)) } else { 0.0 };
    let normal = Normal::standard();
    let mean_rank: Vec<f64> = p.rank_sums.iter().zip(&p.sizes).map(|(r, n_i)| r / n_i).collect();

    let mut z = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut p_adj = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let se = (variance_unit * (1.0 / p.sizes[i] + 1.0 / p.sizes[j])).sqrt();
            let zij = if se > 0.0 { (mean_rank[i] - mean_rank[j]) / se } else { 0.0 };
            let pij = (2.0 * normal.sf(zij.abs())).min(1.0);
            z[i][j] = zij;
            z[j][i] = -zij;
            p_raw[i][j] = pij;
            p_raw[j][i] = pij;
            let adj = bonferroni(pij, m);
            p_adj[i][j] = adj;
            p_adj[j][i] = adj;
        }
    }
    Ok(DunnResult { comparisons: m, z, p_raw, p_adjusted: p_adj })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[10.0, 20.0, 10.0, 30.0]);
        assert_eq!(r, vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn kw_hand_computed() {
        // 12/42 * (36/3 + 225/3) - 21
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((r.statistic - (12.0 / 42.0 * (12.0 + 75.0) - 21.0)).abs() < 1e-12);
        assert!((r.statistic - 3.857).abs() < 1e-3);
    }

    #[test]
    fn kw_identical_groups() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = kruskal_wallis(&[vec![4.0, 4.0], vec![4.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(kruskal_wallis(&[vec![1.0]]), Err(StatsError::TooFewGroups(1)));
        assert_eq!(dunn_posthoc::<Vec<f64>>(&[]).unwrap_err(), StatsError::TooFewGroups(0));
        assert_eq!(kruskal_wallis(&[vec![1.0], vec![]]), Err(StatsError::EmptyGroup));
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(0.01, 21) - 0.21).abs() < 1e-15);
        assert_eq!(bonferroni(0.1, 21), 1.0);
    }

    #[test]
    fn dunn_matrix_shape() {
        let d = dunn_posthoc(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0]]).unwrap();
        assert_eq!(d.comparisons, 3);
        for i in 0..3 {
            assert_eq!(d.p_adjusted[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(d.p_adjusted[i][j], d.p_adjusted[j][i]);
                assert!(d.p_adjusted[i][j] >= d.p_raw[i][j]);
                assert!(d.p_adjusted[i][j] <= 1.0);
            }
        }
    }
}
