//! Per-benchmark analysis of tool overhead, emitted as CSV tables and JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    classify_delta, cliffs_delta, describe, dunn_posthoc, kruskal_wallis, overhead, shapiro_wilk, Describe, DunnResult,
    Magnitude, OverheadRow, StatsError, TestResult,
};

/// One measured value for a tool–benchmark pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tool: String,
    pub benchmark: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolColumn {
    pub tool: String,
    pub describe: Describe,
    pub overhead: OverheadRow,
    /// `None` when the group is too small or constant.
    pub shapiro: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineContrast {
    pub tool: String,
    pub p_adjusted: f64,
    pub cliffs_delta: f64,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkAnalysis {
    pub benchmark: String,
    /// Tool order used by every table; baseline first.
    pub tools: Vec<String>,
    pub columns: Vec<ToolColumn>,
    pub kruskal: Option<TestResult>,
    pub dunn: Option<DunnResult>,
    /// Cliff's delta matrix, `delta[i][j] = cliffs_delta(tools[i], tools[j])`.
    pub delta: Vec<Vec<f64>>,
    pub vs_baseline: Vec<BaselineContrast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub baseline: String,
    pub metric: String,
    pub benchmarks: Vec<BenchmarkAnalysis>,
}

fn first_seen_order<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

pub fn analyze(observations: &[Observation], baseline: &str, metric: &str) -> Result<AnalysisReport, StatsError> {
    let benchmarks = first_seen_order(observations.iter().map(|o| o.benchmark.as_str()));
    let mut out = Vec::with_capacity(benchmarks.len());
    for bench in benchmarks {
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for o in observations.iter().filter(|o| o.benchmark == bench) {
            groups.entry(o.tool.as_str()).or_default().push(o.value);
        }
        let mut tools = first_seen_order(observations.iter().filter(|o| o.benchmark == bench).map(|o| o.tool.as_str()));
        let Some(base_pos) = tools.iter().position(|t| t == baseline) else {
            ::log::warn!("benchmark {bench} has no `{baseline}` runs; skipped");
            continue;
        };
        let b = tools.remove(base_pos);
        tools.insert(0, b);

        let values: Vec<&Vec<f64>> = tools.iter().map(|t| &groups[t.as_str()]).collect();
        let base = values[0];
        let mut columns = Vec::with_capacity(tools.len());
        for (tool, v) in tools.iter().zip(&values) {
            columns.push(ToolColumn {
                tool: tool.clone(),
                describe: describe(v)?,
                overhead: overhead(base, v)?,
                shapiro: shapiro_wilk(v).ok(),
            });
        }
        let (kruskal, dunn) = if tools.len() >= 2 {
            (Some(kruskal_wallis(&values)?), Some(dunn_posthoc(&values)?))
        } else {
            (None, None)
        };
        let k = tools.len();
        let mut delta = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    delta[i][j] = cliffs_delta(values[i], values[j])?;
                }
            }
        }
        let vs_baseline = match &dunn {
            Some(d) => (1..k)
                .map(|j| BaselineContrast {
                    tool: tools[j].clone(),
                    p_adjusted: d.p_adjusted[0][j],
                    cliffs_delta: delta[0][j],
                    magnitude: classify_delta(delta[0][j]),
                })
                .collect(),
            None => Vec::new(),
        };
        out.push(BenchmarkAnalysis { benchmark: bench, tools, columns, kruskal, dunn, delta, vs_baseline });
    }
    Ok(AnalysisReport { baseline: baseline.to_string(), metric: metric.to_string(), benchmarks: out })
}

/// Descriptive table for one benchmark: one column per tool, rows
/// mean/std/min/25%/50%/75%/max/delta_t/pct_delta.
pub fn descriptive_csv(b: &BenchmarkAnalysis) -> String {
    let mut s = String::from("statistic");
    for t in &b.tools {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    type Cell = fn(&ToolColumn) -> f64;
    let rows: [(&str, Cell); 9] = [
        ("mean", |c| c.describe.mean),
        ("std", |c| c.describe.std),
        ("min", |c| c.describe.min),
        ("25%", |c| c.describe.q25),
        ("50%", |c| c.describe.median),
        ("75%", |c| c.describe.q75),
        ("max", |c| c.describe.max),
        ("delta_t", |c| c.overhead.delta_t),
        ("pct_delta", |c| c.overhead.pct_delta),
    ];
    for (name, f) in rows {
        s.push_str(name);
        for c in &b.columns {
            let _ = write!(s, ",{:.6}", f(c));
        }
        s.push('\n');
    }
    s
}

/// Baseline-vs-tool contrasts across benchmarks: rows are tools, columns are
/// benchmarks, each cell `p_adjusted;delta;magnitude`.
pub fn baseline_contrast_csv(r: &AnalysisReport) -> String {
    let tools = first_seen_order(r.benchmarks.iter().flat_map(|b| b.vs_baseline.iter().map(|c| c.tool.as_str())));
    let mut s = String::from("tool");
    for b in &r.benchmarks {
        let _ = write!(s, ",{}", b.benchmark);
    }
    s.push('\n');
    for tool in tools {
        s.push_str(&tool);
        for b in &r.benchmarks {
            s.push(',');
            if let Some(c) = b.vs_baseline.iter().find(|c| c.tool == tool) {
                let _ = write!(s, "{:.6};{:.4};{}", c.p_adjusted, c.cliffs_delta, c.magnitude.as_str());
            }
        }
        s.push('\n');
    }
    s
}

/// Full pairwise Dunn matrix for one benchmark, cells `p_adjusted;delta;magnitude`.
pub fn dunn_matrix_csv(b: &BenchmarkAnalysis) -> String {
    let mut s = String::from("tool");
    for t in &b.tools {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    for (i, t) in b.tools.iter().enumerate() {
        s.push_str(t);
        for j in 0..b.tools.len() {
            let p = b.dunn.as_ref().map_or(1.0, |d| d.p_adjusted[i][j]);
            let d = b.delta[i][j];
            let _ = write!(s, ",{p:.6};{d:.4};{}", classify_delta(d).as_str());
        }
        s.push('\n');
    }
    s
}
