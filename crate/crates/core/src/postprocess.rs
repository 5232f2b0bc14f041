//! Offline conversion of raw sample logs into energy and power.
//!
//! Nothing here runs inside a sampling loop. Each reading is attributed to
//! the midpoint of its two timestamps, consecutive readings form an interval,
//! and counter deltas are wrap-corrected assuming at most one wrap per
//! interval.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::NANOS_PER_SEC;
use crate::counter_source::{raw_to_joules, DomainMeta};
use crate::domain::{DomainId, DomainMap};
use crate::sampler::log::{LogError, LogMetadata, Sample, SampleLog};

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("counter values out of range: prev={prev} curr={curr} range={range}")]
    OutOfRange { prev: u64, curr: u64, range: u64 },
    #[error("log is not strictly ordered by t1_ns at sample {index}")]
    UnorderedLog { index: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no intervals to summarize")]
    EmptyInput,
    #[error("sample {index} has no value for domain {domain}")]
    MissingValue { index: usize, domain: DomainId },
    #[error("no domain in the log has unit and range metadata")]
    NoDomains,
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Counter increment from `prev` to `curr` on a counter that wraps at `range`.
pub fn wrap_delta(prev: u64, curr: u64, range: u64) -> Result<u64, PostprocessError> {
    if range < 2 || prev >= range || curr >= range {
        return Err(PostprocessError::OutOfRange { prev, curr, range });
    }
    Ok(if curr >= prev { curr - prev } else { range - prev + curr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyInterval {
    pub t_start_ns: u64,
    pub t_end_ns: u64,
    pub energy: DomainMap<f64>,
    pub power: DomainMap<f64>,
    pub raw_delta: DomainMap<u64>,
    /// Domains whose counter wrapped inside this interval.
    pub wrapped: DomainMap<bool>,
}

impl EnergyInterval {
    pub fn duration_s(&self) -> f64 {
        (self.t_end_ns - self.t_start_ns) as f64 / NANOS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub total: DomainMap<f64>,
    pub mean_power: DomainMap<f64>,
    pub duration_s: f64,
    pub wrap_events: DomainMap<u64>,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IntervalOptions {
    /// Upper bound on credible domain power, used only for the multi-wrap warning.
    pub max_plausible_watts: f64,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        IntervalOptions { max_plausible_watts: 500.0 }
    }
}

/// Compensated (Neumaier) summation.
fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn to_intervals(log: &SampleLog, meta: &DomainMap<DomainMeta>) -> Result<Vec<EnergyInterval>, PostprocessError> {
    to_intervals_with(log, meta, IntervalOptions::default())
}

pub fn to_intervals_with(
    log: &SampleLog,
    meta: &DomainMap<DomainMeta>,
    opts: IntervalOptions,
) -> Result<Vec<EnergyInterval>, PostprocessError> {
    let samples = &log.samples;
    if samples.len() < 2 {
        return Err(PostprocessError::TooFewSamples(samples.len()));
    }
    for (i, w) in samples.windows(2).enumerate() {
        if w[1].t1_ns <= w[0].t1_ns {
            return Err(PostprocessError::UnorderedLog { index: i + 1 });
        }
    }
    let domains: Vec<DomainId> = samples[0].raw.domains().filter(|&d| meta.contains(d)).collect();
    if domains.is_empty() {
        return Err(PostprocessError::NoDomains);
    }
    let value = |idx: usize, s: &Sample, d: DomainId| {
        s.raw.get(d).copied().ok_or(PostprocessError::MissingValue { index: idx, domain: d })
    };

    let mut out = Vec::with_capacity(samples.len() - 1);
    let mut anchor = 0usize;
    let mut dropped = 0usize;
    for idx in 1..samples.len() {
        let (a, b) = (&samples[anchor], &samples[idx]);
        let (t_start_ns, t_end_ns) = (a.midpoint_ns(), b.midpoint_ns());
        if t_end_ns <= t_start_ns {
            // Keep the anchor so the counter delta carries into the next interval.
            dropped += 1;
            continue;
        }
        let dt_s = (t_end_ns - t_start_ns) as f64 / NANOS_PER_SEC as f64;
        let mut iv = EnergyInterval {
            t_start_ns,
            t_end_ns,
            energy: DomainMap::new(),
            power: DomainMap::new(),
            raw_delta: DomainMap::new(),
            wrapped: DomainMap::new(),
        };
        for &d in &domains {
            let m = meta.get(d).expect("filtered above");
            let (prev, curr) = (value(anchor, a, d)?, value(idx, b, d)?);
            let delta = wrap_delta(prev, curr, m.wrap_range)?;
            let joules = raw_to_joules(delta, m.unit);
            let safe_window_s = 0.5 * m.wrap_range as f64 * m.unit.joules_per_raw / opts.max_plausible_watts;
            if dt_s > safe_window_s {
                ::log::warn!(
                    "interval {t_start_ns}..{t_end_ns} on {d} spans {dt_s:.3} s, more than half the \
                     wrap period at {} W; a second wrap would go undetected",
                    opts.max_plausible_watts
                );
            }
            iv.energy.insert(d, joules);
            iv.power.insert(d, joules / dt_s);
            iv.raw_delta.insert(d, delta);
            iv.wrapped.insert(d, curr < prev);
        }
        out.push(iv);
        anchor = idx;
    }
    if dropped > 0 {
        ::log::warn!("dropped {dropped} zero-length interval(s) caused by duplicate timestamps");
    }
    Ok(out)
}

pub fn summarize(intervals: &[EnergyInterval]) -> Result<EnergySummary, PostprocessError> {
    let first = intervals.first().ok_or(PostprocessError::EmptyInput)?;
    let last = intervals.last().expect("non-empty");
    let duration_s = (last.t_end_ns - first.t_start_ns) as f64 / NANOS_PER_SEC as f64;
    let mut total = DomainMap::new();
    let mut mean_power = DomainMap::new();
    let mut wrap_events = DomainMap::new();
    for d in DomainId::ALL {
        if !first.energy.contains(d) {
            continue;
        }
        let sum = neumaier_sum(intervals.iter().filter_map(|iv| iv.energy.get(d).copied()));
        let wraps = intervals.iter().filter(|iv| iv.wrapped.get(d) == Some(&true)).count() as u64;
        total.insert(d, sum);
        mean_power.insert(d, if duration_s > 0.0 { sum / duration_s } else { 0.0 });
        wrap_events.insert(d, wraps);
    }
    Ok(EnergySummary { total, mean_power, duration_s, wrap_events, intervals: intervals.len() })
}

pub const INTERVALS_HEADER: &str = "t_start_ns,t_end_ns,pkg_j,pp0_j,pp1_j,dram_j,pkg_w,pp0_w,pp1_w,dram_w";

pub fn intervals_to_csv(intervals: &[EnergyInterval]) -> String {
    let mut s = String::with_capacity(64 + intervals.len() * 96);
    s.push_str(INTERVALS_HEADER);
    s.push('\n');
    for iv in intervals {
        let _ = write!(s, "{},{}", iv.t_start_ns, iv.t_end_ns);
        for map in [&iv.energy, &iv.power] {
            for d in DomainId::ALL {
                s.push(',');
                if let Some(v) = map.get(d) {
                    let _ = write!(s, "{v}");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Read `<log>` and `<log>.json`, write `<out_prefix>.intervals.csv` and
/// `<out_prefix>.summary.json`.
pub fn process_log_file(
    log_path: &Path,
    out_prefix: &Path,
) -> Result<(Vec<EnergyInterval>, EnergySummary), PostprocessError> {
    let meta = LogMetadata::read(&LogMetadata::sidecar_path(log_path))?;
    let log = SampleLog::read_csv(log_path)?;
    let intervals = to_intervals(&log, &meta.domains)?;
    let summary = summarize(&intervals)?;
    let write = |suffix: &str, body: String| {
        let mut p = out_prefix.as_os_str().to_owned();
        p.push(suffix);
        let p = PathBuf::from(p);
        fs::write(&p, body).map_err(|source| PostprocessError::Io { path: p, source })
    };
    write(".intervals.csv", intervals_to_csv(&intervals))?;
    write(".summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    Ok((intervals, summary))
}
