//! Batch timing of counter-access primitives.
//!
//! Each batch runs one operation `iterations` times between two monotonic
//! clock reads. A suite interleaves every (spec, repetition) pair in a seeded
//! random order, optionally cooling down between batches, and reports the
//! per-operation latency both as plain division and with the `NoOp` loop
//! subtracted.

use std::fmt;
use std::fs::File;
use std::hint::black_box;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock};
use crate::counter_source::{powercap_domain_dirs, DEFAULT_POWERCAP_ROOT};
use crate::domain::DomainId;
use crate::stats::{describe, Describe};

pub const DEFAULT_ITERATIONS: u64 = 100_000;
pub const DEFAULT_REPETITIONS: u32 = 15;
pub const DEFAULT_COOLDOWN_S: f64 = 30.0;

#[derive(Debug, Error)]
pub enum MicrobenchError {
    #[error("resource unavailable: {}: {source}", path.display())]
    ResourceUnavailable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("monotonic clock went backwards ({start_ns} -> {end_ns})")]
    ClockFailure { start_ns: u64, end_ns: u64 },
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("cannot pin to cpu {cpu}: {source}")]
    Affinity {
        cpu: usize,
        #[source]
        source: io::Error,
    },
}

fn default_powercap_root() -> PathBuf {
    PathBuf::from(DEFAULT_POWERCAP_ROOT)
}

fn default_msr_device() -> PathBuf {
    PathBuf::from("/dev/cpu/0/msr")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    NoOp,
    ClockRead,
    PowercapRead {
        domain: DomainId,
        #[serde(default = "default_powercap_root")]
        root: PathBuf,
    },
    MsrRead {
        register: u32,
        #[serde(default = "default_msr_device")]
        device: PathBuf,
    },
    SmallFileRead {
        path: PathBuf,
    },
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::NoOp => f.write_str("noop"),
            OpKind::ClockRead => f.write_str("clock_read"),
            OpKind::PowercapRead { domain, .. } => write!(f, "powercap_read:{domain}"),
            OpKind::MsrRead { register, .. } => write!(f, "msr_read:{register:#x}"),
            OpKind::SmallFileRead { path } => write!(f, "small_file_read:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub op: OpKind,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_cooldown")]
    pub cooldown_s: f64,
}

fn default_iterations() -> u64 {
    DEFAULT_ITERATIONS
}
fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}
fn default_cooldown() -> f64 {
    DEFAULT_COOLDOWN_S
}

impl BenchSpec {
    pub fn new(op: OpKind) -> Self {
        BenchSpec {
            op,
            iterations: DEFAULT_ITERATIONS,
            repetitions: DEFAULT_REPETITIONS,
            cooldown_s: DEFAULT_COOLDOWN_S,
        }
    }

    pub fn validate(&self) -> Result<(), MicrobenchError> {
        if self.iterations == 0 {
            return Err(MicrobenchError::InvalidSpec("iterations must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(MicrobenchError::InvalidSpec("repetitions must be >= 1".into()));
        }
        if !(self.cooldown_s >= 0.0 && self.cooldown_s.is_finite()) {
            return Err(MicrobenchError::InvalidSpec("cooldown_s must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub op: String,
    pub iterations: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerOpLatency {
    pub median_batch_ms: f64,
    pub per_op_ms: f64,
    pub baseline_subtracted_per_op_ms: f64,
}

/// Per-operation latency from a batch median. Without a baseline the
/// subtracted value equals the plain one.
pub fn per_op(median_batch_ms: f64, baseline_batch_ms: Option<f64>, iterations: u64) -> PerOpLatency {
    let n = iterations.max(1) as f64;
    let base = baseline_batch_ms.unwrap_or(0.0).max(0.0);
    PerOpLatency {
        median_batch_ms,
        per_op_ms: median_batch_ms / n,
        baseline_subtracted_per_op_ms: (median_batch_ms - base).max(0.0) / n,
    }
}

fn open_resource(path: &Path) -> Result<File, MicrobenchError> {
    File::open(path).map_err(|source| MicrobenchError::ResourceUnavailable { path: path.into(), source })
}

fn pread_loop(file: &File, path: &Path, offset: u64, buf: &mut [u8], n: u64) -> Result<(), MicrobenchError> {
    for _ in 0..n {
        let got = file
            .read_at(black_box(&mut *buf), offset)
            .map_err(|source| MicrobenchError::ResourceUnavailable { path: path.into(), source })?;
        black_box(got);
    }
    Ok(())
}

/// Run one batch of `spec.iterations` operations and time it.
pub fn time_batch(spec: &BenchSpec) -> Result<BatchTiming, MicrobenchError> {
    spec.validate()?;
    let clock = MonotonicClock::new();
    let n = spec.iterations;

    // Resources are opened outside the timed region.
    let (start, end) = match &spec.op {
        OpKind::NoOp => {
            let t0 = clock.now_ns();
            for i in 0..n {
                black_box(i);
            }
            (t0, clock.now_ns())
        }
        OpKind::ClockRead => {
            let t0 = clock.now_ns();
            for _ in 0..n {
                black_box(clock.now_ns());
            }
            (t0, clock.now_ns())
        }
        OpKind::PowercapRead { domain, root } => {
            let dirs = powercap_domain_dirs(root).map_err(|e| MicrobenchError::ResourceUnavailable {
                path: root.clone(),
                source: io::Error::new(io::ErrorKind::NotFound, e.to_string()),
            })?;
            let Some(dir) = dirs.get(*domain) else {
                return Err(MicrobenchError::ResourceUnavailable {
                    path: root.clone(),
                    source: io::Error::new(io::ErrorKind::NotFound, format!("no {domain} domain")),
                });
            };
            let path = dir.join("energy_uj");
            let file = open_resource(&path)?;
            let mut buf = [0u8; 32];
            let t0 = clock.now_ns();
            pread_loop(&file, &path, 0, &mut buf, n)?;
            (t0, clock.now_ns())
        }
        OpKind::MsrRead { register, device } => {
            let file = open_resource(device)?;
            let mut buf = [0u8; 8];
            let t0 = clock.now_ns();
            pread_loop(&file, device, *register as u64, &mut buf, n)?;
            (t0, clock.now_ns())
        }
        OpKind::SmallFileRead { path } => {
            let file = open_resource(path)?;
            let mut buf = [0u8; 64];
            let t0 = clock.now_ns();
            pread_loop(&file, path, 0, &mut buf, n)?;
            (t0, clock.now_ns())
        }
    };
    if end < start {
        return Err(MicrobenchError::ClockFailure { start_ns: start, end_ns: end });
    }
    Ok(BatchTiming { op: spec.op.to_string(), iterations: n, elapsed_ms: (end - start) as f64 / 1e6 })
}

/// Restrict the calling thread to `cpu`.
#[cfg(target_os = "linux")]
pub fn pin_to_cpu(cpu: usize) -> Result<(), MicrobenchError> {
    // SAFETY: cpu_set_t is plain data; CPU_SET bounds-checks against its size.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if cpu >= libc::CPU_SETSIZE as usize {
            return Err(MicrobenchError::Affinity { cpu, source: io::Error::from(io::ErrorKind::InvalidInput) });
        }
        libc::CPU_SET(cpu, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(MicrobenchError::Affinity { cpu, source: io::Error::last_os_error() });
        }
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_cpu(cpu: usize) -> Result<(), MicrobenchError> {
    Err(MicrobenchError::Affinity { cpu, source: io::Error::from(io::ErrorKind::Unsupported) })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub pin_cpu: Option<usize>,
}

/// Seeded execution order over every `(spec index, repetition)` pair.
pub fn execution_order(specs: &[BenchSpec], seed: u64) -> Vec<(usize, u32)> {
    let mut order: Vec<(usize, u32)> =
        specs.iter().enumerate().flat_map(|(i, s)| (0..s.repetitions).map(move |r| (i, r))).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub op: String,
    pub repetition: u32,
    pub elapsed_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSummary {
    pub op: String,
    pub iterations: u64,
    pub failures: usize,
    /// `None` when every batch failed.
    pub describe: Option<Describe>,
    pub latency: Option<PerOpLatency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub runs: Vec<RunTiming>,
    pub summary: Vec<OpSummary>,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn summary_for(&self, op: &str) -> Option<&OpSummary> {
        self.summary.iter().find(|s| s.op == op)
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("op_kind,repetition,elapsed_ms\n");
        for r in &self.runs {
            let v = r.elapsed_ms.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.op, r.repetition, v));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s =
            String::from("op_kind,iterations,mean,std,min,25%,50%,75%,max,per_op,per_op_minus_baseline,failures\n");
        for o in &self.summary {
            s.push_str(&format!("{},{}", o.op, o.iterations));
            match (&o.describe, &o.latency) {
                (Some(d), Some(l)) => {
                    for v in [d.mean, d.std, d.min, d.q25, d.median, d.q75, d.max] {
                        s.push_str(&format!(",{v:.6}"));
                    }
                    s.push_str(&format!(",{:.9},{:.9}", l.per_op_ms, l.baseline_subtracted_per_op_ms));
                }
                _ => s.push_str(",,,,,,,,,"),
            }
            s.push_str(&format!(",{}\n", o.failures));
        }
        s
    }
}

/// Run every spec `repetitions` times in seeded random order. Failed batches
/// are recorded and the suite carries on.
pub fn run_suite(specs: &[BenchSpec], seed: u64, opts: &SuiteOptions) -> Result<SuiteReport, MicrobenchError> {
    for s in specs {
        s.validate()?;
    }
    if let Some(cpu) = opts.pin_cpu {
        pin_to_cpu(cpu)?;
    }
    let order = execution_order(specs, seed);
    let mut runs = Vec::with_capacity(order.len());
    let mut per_spec: Vec<Vec<f64>> = vec![Vec::new(); specs.len()];
    let mut failures = vec![0usize; specs.len()];
    for (k, &(i, rep)) in order.iter().enumerate() {
        let spec = &specs[i];
        let label = spec.op.to_string();
        match time_batch(spec) {
            Ok(t) => {
                per_spec[i].push(t.elapsed_ms);
                runs.push(RunTiming { op: label, repetition: rep, elapsed_ms: Some(t.elapsed_ms), error: None });
            }
            Err(e) => {
                ::log::warn!("{label} repetition {rep} failed: {e}");
                failures[i] += 1;
                runs.push(RunTiming { op: label, repetition: rep, elapsed_ms: None, error: Some(e.to_string()) });
            }
        }
        if k + 1 < order.len() && spec.cooldown_s > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(spec.cooldown_s));
        }
    }

    // Baseline: NoOp median batch time, rescaled to each spec's N by the
    // iteration ratio (exact when the counts match).
    let baseline = specs
        .iter()
        .zip(&per_spec)
        .find(|(s, v)| s.op == OpKind::NoOp && !v.is_empty())
        .and_then(|(s, v)| describe(v).ok().map(|d| (d.median, s.iterations)));

    let summary = specs
        .iter()
        .zip(per_spec)
        .zip(failures)
        .map(|((s, v), failures)| {
            let d = describe(&v).ok();
            let base = baseline.map(|(m, n)| m * (s.iterations as f64 / n as f64));
            let latency = d.map(|d| per_op(d.median, base, s.iterations));
            OpSummary { op: s.op.to_string(), iterations: s.iterations, failures, describe: d, latency }
        })
        .collect();
    Ok(SuiteReport { seed, runs, summary })
}
