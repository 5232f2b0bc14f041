//! Fixed-rate RAPL sampling loops.
//!
//! * [`run_naive`]: reopen sink and counters, read, compute delta, write one
//!   record, close, every period. The high-overhead comparator.
//! * [`run_batched`]: sink opened once; samples go to a preallocated cache
//!   that is written in bulk when full and once more at shutdown.
//! * [`run_ring`]: a producer thread pushes into an SPSC overwrite ring; a
//!   consumer thread drains it every `drain_period_ns` and appends the batch.
//!
//! All loops schedule against absolute deadlines (`start + k * period`);
//! a deadline that has already passed by a full period is skipped rather than
//! made up with a burst.

pub mod log;
pub mod ring;
pub mod sink;

use std::hint::black_box;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::counter_source::Source;
use crate::domain::DomainId;
use crate::postprocess::wrap_delta;

pub use self::log::{LogMetadata, Sample, SampleLog};
pub use self::ring::SampleRing;
pub use self::sink::{CountingSink, CsvFileSink, MemorySink, SampleSink, SinkError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Naive,
    Batched,
    Ring,
}

impl std::str::FromStr for SamplerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(SamplerMode::Naive),
            "batched" => Ok(SamplerMode::Batched),
            "ring" => Ok(SamplerMode::Ring),
            other => Err(format!("unknown sampler mode `{other}` (naive|batched|ring)")),
        }
    }
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMode::Naive => "naive",
            SamplerMode::Batched => "batched",
            SamplerMode::Ring => "ring",
        })
    }
}

fn default_period() -> u64 {
    1_000_000
}
fn default_capacity() -> usize {
    128
}
fn default_drain() -> u64 {
    100_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_period")]
    pub period_ns: u64,
    #[serde(default = "default_capacity")]
    pub cache_capacity: usize,
    #[serde(default = "default_capacity")]
    pub ring_capacity: usize,
    #[serde(default = "default_drain")]
    pub drain_period_ns: u64,
    /// Domains to read; empty means every domain the source opened.
    #[serde(default)]
    pub domains: Vec<DomainId>,
    /// Sampling window. Deadlines `start + k * period <= start + duration`
    /// are sampled, so the window includes both ends; a zero window takes
    /// no samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            period_ns: default_period(),
            cache_capacity: default_capacity(),
            ring_capacity: default_capacity(),
            drain_period_ns: default_drain(),
            domains: Vec::new(),
            duration_ns: None,
            max_samples: None,
        }
    }
}

impl SamplerConfig {
    pub fn with_duration_ns(mut self, d: u64) -> Self {
        self.duration_ns = Some(d);
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.period_ns == 0 {
            return bad("period_ns must be > 0");
        }
        if self.cache_capacity == 0 {
            return bad("cache_capacity must be >= 1");
        }
        if !self.ring_capacity.is_power_of_two() {
            return bad("ring_capacity must be a power of two");
        }
        if self.drain_period_ns == 0 {
            return bad("drain_period_ns must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub samples_taken: u64,
    pub samples_persisted: u64,
    pub flush_count: u64,
    pub sink_write_ops: u64,
    /// Ring mode only: samples overwritten before the consumer drained them.
    pub overruns: u64,
    pub read_failures: u64,
    pub wall_start_ns: u64,
    pub wall_end_ns: u64,
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("sink failed after {} persisted samples: {source}", stats.samples_persisted)]
    SinkFailure {
        stats: SamplerStats,
        #[source]
        source: SinkError,
    },
    #[error(transparent)]
    Log(#[from] log::LogError),
}

/// Cooperative stop flag shared with whoever ends a run early.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn stop(&self) {
        self.0.store(true, Ordering::Release);
    }
    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

/// Absolute-deadline schedule shared by all loops.
struct Schedule {
    period: u64,
    next: u64,
    end: Option<u64>,
    max_samples: Option<u64>,
    empty: bool,
}

impl Schedule {
    fn new(start: u64, period: u64, duration: Option<u64>, max_samples: Option<u64>) -> Self {
        Schedule {
            period,
            next: start,
            end: duration.map(|d| start.saturating_add(d)),
            max_samples,
            empty: duration == Some(0) || max_samples == Some(0),
        }
    }

    /// Next deadline to sample at, or `None` when the run is over.
    fn next_deadline(&mut self, now: u64, taken: u64, stops: &[&StopSignal]) -> Option<u64> {
        if self.empty || stops.iter().any(|s| s.is_stopped()) {
            return None;
        }
        if self.max_samples.is_some_and(|m| taken >= m) {
            return None;
        }
        let mut deadline = self.next;
        if now >= deadline + self.period {
            deadline += (now - deadline) / self.period * self.period;
        }
        if self.end.is_some_and(|end| deadline > end) {
            return None;
        }
        self.next = deadline + self.period;
        Some(deadline)
    }
}

/// Unregisters a thread from the clock when dropped.
struct Participant<'a>(&'a dyn Clock);

impl Drop for Participant<'_> {
    fn drop(&mut self) {
        self.0.leave();
    }
}

fn resolve_domains(src: &Source, cfg: &SamplerConfig) -> Vec<DomainId> {
    if cfg.domains.is_empty() {
        src.domains()
    } else {
        let mut d = cfg.domains.clone();
        d.sort();
        d.dedup();
        d
    }
}

fn take_sample(src: &mut Source, clock: &dyn Clock, domains: &[DomainId]) -> Option<Sample> {
    let t1_ns = clock.now_ns();
    let reading = src.read_raw(domains);
    let t2_ns = clock.now_ns();
    match reading {
        Ok(r) => Some(Sample { t1_ns, t2_ns, raw: r.values }),
        Err(e) => {
            ::log::warn!("counter read failed, skipping sample: {e}");
            None
        }
    }
}

pub fn run(
    mode: SamplerMode,
    src: &mut Source,
    cfg: &SamplerConfig,
    sink: &mut dyn SampleSink,
    stop: &StopSignal,
) -> Result<SamplerStats, SamplerError> {
    match mode {
        SamplerMode::Naive => run_naive(src, cfg, sink, stop),
        SamplerMode::Batched => run_batched(src, cfg, sink, stop),
        SamplerMode::Ring => run_ring(src, cfg, sink, stop),
    }
}

/// One open/read/delta/write/close cycle per period.
pub fn run_naive(
    src: &mut Source,
    cfg: &SamplerConfig,
    sink: &mut dyn SampleSink,
    stop: &StopSignal,
) -> Result<SamplerStats, SamplerError> {
    cfg.validate()?;
    let clock = src.clock();
    let domains = resolve_domains(src, cfg);
    let mut stats = SamplerStats { wall_start_ns: clock.now_ns(), ..Default::default() };
    let mut sched = Schedule::new(stats.wall_start_ns, cfg.period_ns, cfg.duration_ns, cfg.max_samples);
    let mut prev: Option<Sample> = None;

    while let Some(deadline) = sched.next_deadline(clock.now_ns(), stats.samples_taken, &[stop]) {
        clock.sleep_until(deadline);
        if let Err(source) = sink.open() {
            stats.wall_end_ns = clock.now_ns();
            return Err(SamplerError::SinkFailure { stats, source });
        }
        let sample = match src.reinit() {
            Ok(()) => take_sample(src, clock.as_ref(), &domains),
            Err(e) => {
                ::log::warn!("counter re-init failed: {e}");
                None
            }
        };
        let Some(sample) = sample else {
            stats.read_failures += 1;
            let _ = sink.close();
            continue;
        };
        if let Some(p) = &prev {
            let mut total = 0u64;
            for &d in &domains {
                if let (Some(&a), Some(&b), Some(range)) = (p.raw.get(d), sample.raw.get(d), src.wrap_range(d)) {
                    total = total.wrapping_add(wrap_delta(a, b, range).unwrap_or(0));
                }
            }
            black_box(total);
        }
        stats.samples_taken += 1;
        if let Err(source) = sink.write(std::slice::from_ref(&sample)) {
            stats.wall_end_ns = clock.now_ns();
            return Err(SamplerError::SinkFailure { stats, source });
        }
        stats.sink_write_ops += 1;
        stats.flush_count += 1;
        stats.samples_persisted += 1;
        if let Err(source) = sink.close() {
            stats.wall_end_ns = clock.now_ns();
            return Err(SamplerError::SinkFailure { stats, source });
        }
        prev = Some(sample);
    }
    stats.wall_end_ns = clock.now_ns();
    Ok(stats)
}

/// Cache samples in memory; write the cache when full and at shutdown.
pub fn run_batched(
    src: &mut Source,
    cfg: &SamplerConfig,
    sink: &mut dyn SampleSink,
    stop: &StopSignal,
) -> Result<SamplerStats, SamplerError> {
    cfg.validate()?;
    let clock = src.clock();
    let domains = resolve_domains(src, cfg);
    let mut stats = SamplerStats { wall_start_ns: clock.now_ns(), ..Default::default() };
    if let Err(source) = sink.open() {
        stats.wall_end_ns = clock.now_ns();
        return Err(SamplerError::SinkFailure { stats, source });
    }
    let mut cache: Vec<Sample> = Vec::with_capacity(cfg.cache_capacity);
    let mut sched = Schedule::new(stats.wall_start_ns, cfg.period_ns, cfg.duration_ns, cfg.max_samples);

    let flush = |cache: &mut Vec<Sample>, sink: &mut dyn SampleSink, stats: &mut SamplerStats| {
        sink.write(cache)?;
        stats.sink_write_ops += 1;
        stats.flush_count += 1;
        stats.samples_persisted += cache.len() as u64;
        cache.clear();
        Ok::<(), SinkError>(())
    };

    while let Some(deadline) = sched.next_deadline(clock.now_ns(), stats.samples_taken, &[stop]) {
        clock.sleep_until(deadline);
        let Some(sample) = take_sample(src, clock.as_ref(), &domains) else {
            stats.read_failures += 1;
            continue;
        };
        cache.push(sample);
        stats.samples_taken += 1;
        if cache.len() == cfg.cache_capacity {
            if let Err(source) = flush(&mut cache, sink, &mut stats) {
                stats.wall_end_ns = clock.now_ns();
                return Err(SamplerError::SinkFailure { stats, source });
            }
        }
    }
    if !cache.is_empty() {
        if let Err(source) = flush(&mut cache, sink, &mut stats) {
            stats.wall_end_ns = clock.now_ns();
            return Err(SamplerError::SinkFailure { stats, source });
        }
    }
    let closed = sink.close();
    stats.wall_end_ns = clock.now_ns();
    match closed {
        Ok(()) => Ok(stats),
        Err(source) => Err(SamplerError::SinkFailure { stats, source }),
    }
}

/// Producer thread fills an SPSC ring at `period_ns`; consumer thread drains
/// it every `drain_period_ns` and appends each non-empty batch to the sink.
pub fn run_ring(
    src: &mut Source,
    cfg: &SamplerConfig,
    sink: &mut dyn SampleSink,
    stop: &StopSignal,
) -> Result<SamplerStats, SamplerError> {
    cfg.validate()?;
    let clock = src.clock();
    let domains = resolve_domains(src, cfg);
    let ring = SampleRing::new(cfg.ring_capacity);
    let producer_done = AtomicBool::new(false);
    let halt = StopSignal::new();
    let start = clock.now_ns();

    // Both threads must be registered before either can sleep.
    clock.enter();
    clock.enter();

    let (producer, consumer) = std::thread::scope(|s| {
        let producer = s.spawn(|| {
            let _p = Participant(clock.as_ref());
            let mut sched = Schedule::new(start, cfg.period_ns, cfg.duration_ns, cfg.max_samples);
            let mut taken = 0u64;
            let mut failures = 0u64;
            while let Some(deadline) = sched.next_deadline(clock.now_ns(), taken, &[stop, &halt]) {
                clock.sleep_until(deadline);
                match take_sample(src, clock.as_ref(), &domains) {
                    Some(sample) => {
                        ring.push(&sample);
                        taken += 1;
                    }
                    None => failures += 1,
                }
            }
            producer_done.store(true, Ordering::Release);
            (taken, failures)
        });

        let consumer = s.spawn(|| {
            let _p = Participant(clock.as_ref());
            let mut persisted = 0u64;
            let mut writes = 0u64;
            if let Err(e) = sink.open() {
                halt.stop();
                return (persisted, writes, Err(e));
            }
            let mut batch = Vec::with_capacity(cfg.ring_capacity);
            let mut sched = Schedule::new(start + cfg.drain_period_ns, cfg.drain_period_ns, None, None);
            loop {
                if let Some(deadline) = sched.next_deadline(clock.now_ns(), 0, &[]) {
                    clock.sleep_until(deadline);
                }
                let finished = producer_done.load(Ordering::Acquire);
                batch.clear();
                ring.drain_into(&mut batch);
                if !batch.is_empty() {
                    writes += 1;
                    if let Err(e) = sink.write(&batch) {
                        halt.stop();
                        return (persisted, writes, Err(e));
                    }
                    persisted += batch.len() as u64;
                }
                if finished {
                    break;
                }
            }
            let closed = sink.close();
            (persisted, writes, closed)
        });

        (producer.join().expect("producer panicked"), consumer.join().expect("consumer panicked"))
    });

    let (taken, read_failures) = producer;
    let (persisted, writes, outcome) = consumer;
    let stats = SamplerStats {
        samples_taken: taken,
        samples_persisted: persisted,
        flush_count: writes,
        sink_write_ops: writes,
        overruns: ring.lost(),
        read_failures,
        wall_start_ns: start,
        wall_end_ns: clock.now_ns(),
    };
    match outcome {
        Ok(()) => Ok(stats),
        Err(source) => Err(SamplerError::SinkFailure { stats, source }),
    }
}

/// Sample into `<path>` (CSV) and write the `<path>.json` sidecar.
pub fn record_to_file(
    mode: SamplerMode,
    src: &mut Source,
    cfg: &SamplerConfig,
    path: &Path,
    stop: &StopSignal,
) -> Result<SamplerStats, SamplerError> {
    let mut sink = CsvFileSink::new(path);
    let stats = run(mode, src, cfg, &mut sink, stop)?;
    let domains = resolve_domains(src, cfg);
    let meta = LogMetadata {
        mode,
        config: cfg.clone(),
        source: src.descriptor().clone(),
        domains: domains.iter().filter_map(|&d| src.meta().get(d).map(|m| (d, *m))).collect(),
        stats: stats.clone(),
    };
    meta.write(&LogMetadata::sidecar_path(path))?;
    Ok(stats)
}
