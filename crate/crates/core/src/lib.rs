//! High-frequency RAPL energy sampling toolkit.
//!
//! The crate is split along the measurement pipeline:
//!
//! - [`counter_source`]: powercap, MSR device and synthetic energy counters.
//! - [`sampler`]: naive, batched and ring-buffer sampling loops writing a raw log.
//! - [`postprocess`]: offline wrap correction, energy intervals and totals.
//! - [`microbench`]: batched operation-latency timing with baseline subtraction.
//! - [`stats`]: descriptive statistics, Shapiro–Wilk, Kruskal–Wallis, Dunn, Cliff's delta.
//! - [`orchestrator`]: randomized full-factorial runs framed by two counter readings.
//! - [`cli`]: the `raplkit` command line front end.

pub mod cli;
pub mod clock;
pub mod counter_source;
pub mod domain;
pub mod microbench;
pub mod orchestrator;
pub mod postprocess;
pub mod sampler;
pub mod stats;

pub use clock::{Clock, MonotonicClock, SimClock};
pub use counter_source::{raw_to_joules, BackendConfig, EnergyUnit, RawReading, Source, SourceDescriptor, SourceError};
pub use domain::{DomainId, DomainMap};
