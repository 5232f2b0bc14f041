//! Destinations for sampled data.
//!
//! A sink is opened, written in batches, and closed. The samplers differ
//! only in how often they call each of these, which is what the counting
//! wrapper observes.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::log::{Sample, CSV_HEADER};

#[derive(Debug, Error)]
#[error("sink {target}: {source}")]
pub struct SinkError {
    pub target: String,
    #[source]
    pub source: io::Error,
}

pub trait SampleSink: Send {
    fn open(&mut self) -> Result<(), SinkError>;
    /// Persist a batch with a single write operation.
    fn write(&mut self, samples: &[Sample]) -> Result<(), SinkError>;
    fn close(&mut self) -> Result<(), SinkError>;
}

impl<S: SampleSink + ?Sized> SampleSink for Box<S> {
    fn open(&mut self) -> Result<(), SinkError> {
        (**self).open()
    }
    fn write(&mut self, samples: &[Sample]) -> Result<(), SinkError> {
        (**self).write(samples)
    }
    fn close(&mut self) -> Result<(), SinkError> {
        (**self).close()
    }
}

/// CSV file sink. The first `open` truncates and writes the header; later
/// opens append, so a loop that reopens per sample still yields one log.
#[derive(Debug)]
pub struct CsvFileSink {
    path: PathBuf,
    file: Option<File>,
    initialized: bool,
    buf: String,
}

impl CsvFileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        CsvFileSink { path: path.into(), file: None, initialized: false, buf: String::new() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn err(&self, source: io::Error) -> SinkError {
        SinkError { target: self.path.display().to_string(), source }
    }
}

impl SampleSink for CsvFileSink {
    fn open(&mut self) -> Result<(), SinkError> {
        if self.file.is_some() {
            return Ok(());
        }
        let mut file =
            if self.initialized { OpenOptions::new().append(true).open(&self.path) } else { File::create(&self.path) }
                .map_err(|e| self.err(e))?;
        if !self.initialized {
            file.write_all(format!("{CSV_HEADER}\n").as_bytes()).map_err(|e| self.err(e))?;
            self.initialized = true;
        }
        self.file = Some(file);
        Ok(())
    }

    fn write(&mut self, samples: &[Sample]) -> Result<(), SinkError> {
        self.buf.clear();
        for s in samples {
            s.write_csv_line(&mut self.buf);
        }
        let Some(file) = self.file.as_mut() else {
            return Err(self.err(io::Error::new(io::ErrorKind::NotConnected, "sink not open")));
        };
        if let Err(e) = file.write_all(self.buf.as_bytes()) {
            return Err(self.err(e));
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), SinkError> {
        self.file = None;
        Ok(())
    }
}

/// In-memory sink; the collected samples stay reachable through a shared handle.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    samples: Arc<Mutex<Vec<Sample>>>,
    open: bool,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.samples.lock().unwrap().clone()
    }
}

impl SampleSink for MemorySink {
    fn open(&mut self) -> Result<(), SinkError> {
        self.open = true;
        Ok(())
    }

    fn write(&mut self, samples: &[Sample]) -> Result<(), SinkError> {
        if !self.open {
            return Err(SinkError {
                target: "memory".into(),
                source: io::Error::new(io::ErrorKind::NotConnected, "sink not open"),
            });
        }
        self.samples.lock().unwrap().extend_from_slice(samples);
        Ok(())
    }

    fn close(&mut self) -> Result<(), SinkError> {
        self.open = false;
        Ok(())
    }
}

/// Operation counts observed by [`CountingSink`].
#[derive(Debug, Default)]
pub struct SinkCounters {
    pub opens: AtomicU64,
    pub writes: AtomicU64,
    pub closes: AtomicU64,
    pub samples: AtomicU64,
}

impl SinkCounters {
    pub fn opens(&self) -> u64 {
        self.opens.load(Ordering::Relaxed)
    }
    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }
    pub fn closes(&self) -> u64 {
        self.closes.load(Ordering::Relaxed)
    }
    pub fn samples(&self) -> u64 {
        self.samples.load(Ordering::Relaxed)
    }
}

/// Wraps a sink and counts every open, write and close passed through.
#[derive(Debug)]
pub struct CountingSink<S> {
    inner: S,
    counters: Arc<SinkCounters>,
}

impl<S: SampleSink> CountingSink<S> {
    pub fn new(inner: S) -> Self {
        CountingSink { inner, counters: Arc::default() }
    }

    pub fn counters(&self) -> Arc<SinkCounters> {
        self.counters.clone()
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: SampleSink> SampleSink for CountingSink<S> {
    fn open(&mut self) -> Result<(), SinkError> {
        self.counters.opens.fetch_add(1, Ordering::Relaxed);
        self.inner.open()
    }

    fn write(&mut self, samples: &[Sample]) -> Result<(), SinkError> {
        self.counters.writes.fetch_add(1, Ordering::Relaxed);
        self.inner.write(samples)?;
        self.counters.samples.fetch_add(samples.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn close(&mut self) -> Result<(), SinkError> {
        self.counters.closes.fetch_add(1, Ordering::Relaxed);
        self.inner.close()
    }
}
