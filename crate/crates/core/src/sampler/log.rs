//! Sample log CSV and its JSON sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SamplerConfig, SamplerMode, SamplerStats};
use crate::counter_source::{DomainMeta, SourceDescriptor};
use crate::domain::{DomainId, DomainMap};

pub const CSV_HEADER: &str = "t1_ns,t2_ns,pkg,pp0,pp1,dram";

/// One multi-domain reading bracketed by two monotonic timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t1_ns: u64,
    pub t2_ns: u64,
    pub raw: DomainMap<u64>,
}

impl Sample {
    pub fn midpoint_ns(&self) -> u64 {
        self.t1_ns + (self.t2_ns - self.t1_ns) / 2
    }

    /// Append one CSV record, LF-terminated.
    pub fn write_csv_line(&self, out: &mut String) {
        let _ = write!(out, "{},{}", self.t1_ns, self.t2_ns);
        for d in DomainId::ALL {
            out.push(',');
            if let Some(v) = self.raw.get(d) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sidecar {}: {source}", path.display())]
    Sidecar {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Append-only sequence of samples as read back from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleLog {
    pub samples: Vec<Sample>,
}

impl SampleLog {
    pub fn new(samples: Vec<Sample>) -> Self {
        SampleLog { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(CSV_HEADER.len() + 1 + self.samples.len() * 48);
        s.push_str(CSV_HEADER);
        s.push('\n');
        for sample in &self.samples {
            sample.write_csv_line(&mut s);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LogError> {
        fs::write(path, self.to_csv_string()).map_err(|source| LogError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_csv(path: &Path) -> Result<Self, LogError> {
        let f = fs::File::open(path).map_err(|source| LogError::Io { path: path.to_path_buf(), source })?;
        Self::parse(BufReader::new(f)).map_err(|e| match e {
            LogError::Io { source, .. } => LogError::Io { path: path.to_path_buf(), source },
            other => other,
        })
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, LogError> {
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| LogError::Io { path: PathBuf::new(), source })?;
            let lineno = i + 1;
            if i == 0 {
                if line.trim_end() != CSV_HEADER {
                    return Err(LogError::Parse { line: 1, msg: format!("expected header `{CSV_HEADER}`") });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(LogError::Parse { line: lineno, msg: format!("expected 6 fields, got {}", fields.len()) });
            }
            let num = |s: &str, what: &str| -> Result<u64, LogError> {
                s.parse::<u64>().map_err(|_| LogError::Parse { line: lineno, msg: format!("bad {what} `{s}`") })
            };
            let mut raw = DomainMap::new();
            for (d, field) in DomainId::ALL.into_iter().zip(&fields[2..]) {
                if !field.is_empty() {
                    raw.insert(d, num(field, d.name())?);
                }
            }
            samples.push(Sample { t1_ns: num(fields[0], "t1_ns")?, t2_ns: num(fields[1], "t2_ns")?, raw });
        }
        Ok(SampleLog { samples })
    }
}

/// Sidecar written next to a sample log (`<log>.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub mode: SamplerMode,
    pub config: SamplerConfig,
    pub source: SourceDescriptor,
    pub domains: DomainMap<DomainMeta>,
    pub stats: SamplerStats,
}

impl LogMetadata {
    pub fn sidecar_path(log_path: &Path) -> PathBuf {
        let mut p = log_path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|source| LogError::Sidecar { path: path.to_path_buf(), source })?;
        fs::write(path, json + "\n").map_err(|source| LogError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self, LogError> {
        let text = fs::read_to_string(path).map_err(|source| LogError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| LogError::Sidecar { path: path.to_path_buf(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let mut raw = DomainMap::new();
        raw.insert(DomainId::Pkg, 10);
        raw.insert(DomainId::Dram, 3);
        let log = SampleLog::new(vec![Sample { t1_ns: 1, t2_ns: 2, raw }]);
        assert_eq!(log.to_csv_string(), "t1_ns,t2_ns,pkg,pp0,pp1,dram\n1,2,10,,,3\n");
    }

    #[test]
    fn rejects_bad_header_and_fields() {
        assert!(matches!(SampleLog::parse("a,b\n".as_bytes()), Err(LogError::Parse { line: 1, .. })));
        let text = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(SampleLog::parse(text.as_bytes()), Err(LogError::Parse { line: 2, .. })));
        let text = format!("{CSV_HEADER}\n1,2,x,,,\n");
        assert!(matches!(SampleLog::parse(text.as_bytes()), Err(LogError::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((any::<u64>(), any::<u32>(), proptest::option::of(any::<u64>()), proptest::option::of(any::<u64>())), 0..20)) {
            let samples: Vec<Sample> = rows.iter().map(|&(t1, dt, a, b)| {
                let mut raw = DomainMap::new();
                if let Some(a) = a { raw.insert(DomainId::Pkg, a); }
                if let Some(b) = b { raw.insert(DomainId::Pp1, b); }
                Sample { t1_ns: t1 / 2, t2_ns: t1 / 2 + dt as u64, raw }
            }).collect();
            let log = SampleLog::new(samples);
            let back = SampleLog::parse(log.to_csv_string().as_bytes()).unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
