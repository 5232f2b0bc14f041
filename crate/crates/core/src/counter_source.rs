//! Access to RAPL energy counters.
//!
//! Three backends sit behind one [`Source`] handle:
//!
//! * powercap sysfs (`/sys/class/powercap/intel-rapl:0/...`), microjoule units;
//! * the MSR device file (`/dev/cpu/<N>/msr`), raw 32-bit energy-status
//!   counters scaled by the unit decoded from `MSR_RAPL_POWER_UNIT`;
//! * a synthetic constant-power source driven by an injectable [`Clock`].
//!
//! All counters are monotone and wrap at a per-domain range. Readings are
//! returned raw; conversion to joules happens offline.

use std::fs::{self, File};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock, NANOS_PER_SEC};
use crate::domain::{DomainId, DomainMap};

pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";
pub const DEFAULT_MSR_ROOT: &str = "/dev/cpu";
/// `MSR_RAPL_POWER_UNIT`.
pub const MSR_POWER_UNIT: u32 = 0x606;
/// Energy-status MSRs are 32 bits wide.
pub const MSR_COUNTER_RANGE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("counter backend not available at {}", .0.display())]
    MissingBackend(PathBuf),
    #[error("permission denied reading {}", .0.display())]
    PermissionDenied(PathBuf),
    #[error("domain {0} is not exposed by this source")]
    UnsupportedDomain(DomainId),
    #[error("domain {0} was not opened on this source")]
    NotOpened(DomainId),
    #[error("read failed on {}: {source}", path.display())]
    ReadFailed {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid source descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Joules represented by one raw counter increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyUnit {
    pub joules_per_raw: f64,
}

impl EnergyUnit {
    pub const MICROJOULE: EnergyUnit = EnergyUnit { joules_per_raw: 1e-6 };

    pub fn new(joules_per_raw: f64) -> Result<Self, SourceError> {
        if joules_per_raw.is_finite() && joules_per_raw > 0.0 {
            Ok(EnergyUnit { joules_per_raw })
        } else {
            Err(SourceError::InvalidDescriptor(format!("energy unit must be positive, got {joules_per_raw}")))
        }
    }

    /// Decode the energy status unit from a `MSR_RAPL_POWER_UNIT` value:
    /// bits 12:8 hold ESU and one count is `(1/2)^ESU` J.
    pub fn from_power_unit_register(value: u64) -> Self {
        let esu = ((value >> 8) & 0x1f) as i32;
        EnergyUnit { joules_per_raw: 0.5f64.powi(esu) }
    }
}

pub fn raw_to_joules(raw: u64, unit: EnergyUnit) -> f64 {
    raw as f64 * unit.joules_per_raw
}

/// One raw value per requested domain, plus that domain's wrap range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub values: DomainMap<u64>,
    pub wrap_range: DomainMap<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Constant power per domain; only domains listed here can be opened.
    pub power_watts: DomainMap<f64>,
    #[serde(default = "default_unit_joules")]
    pub unit_joules: f64,
    #[serde(default = "default_wrap_range")]
    pub wrap_range_raw: u64,
    /// Clock value at which every counter reads zero. `None` means "at open".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_epoch_ns: Option<u64>,
}

fn default_unit_joules() -> f64 {
    1e-6
}

fn default_wrap_range() -> u64 {
    MSR_COUNTER_RANGE
}

fn default_powercap_root() -> PathBuf {
    PathBuf::from(DEFAULT_POWERCAP_ROOT)
}

fn default_msr_root() -> PathBuf {
    PathBuf::from(DEFAULT_MSR_ROOT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum BackendConfig {
    Powercap {
        #[serde(default = "default_powercap_root")]
        root: PathBuf,
    },
    MsrDevice {
        #[serde(default = "default_msr_root")]
        device_root: PathBuf,
        #[serde(default)]
        cpu: u32,
    },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    #[serde(flatten)]
    pub backend: BackendConfig,
    pub domains: Vec<DomainId>,
}

impl SourceDescriptor {
    pub fn synthetic(power_watts: DomainMap<f64>, unit_joules: f64, wrap_range_raw: u64) -> Self {
        let domains = power_watts.domains().collect();
        SourceDescriptor {
            backend: BackendConfig::Synthetic(SyntheticConfig {
                power_watts,
                unit_joules,
                wrap_range_raw,
                start_epoch_ns: None,
            }),
            domains,
        }
    }

    /// Synthetic package-only source.
    pub fn synthetic_pkg(watts: f64, unit_joules: f64, wrap_range_raw: u64) -> Self {
        let mut p = DomainMap::new();
        p.insert(DomainId::Pkg, watts);
        Self::synthetic(p, unit_joules, wrap_range_raw)
    }

    pub fn powercap(root: impl Into<PathBuf>, domains: Vec<DomainId>) -> Self {
        SourceDescriptor { backend: BackendConfig::Powercap { root: root.into() }, domains }
    }

    pub fn msr(device_root: impl Into<PathBuf>, cpu: u32, domains: Vec<DomainId>) -> Self {
        SourceDescriptor { backend: BackendConfig::MsrDevice { device_root: device_root.into(), cpu }, domains }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if self.domains.is_empty() {
            return Err(SourceError::InvalidDescriptor("no domains requested".into()));
        }
        if let BackendConfig::Synthetic(cfg) = &self.backend {
            if cfg.wrap_range_raw < 2 {
                return Err(SourceError::InvalidDescriptor("wrap_range_raw must be >= 2".into()));
            }
            EnergyUnit::new(cfg.unit_joules)?;
            for (d, w) in cfg.power_watts.iter() {
                if !(w.is_finite() && *w >= 0.0) {
                    return Err(SourceError::InvalidDescriptor(format!("power for {d} must be >= 0, got {w}")));
                }
            }
        }
        Ok(())
    }
}

/// Resolved per-domain counter properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub wrap_range: u64,
    pub unit: EnergyUnit,
}

#[derive(Debug)]
struct CounterFile {
    path: PathBuf,
    file: File,
}

impl CounterFile {
    fn open(path: &Path) -> Result<Self, SourceError> {
        let file = File::open(path).map_err(|e| classify_io(path, e))?;
        Ok(CounterFile { path: path.to_path_buf(), file })
    }

    fn reopen(&mut self) -> Result<(), SourceError> {
        self.file = File::open(&self.path).map_err(|e| classify_io(&self.path, e))?;
        Ok(())
    }
}

#[derive(Debug)]
enum Backend {
    Powercap { files: DomainMap<CounterFile> },
    Msr { device: CounterFile },
    Synthetic { power_watts: DomainMap<f64>, unit: f64, range: u64, start_ns: u64 },
}

/// An open counter source. Used by one sampler at a time; may be moved
/// between threads.
pub struct Source {
    descriptor: SourceDescriptor,
    meta: DomainMap<DomainMeta>,
    backend: Backend,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Source").field("descriptor", &self.descriptor).field("meta", &self.meta).finish_non_exhaustive()
    }
}

fn classify_io(path: &Path, e: io::Error) -> SourceError {
    match e.kind() {
        io::ErrorKind::NotFound => SourceError::MissingBackend(path.to_path_buf()),
        io::ErrorKind::PermissionDenied => SourceError::PermissionDenied(path.to_path_buf()),
        _ => SourceError::ReadFailed { path: path.to_path_buf(), source: e },
    }
}

fn read_sysfs_u64(path: &Path) -> Result<u64, SourceError> {
    let text = fs::read_to_string(path).map_err(|e| classify_io(path, e))?;
    parse_decimal(path, text.as_bytes())
}

fn parse_decimal(path: &Path, bytes: &[u8]) -> Result<u64, SourceError> {
    std::str::from_utf8(bytes).ok().and_then(|s| s.trim().parse::<u64>().ok()).ok_or_else(|| SourceError::ReadFailed {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, "not an unsigned decimal"),
    })
}

fn read_msr(dev: &CounterFile, register: u32) -> Result<u64, io::Error> {
    let mut buf = [0u8; 8];
    dev.file.read_exact_at(&mut buf, register as u64)?;
    Ok(u64::from_le_bytes(buf))
}

/// Locate the powercap directory for each domain under `<root>`.
///
/// `intel-rapl:0` is the package; its `intel-rapl:0:N` children are matched
/// by their `name` file (`core`, `uncore`, `dram`).
pub(crate) fn powercap_domain_dirs(root: &Path) -> Result<DomainMap<PathBuf>, SourceError> {
    let pkg = root.join("intel-rapl:0");
    if !pkg.is_dir() {
        return Err(SourceError::MissingBackend(pkg));
    }
    let mut dirs = DomainMap::new();
    dirs.insert(DomainId::Pkg, pkg.clone());
    let entries = fs::read_dir(&pkg).map_err(|e| classify_io(&pkg, e))?;
    for entry in entries.flatten() {
        let fname = entry.file_name();
        let Some(fname) = fname.to_str() else { continue };
        if !fname.starts_with("intel-rapl:0:") {
            continue;
        }
        let dir = entry.path();
        let Ok(name) = fs::read_to_string(dir.join("name")) else { continue };
        let domain = match name.trim() {
            "core" => DomainId::Pp0,
            "uncore" => DomainId::Pp1,
            "dram" => DomainId::Dram,
            _ => continue,
        };
        dirs.insert(domain, dir);
    }
    Ok(dirs)
}

/// Snap to the nearest integer when within floating-point noise of it,
/// otherwise floor. Keeps exact products like 10 W * 2 ms / 1 uJ at 20000.
fn quantize(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as u64
    } else {
        x.floor() as u64
    }
}

impl Source {
    /// Open with the default monotonic clock.
    pub fn open(desc: &SourceDescriptor) -> Result<Self, SourceError> {
        Self::open_with_clock(desc, Arc::new(MonotonicClock::new()))
    }

    /// Open with an explicit clock. The synthetic backend derives its counter
    /// values from this clock; the sampler timestamps come from it too.
    pub fn open_with_clock(desc: &SourceDescriptor, clock: Arc<dyn Clock>) -> Result<Self, SourceError> {
        desc.validate()?;
        let mut descriptor = desc.clone();
        let mut meta = DomainMap::new();
        let backend = match &mut descriptor.backend {
            BackendConfig::Powercap { root } => {
                let dirs = powercap_domain_dirs(root)?;
                let mut files = DomainMap::new();
                for &d in &desc.domains {
                    let dir = dirs.get(d).ok_or(SourceError::UnsupportedDomain(d))?;
                    let max = read_sysfs_u64(&dir.join("max_energy_range_uj"))?;
                    let counter = CounterFile::open(&dir.join("energy_uj"))?;
                    let mut buf = [0u8; 32];
                    counter.file.read_at(&mut buf, 0).map_err(|e| classify_io(&counter.path, e))?;
                    meta.insert(d, DomainMeta { wrap_range: max.saturating_add(1), unit: EnergyUnit::MICROJOULE });
                    files.insert(d, counter);
                }
                Backend::Powercap { files }
            }
            BackendConfig::MsrDevice { device_root, cpu } => {
                let path = device_root.join(cpu.to_string()).join("msr");
                if !path.exists() {
                    return Err(SourceError::MissingBackend(path));
                }
                let device = CounterFile::open(&path)?;
                let unit_reg = read_msr(&device, MSR_POWER_UNIT).map_err(|e| classify_io(&path, e))?;
                let unit = EnergyUnit::from_power_unit_register(unit_reg);
                for &d in &desc.domains {
                    read_msr(&device, d.msr_address()).map_err(|_| SourceError::UnsupportedDomain(d))?;
                    meta.insert(d, DomainMeta { wrap_range: MSR_COUNTER_RANGE, unit });
                }
                Backend::Msr { device }
            }
            BackendConfig::Synthetic(cfg) => {
                let start_ns = *cfg.start_epoch_ns.get_or_insert_with(|| clock.now_ns());
                let unit = EnergyUnit::new(cfg.unit_joules)?;
                for &d in &desc.domains {
                    if !cfg.power_watts.contains(d) {
                        return Err(SourceError::UnsupportedDomain(d));
                    }
                    meta.insert(d, DomainMeta { wrap_range: cfg.wrap_range_raw, unit });
                }
                Backend::Synthetic {
                    power_watts: cfg.power_watts,
                    unit: cfg.unit_joules,
                    range: cfg.wrap_range_raw,
                    start_ns,
                }
            }
        };
        Ok(Source { descriptor, meta, backend, clock })
    }

    /// The descriptor as resolved at open time (synthetic start epoch filled in).
    pub fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    pub fn domains(&self) -> Vec<DomainId> {
        self.meta.domains().collect()
    }

    pub fn meta(&self) -> &DomainMap<DomainMeta> {
        &self.meta
    }

    pub fn wrap_range(&self, d: DomainId) -> Option<u64> {
        self.meta.get(d).map(|m| m.wrap_range)
    }

    pub fn unit(&self, d: DomainId) -> Option<EnergyUnit> {
        self.meta.get(d).map(|m| m.unit)
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    /// Close and reopen the underlying files, the way a naive sampling loop
    /// re-initializes its RAPL interface every iteration.
    pub fn reinit(&mut self) -> Result<(), SourceError> {
        match &mut self.backend {
            Backend::Powercap { files } => {
                for d in DomainId::ALL {
                    if let Some(f) = files.get_mut(d) {
                        f.reopen()?;
                    }
                }
                Ok(())
            }
            Backend::Msr { device } => device.reopen(),
            Backend::Synthetic { .. } => Ok(()),
        }
    }

    pub fn read_all(&mut self) -> Result<RawReading, SourceError> {
        let domains = self.domains();
        self.read_raw(&domains)
    }

    pub fn read_raw(&mut self, domains: &[DomainId]) -> Result<RawReading, SourceError> {
        let mut values = DomainMap::new();
        let mut wrap_range = DomainMap::new();
        for &d in domains {
            let meta = *self.meta.get(d).ok_or(SourceError::NotOpened(d))?;
            let v = self.read_one(d, meta.wrap_range)?;
            values.insert(d, v);
            wrap_range.insert(d, meta.wrap_range);
        }
        Ok(RawReading { values, wrap_range })
    }

    fn read_one(&self, d: DomainId, range: u64) -> Result<u64, SourceError> {
        let v = match &self.backend {
            Backend::Powercap { files } => {
                let f = files.get(d).ok_or(SourceError::NotOpened(d))?;
                let mut buf = [0u8; 32];
                let n = f
                    .file
                    .read_at(&mut buf, 0)
                    .map_err(|e| SourceError::ReadFailed { path: f.path.clone(), source: e })?;
                parse_decimal(&f.path, &buf[..n])?
            }
            Backend::Msr { device } => {
                let raw = read_msr(device, d.msr_address())
                    .map_err(|e| SourceError::ReadFailed { path: device.path.clone(), source: e })?;
                raw & 0xffff_ffff
            }
            Backend::Synthetic { power_watts, unit, range, start_ns } => {
                let watts = *power_watts.get(d).ok_or(SourceError::NotOpened(d))?;
                let elapsed = self.clock.now_ns().saturating_sub(*start_ns);
                synthetic_raw(watts, *unit, elapsed) % range
            }
        };
        if v >= range {
            let path = match &self.backend {
                Backend::Powercap { files } => files.get(d).map(|f| f.path.clone()).unwrap_or_default(),
                _ => PathBuf::new(),
            };
            return Err(SourceError::ReadFailed {
                path,
                source: io::Error::new(io::ErrorKind::InvalidData, "counter value beyond wrap range"),
            });
        }
        Ok(v)
    }
}

/// Unwrapped synthetic counter: `floor(P * t / unit)`.
pub fn synthetic_raw(power_watts: f64, unit_joules: f64, elapsed_ns: u64) -> u64 {
    quantize(power_watts * elapsed_ns as f64 / (unit_joules * NANOS_PER_SEC as f64))
}

/// Convenience for `open_source` naming.
pub fn open_source(desc: &SourceDescriptor) -> Result<Source, SourceError> {
    Source::open(desc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;

    fn sim_source(watts: f64, unit: f64, range: u64) -> (Arc<SimClock>, Source) {
        let clock = Arc::new(SimClock::new(0));
        let mut desc = SourceDescriptor::synthetic_pkg(watts, unit, range);
        if let BackendConfig::Synthetic(c) = &mut desc.backend {
            c.start_epoch_ns = Some(0);
        }
        let src = Source::open_with_clock(&desc, clock.clone()).unwrap();
        (clock, src)
    }

    #[test]
    fn synthetic_open_echoes_config() {
        let (_c, src) = sim_source(10.0, 1e-6, 1_000_000);
        assert_eq!(src.wrap_range(DomainId::Pkg), Some(1_000_000));
        assert_eq!(src.unit(DomainId::Pkg), Some(EnergyUnit { joules_per_raw: 1e-6 }));
        assert_eq!(src.domains(), vec![DomainId::Pkg]);
    }

    #[test]
    fn synthetic_reads() {
        let (c, mut src) = sim_source(10.0, 1e-6, 1 << 32);
        assert_eq!(src.read_all().unwrap().values.pkg, Some(0));
        c.advance_to(2_000_000);
        assert_eq!(src.read_all().unwrap().values.pkg, Some(20_000));
        assert_eq!(src.read_all().unwrap().values.pkg, Some(20_000));
    }

    #[test]
    fn synthetic_wraps() {
        let (c, mut src) = sim_source(10.0, 1e-6, 15_000);
        c.advance_to(2_000_000);
        let r = src.read_all().unwrap();
        assert_eq!(r.values.pkg, Some(5_000));
        assert_eq!(r.wrap_range.pkg, Some(15_000));
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let bad_range = SourceDescriptor::synthetic_pkg(10.0, 1e-6, 1);
        assert!(matches!(Source::open(&bad_range), Err(SourceError::InvalidDescriptor(_))));
        let bad_power = SourceDescriptor::synthetic_pkg(-1.0, 1e-6, 100);
        assert!(matches!(Source::open(&bad_power), Err(SourceError::InvalidDescriptor(_))));
        let mut missing = SourceDescriptor::synthetic_pkg(5.0, 1e-6, 100);
        missing.domains.push(DomainId::Dram);
        assert!(matches!(Source::open(&missing), Err(SourceError::UnsupportedDomain(DomainId::Dram))));
        let mut empty = SourceDescriptor::synthetic_pkg(5.0, 1e-6, 100);
        empty.domains.clear();
        assert!(matches!(Source::open(&empty), Err(SourceError::InvalidDescriptor(_))));
    }

    #[test]
    fn reading_unopened_domain_fails() {
        let (_c, mut src) = sim_source(1.0, 1e-6, 100);
        assert!(matches!(src.read_raw(&[DomainId::Pp1]), Err(SourceError::NotOpened(DomainId::Pp1))));
    }

    #[test]
    fn raw_to_joules_examples() {
        assert_eq!(raw_to_joules(1_000_000, EnergyUnit::MICROJOULE), 1.0);
        assert_eq!(raw_to_joules(0, EnergyUnit { joules_per_raw: 0.123 }), 0.0);
    }

    #[test]
    fn msr_unit_decode_and_conversion() {
        // ESU = 14 in bits 12:8 (a common Intel value 0xA0E03).
        let unit = EnergyUnit::from_power_unit_register(0x000A_0E03);
        assert_eq!(unit.joules_per_raw, 1.0 / 16384.0);
        assert_eq!(raw_to_joules(32768, unit), 2.0);
    }

    #[test]
    fn powercap_missing_root() {
        let desc = SourceDescriptor::powercap("/nonexistent/powercap", vec![DomainId::Pkg]);
        assert!(matches!(Source::open(&desc), Err(SourceError::MissingBackend(_))));
    }

    #[test]
    fn msr_missing_device() {
        let desc = SourceDescriptor::msr("/nonexistent/cpu", 0, vec![DomainId::Pkg]);
        assert!(matches!(Source::open(&desc), Err(SourceError::MissingBackend(_))));
    }

    #[test]
    fn quantize_snaps_float_noise() {
        assert_eq!(quantize(19_999.999_999_999_996), 20_000);
        assert_eq!(quantize(0.5), 0);
        assert_eq!(quantize(7.99), 7);
    }
}
