//! C ABI over `raplkit`.
//!
//! Every function returns an [`RkStatus`]; on failure a description is kept
//! per thread and returned by [`rk_last_error_message`]. Sources are opaque
//! handles released with [`rk_source_free`]. Domain arrays are indexed by
//! [`RkDomain`] and accompanied by a bit mask (`1 << domain`) of valid
//! entries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use raplkit::counter_source::{EnergyUnit, Source, SourceDescriptor, SourceError};
use raplkit::domain::{DomainId, DomainMap};
use raplkit::microbench::per_op;
use raplkit::postprocess::{process_log_file, wrap_delta, PostprocessError};
use raplkit::sampler::{record_to_file, SamplerConfig, SamplerError, SamplerMode, StopSignal};
use raplkit::stats::{self, StatsError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BackendMissing = 3,
    PermissionDenied = 4,
    ReadFailed = 5,
    Io = 6,
    StatsUndefined = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkDomain {
    Pkg = 0,
    Pp0 = 1,
    Pp1 = 2,
    Dram = 3,
}

impl From<RkDomain> for DomainId {
    fn from(d: RkDomain) -> Self {
        match d {
            RkDomain::Pkg => DomainId::Pkg,
            RkDomain::Pp0 => DomainId::Pp0,
            RkDomain::Pp1 => DomainId::Pp1,
            RkDomain::Dram => DomainId::Dram,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkSamplerMode {
    Naive = 0,
    Batched = 1,
    Ring = 2,
}

/// Opaque counter source.
pub struct RkSource {
    inner: Source,
}

type Failure = (RkStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RkStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RkStatus::Panic
        }
    }
}

fn null() -> Failure {
    (RkStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> Failure {
    (RkStatus::InvalidArgument, msg.into())
}

fn from_source(e: SourceError) -> Failure {
    let status = match &e {
        SourceError::MissingBackend(_) => RkStatus::BackendMissing,
        SourceError::PermissionDenied(_) => RkStatus::PermissionDenied,
        SourceError::ReadFailed { .. } => RkStatus::ReadFailed,
        SourceError::UnsupportedDomain(_) | SourceError::NotOpened(_) | SourceError::InvalidDescriptor(_) => {
            RkStatus::InvalidArgument
        }
    };
    (status, e.to_string())
}

fn from_stats(e: StatsError) -> Failure {
    let status = match e {
        StatsError::DegenerateSample => RkStatus::StatsUndefined,
        _ => RkStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn from_post(e: PostprocessError) -> Failure {
    let status = match &e {
        PostprocessError::Io { .. } | PostprocessError::Log(_) => RkStatus::Io,
        _ => RkStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn from_sampler(e: SamplerError) -> Failure {
    let status = match &e {
        SamplerError::InvalidConfig(_) => RkStatus::InvalidArgument,
        _ => RkStatus::Io,
    };
    (status, e.to_string())
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null());
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn domains_from_mask(mask: u32) -> Result<Vec<DomainId>, Failure> {
    if mask == 0 || mask >> 4 != 0 {
        return Err(invalid(format!("invalid domain mask {mask:#x}")));
    }
    Ok(DomainId::ALL.into_iter().filter(|d| mask & (1 << d.index()) != 0).collect())
}

fn write_domain_array(map: &DomainMap<f64>, values: &mut [f64; 4]) -> u32 {
    let mut mask = 0;
    for (d, v) in map.iter() {
        values[d.index()] = *v;
        mask |= 1 << d.index();
    }
    mask
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

fn open_boxed(desc: &SourceDescriptor, out_src: *mut *mut RkSource) -> Result<(), Failure> {
    let slot = unsafe { out(out_src)? };
    let inner = Source::open(desc).map_err(from_source)?;
    *slot = Box::into_raw(Box::new(RkSource { inner }));
    Ok(())
}

/// Constant-power synthetic source on the monotonic clock.
///
/// # Safety
/// `out_src` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_source_open_synthetic(
    power_watts: f64,
    unit_joules: f64,
    wrap_range: u64,
    domain_mask: u32,
    out_src: *mut *mut RkSource,
) -> RkStatus {
    guard(|| {
        let power: DomainMap<f64> = domains_from_mask(domain_mask)?.into_iter().map(|d| (d, power_watts)).collect();
        open_boxed(&SourceDescriptor::synthetic(power, unit_joules, wrap_range), out_src)
    })
}

/// powercap sysfs source; `root` is usually `/sys/class/powercap`.
///
/// # Safety
/// `root` must be a NUL-terminated string and `out_src` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_source_open_powercap(
    root: *const c_char,
    domain_mask: u32,
    out_src: *mut *mut RkSource,
) -> RkStatus {
    guard(|| {
        let root = path_arg(root)?;
        open_boxed(&SourceDescriptor::powercap(root, domains_from_mask(domain_mask)?), out_src)
    })
}

/// MSR device source; `device_root` is usually `/dev/cpu`.
///
/// # Safety
/// `device_root` must be a NUL-terminated string and `out_src` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_source_open_msr(
    device_root: *const c_char,
    cpu: u32,
    domain_mask: u32,
    out_src: *mut *mut RkSource,
) -> RkStatus {
    guard(|| {
        let root = path_arg(device_root)?;
        open_boxed(&SourceDescriptor::msr(root, cpu, domains_from_mask(domain_mask)?), out_src)
    })
}

/// Source from a JSON descriptor, e.g.
/// `{"backend":"powercap","domains":["pkg","dram"]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out_src` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_source_open_json(json: *const c_char, out_src: *mut *mut RkSource) -> RkStatus {
    guard(|| {
        if json.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| invalid("descriptor is not UTF-8"))?;
        let desc: SourceDescriptor = serde_json::from_str(text).map_err(|e| invalid(format!("bad descriptor: {e}")))?;
        open_boxed(&desc, out_src)
    })
}

/// Release a source. NULL is ignored.
///
/// # Safety
/// `src` must come from an `rk_source_open_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rk_source_free(src: *mut RkSource) {
    if !src.is_null() {
        drop(Box::from_raw(src));
    }
}

/// Read every opened domain. `values` receives 4 entries indexed by
/// `RkDomain`; `out_mask` marks which were read.
///
/// # Safety
/// `src` must be a live handle, `values` point to 4 writable `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn rk_source_read(src: *mut RkSource, values: *mut u64, out_mask: *mut u32) -> RkStatus {
    guard(|| {
        let s = out(src)?;
        if values.is_null() {
            return Err(null());
        }
        let vals = std::slice::from_raw_parts_mut(values, 4);
        let mask = out(out_mask)?;
        let r = s.inner.read_all().map_err(from_source)?;
        *mask = 0;
        for (d, v) in r.values.iter() {
            vals[d.index()] = *v;
            *mask |= 1 << d.index();
        }
        Ok(())
    })
}

/// Wrap range and joules-per-raw-unit of an opened domain.
///
/// # Safety
/// `src` must be a live handle; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn rk_source_domain_info(
    src: *const RkSource,
    domain: RkDomain,
    out_wrap_range: *mut u64,
    out_joules_per_raw: *mut f64,
) -> RkStatus {
    guard(|| {
        let s = src.as_ref().ok_or_else(null)?;
        let d = DomainId::from(domain);
        let meta = s.inner.meta().get(d).ok_or_else(|| from_source(SourceError::NotOpened(d)))?;
        *out(out_wrap_range)? = meta.wrap_range;
        *out(out_joules_per_raw)? = meta.unit.joules_per_raw;
        Ok(())
    })
}

/// Counter increment from `prev` to `curr` modulo `range`.
///
/// # Safety
/// `out_delta` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rk_wrap_delta(prev: u64, curr: u64, range: u64, out_delta: *mut u64) -> RkStatus {
    guard(|| {
        *out(out_delta)? = wrap_delta(prev, curr, range).map_err(from_post)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn rk_raw_to_joules(raw: u64, joules_per_raw: f64) -> f64 {
    raplkit::raw_to_joules(raw, EnergyUnit { joules_per_raw })
}

/// Sample `src` at `hz` for `duration_ns` into a CSV log plus `<path>.json`.
/// `out_samples` may be NULL.
///
/// # Safety
/// `src` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rk_sample_to_csv(
    src: *mut RkSource,
    mode: RkSamplerMode,
    hz: f64,
    duration_ns: u64,
    path: *const c_char,
    out_samples: *mut u64,
) -> RkStatus {
    guard(|| {
        let s = out(src)?;
        let path = path_arg(path)?;
        if !(hz.is_finite() && hz > 0.0) {
            return Err(invalid("hz must be > 0"));
        }
        let mode = match mode {
            RkSamplerMode::Naive => SamplerMode::Naive,
            RkSamplerMode::Batched => SamplerMode::Batched,
            RkSamplerMode::Ring => SamplerMode::Ring,
        };
        let cfg = SamplerConfig {
            period_ns: (1e9 / hz).round().max(1.0) as u64,
            duration_ns: Some(duration_ns),
            ..SamplerConfig::default()
        };
        let stats = record_to_file(mode, &mut s.inner, &cfg, &path, &StopSignal::new()).map_err(from_sampler)?;
        if let Some(o) = out_samples.as_mut() {
            *o = stats.samples_taken;
        }
        Ok(())
    })
}

/// Post-process a sample log; writes `<log>.intervals.csv` and
/// `<log>.summary.json` next to it and returns per-domain joules.
///
/// # Safety
/// `log_path` NUL-terminated; `total_joules` points to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rk_log_summarize(
    log_path: *const c_char,
    total_joules: *mut f64,
    out_mask: *mut u32,
    out_duration_s: *mut f64,
) -> RkStatus {
    guard(|| {
        let path = path_arg(log_path)?;
        if total_joules.is_null() {
            return Err(null());
        }
        let totals: &mut [f64; 4] = &mut *(total_joules as *mut [f64; 4]);
        let mask = out(out_mask)?;
        let dur = out(out_duration_s)?;
        let (_, summary) = process_log_file(&path, &path).map_err(from_post)?;
        *mask = write_domain_array(&summary.total, totals);
        *dur = summary.duration_s;
        Ok(())
    })
}

unsafe fn groups<'a>(values: *const f64, sizes: *const usize, n_groups: usize) -> Result<Vec<&'a [f64]>, Failure> {
    let sizes = slice(sizes, n_groups)?;
    let total: usize = sizes.iter().sum();
    let all = slice(values, total)?;
    let mut out = Vec::with_capacity(n_groups);
    let mut at = 0;
    for &n in sizes {
        out.push(&all[at..at + n]);
        at += n;
    }
    Ok(out)
}

/// Kruskal–Wallis H over `n_groups` groups stored back to back in `values`.
///
/// # Safety
/// `values` holds `sum(group_sizes)` doubles; `group_sizes` holds `n_groups`.
#[no_mangle]
pub unsafe extern "C" fn rk_kruskal_wallis(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out_h: *mut f64,
    out_p: *mut f64,
) -> RkStatus {
    guard(|| {
        let g = groups(values, group_sizes, n_groups)?;
        let r = stats::kruskal_wallis(&g).map_err(from_stats)?;
        *out(out_h)? = r.statistic;
        *out(out_p)? = r.p_value;
        Ok(())
    })
}

/// Dunn's test with Bonferroni adjustment; writes the `n_groups x n_groups`
/// row-major matrix of adjusted p-values.
///
/// # Safety
/// As for [`rk_kruskal_wallis`]; `out_p_adjusted` holds `n_groups^2` doubles.
#[no_mangle]
pub unsafe extern "C" fn rk_dunn_bonferroni(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out_p_adjusted: *mut f64,
) -> RkStatus {
    guard(|| {
        let g = groups(values, group_sizes, n_groups)?;
        let r = stats::dunn_posthoc(&g).map_err(from_stats)?;
        if out_p_adjusted.is_null() {
            return Err(null());
        }
        let dst = std::slice::from_raw_parts_mut(out_p_adjusted, n_groups * n_groups);
        for (i, row) in r.p_adjusted.iter().enumerate() {
            dst[i * n_groups..(i + 1) * n_groups].copy_from_slice(row);
        }
        Ok(())
    })
}

/// # Safety
/// `x`/`y` hold `nx`/`ny` doubles; `out_delta` valid.
#[no_mangle]
pub unsafe extern "C" fn rk_cliffs_delta(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out_delta: *mut f64,
) -> RkStatus {
    guard(|| {
        *out(out_delta)? = stats::cliffs_delta(slice(x, nx)?, slice(y, ny)?).map_err(from_stats)?;
        Ok(())
    })
}

/// # Safety
/// `x` holds `n` doubles; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn rk_shapiro_wilk(x: *const f64, n: usize, out_w: *mut f64, out_p: *mut f64) -> RkStatus {
    guard(|| {
        let r = stats::shapiro_wilk(slice(x, n)?).map_err(from_stats)?;
        *out(out_w)? = r.statistic;
        *out(out_p)? = r.p_value;
        Ok(())
    })
}

/// Absolute and percentage overhead of a tool median over a baseline median.
///
/// # Safety
/// Output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn rk_overhead(
    baseline_median: f64,
    tool_median: f64,
    out_delta_t: *mut f64,
    out_pct_delta: *mut f64,
) -> RkStatus {
    guard(|| {
        let r = stats::overhead_from_medians(baseline_median, tool_median);
        *out(out_delta_t)? = r.delta_t;
        *out(out_pct_delta)? = r.pct_delta;
        Ok(())
    })
}

/// Per-operation latency; pass NaN as `baseline_batch_ms` for no baseline.
///
/// # Safety
/// Output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn rk_per_op(
    median_batch_ms: f64,
    baseline_batch_ms: f64,
    iterations: u64,
    out_per_op_ms: *mut f64,
    out_baseline_subtracted_ms: *mut f64,
) -> RkStatus {
    guard(|| {
        if iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        let base = (!baseline_batch_ms.is_nan()).then_some(baseline_batch_ms);
        let r = per_op(median_batch_ms, base, iterations);
        *out(out_per_op_ms)? = r.per_op_ms;
        *out(out_baseline_subtracted_ms)? = r.baseline_subtracted_per_op_ms;
        Ok(())
    })
}
