//! Randomized full-factorial experiment runner.
//!
//! Every (tool, benchmark, repetition) cell is executed once, in a seeded
//! random order. A run starts the tool, takes a counter reading, runs the
//! workload to completion, takes a second reading and stops the tool. Records
//! are appended to a JSON-lines file as soon as each run ends.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter_source::{raw_to_joules, RawReading, Source, SourceDescriptor, SourceError};
use crate::domain::{DomainId, DomainMap};
use crate::postprocess::wrap_delta;
use crate::sampler::{record_to_file, SamplerConfig, SamplerMode, SamplerStats, StopSignal};

pub const RESULTS_FILE: &str = "runs.jsonl";
pub const BASELINE_TOOL: &str = "none";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("plan has no {0}")]
    EmptyAxis(&'static str),
    #[error("invalid plan config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {}: {source}", path.display())]
    ConfigIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot persist results to {}: {source}", path.display())]
    Persist {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at {}:{line}: {msg}", path.display())]
    MalformedRecord { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Source(#[from] SourceError),
}

fn default_grace() -> f64 {
    2.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ToolLaunch {
    /// Baseline: only the workload runs.
    #[default]
    None,
    /// External tool; `{out_dir}` and `{run_id}` are substituted, then the
    /// line runs under `sh -c` in its own process group.
    Command {
        template: String,
        #[serde(default = "default_grace")]
        grace_s: f64,
    },
    /// In-process sampler writing `<run_id>.<mode>.csv` into the output dir.
    Builtin {
        mode: SamplerMode,
        #[serde(default)]
        sampler: SamplerConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub id: String,
    #[serde(default)]
    pub launch: ToolLaunch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub id: String,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupSpec {
    pub tool: String,
    pub benchmark: String,
    pub duration_s: f64,
}

fn default_repetitions() -> u32 {
    15
}
fn default_cooldown() -> f64 {
    30.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_source() -> SourceDescriptor {
    SourceDescriptor::powercap(crate::counter_source::DEFAULT_POWERCAP_ROOT, vec![DomainId::Pkg])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub tools: Vec<ToolSpec>,
    pub benchmarks: Vec<BenchmarkSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    /// `None`: two 30 s warm-ups on seeded random cells. `Some([])`: none.
    #[serde(default)]
    pub warmup: Option<Vec<WarmupSpec>>,
    #[serde(default = "default_cooldown")]
    pub cooldown_s: f64,
    #[serde(default = "default_source")]
    pub source: SourceDescriptor,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl PlanConfig {
    /// Load from TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text =
            fs::read_to_string(path).map_err(|source| OrchestratorError::ConfigIo { path: path.into(), source })?;
        let cfg: PlanConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.tools.is_empty() {
            return Err(OrchestratorError::EmptyAxis("tools"));
        }
        if self.benchmarks.is_empty() {
            return Err(OrchestratorError::EmptyAxis("benchmarks"));
        }
        if self.repetitions == 0 {
            return Err(OrchestratorError::EmptyAxis("repetitions"));
        }
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        for (i, t) in self.tools.iter().enumerate() {
            if self.tools[..i].iter().any(|o| o.id == t.id) {
                return bad(format!("duplicate tool id `{}`", t.id));
            }
            if let ToolLaunch::Builtin { sampler, .. } = &t.launch {
                sampler.validate().map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
            }
        }
        for (i, b) in self.benchmarks.iter().enumerate() {
            if self.benchmarks[..i].iter().any(|o| o.id == b.id) {
                return bad(format!("duplicate benchmark id `{}`", b.id));
            }
        }
        if !(self.cooldown_s >= 0.0 && self.cooldown_s.is_finite()) {
            return bad("cooldown_s must be finite and >= 0".into());
        }
        for w in self.warmup.iter().flatten() {
            if self.tool(&w.tool).is_none() || self.benchmark(&w.benchmark).is_none() {
                return bad(format!("warm-up references unknown cell {}/{}", w.tool, w.benchmark));
            }
        }
        self.source.validate()?;
        Ok(())
    }

    pub fn tool(&self, id: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.id == id)
    }

    pub fn benchmark(&self, id: &str) -> Option<&BenchmarkSpec> {
        self.benchmarks.iter().find(|b| b.id == id)
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join(RESULTS_FILE)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub index: usize,
    pub tool: String,
    pub benchmark: String,
    pub repetition: u32,
}

impl PlanEntry {
    pub fn run_id(&self) -> String {
        format!("{:04}-{}-{}-r{:02}", self.index, self.tool, self.benchmark, self.repetition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub seed: u64,
    pub warmup: Vec<WarmupSpec>,
    pub entries: Vec<PlanEntry>,
}

/// Seeded permutation of the full factorial.
pub fn build_plan(cfg: &PlanConfig) -> Result<RunPlan, OrchestratorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cells = Vec::with_capacity(cfg.tools.len() * cfg.benchmarks.len() * cfg.repetitions as usize);
    for t in &cfg.tools {
        for b in &cfg.benchmarks {
            for r in 0..cfg.repetitions {
                cells.push((t.id.clone(), b.id.clone(), r));
            }
        }
    }
    cells.shuffle(&mut rng);
    let entries = cells
        .into_iter()
        .enumerate()
        .map(|(index, (tool, benchmark, repetition))| PlanEntry { index, tool, benchmark, repetition })
        .collect();

    let warmup = match &cfg.warmup {
        Some(w) => w.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            (0..2)
                .map(|_| WarmupSpec {
                    tool: cfg.tools.choose(&mut rng).expect("non-empty").id.clone(),
                    benchmark: cfg.benchmarks.choose(&mut rng).expect("non-empty").id.clone(),
                    duration_s: 30.0,
                })
                .collect()
        }
    };
    Ok(RunPlan { seed: cfg.seed, warmup, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub tool: String,
    pub benchmark: String,
    pub repetition: u32,
    pub started_at: String,
    pub ended_at: String,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
    pub duration_s: f64,
    pub rapl_before: Option<RawReading>,
    pub rapl_after: Option<RawReading>,
    /// Wrap-corrected joules per domain.
    pub energy_j: DomainMap<f64>,
    pub exit_status: Option<i32>,
    pub exit_signal: Option<i32>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_log: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler_stats: Option<SamplerStats>,
}

/// Joules per domain between two readings of the same source.
pub fn reading_energy(src: &Source, before: &RawReading, after: &RawReading) -> Result<DomainMap<f64>, String> {
    let mut out = DomainMap::new();
    for (d, &a) in before.values.iter() {
        let (Some(&b), Some(&range), Some(unit)) = (after.values.get(d), before.wrap_range.get(d), src.unit(d)) else {
            continue;
        };
        let delta = wrap_delta(a, b, range).map_err(|e| e.to_string())?;
        out.insert(d, raw_to_joules(delta, unit));
    }
    Ok(out)
}

fn substitute(template: &str, out_dir: &Path, run_id: &str) -> String {
    template.replace("{out_dir}", &out_dir.display().to_string()).replace("{run_id}", run_id)
}

/// `sh -c <cmd>` in its own process group, so stopping it reaches every
/// process the line started.
fn shell(cmd: &str) -> Command {
    let mut c = Command::new("sh");
    c.arg("-c").arg(cmd).stdin(Stdio::null()).process_group(0);
    c
}

/// Poll until the child exits or `deadline` passes.
fn wait_until(child: &mut Child, deadline: Option<Instant>) -> io::Result<Option<ExitStatus>> {
    loop {
        if let Some(s) = child.try_wait()? {
            return Ok(Some(s));
        }
        match deadline {
            Some(d) if Instant::now() >= d => return Ok(None),
            Some(_) => std::thread::sleep(Duration::from_millis(5)),
            None => return child.wait().map(Some),
        }
    }
}

fn signal_group(child: &Child, sig: libc::c_int) {
    // SAFETY: signal delivery to the process group led by a child we have
    // not reaped yet, so the id cannot have been recycled.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), sig);
    }
}

/// SIGTERM to the group, then SIGKILL after `grace`.
fn terminate(child: &mut Child, grace: Duration) -> io::Result<ExitStatus> {
    if let Some(s) = child.try_wait()? {
        return Ok(s);
    }
    signal_group(child, libc::SIGTERM);
    if let Some(s) = wait_until(child, Some(Instant::now() + grace))? {
        return Ok(s);
    }
    signal_group(child, libc::SIGKILL);
    child.wait()
}

enum RunningTool {
    None,
    External { child: Child, grace: Duration },
    Builtin { stop: StopSignal, handle: JoinHandle<Result<SamplerStats, String>>, log: PathBuf },
}

fn start_tool(spec: &ToolSpec, src: &Source, out_dir: &Path, run_id: &str) -> Result<RunningTool, String> {
    match &spec.launch {
        ToolLaunch::None => Ok(RunningTool::None),
        ToolLaunch::Command { template, grace_s } => {
            let line = substitute(template, out_dir, run_id);
            let child = shell(&line)
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| format!("tool `{}` failed to launch: {e}", spec.id))?;
            Ok(RunningTool::External { child, grace: Duration::from_secs_f64(grace_s.max(0.0)) })
        }
        ToolLaunch::Builtin { mode, sampler } => {
            let mut tool_src = Source::open_with_clock(src.descriptor(), src.clock())
                .map_err(|e| format!("tool `{}` cannot open source: {e}", spec.id))?;
            let log = out_dir.join(format!("{run_id}.{mode}.csv"));
            let stop = StopSignal::new();
            let (mode, cfg, path, s) = (*mode, sampler.clone(), log.clone(), stop.clone());
            let handle = std::thread::spawn(move || {
                record_to_file(mode, &mut tool_src, &cfg, &path, &s).map_err(|e| e.to_string())
            });
            Ok(RunningTool::Builtin { stop, handle, log })
        }
    }
}

/// Stop a tool; returns sampler artifacts and a problem description if the
/// tool failed.
fn stop_tool(tool: RunningTool) -> (Option<PathBuf>, Option<SamplerStats>, Option<String>) {
    match tool {
        RunningTool::None => (None, None, None),
        RunningTool::External { mut child, grace } => {
            let early = match child.try_wait() {
                Ok(Some(s)) if !s.success() => Some(format!("tool exited early with {s}")),
                _ => None,
            };
            match terminate(&mut child, grace) {
                Ok(_) => (None, None, early),
                Err(e) => (None, None, Some(format!("cannot stop tool: {e}"))),
            }
        }
        RunningTool::Builtin { stop, handle, log } => {
            stop.stop();
            match handle.join() {
                Ok(Ok(stats)) => (Some(log), Some(stats), None),
                Ok(Err(e)) => (Some(log), None, Some(format!("builtin sampler failed: {e}"))),
                Err(_) => (Some(log), None, Some("builtin sampler panicked".into())),
            }
        }
    }
}

fn now_iso() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Execute one cell. Failures of any kind are recorded in the returned
/// record rather than returned as errors.
pub fn execute_run(cfg: &PlanConfig, entry: &PlanEntry, src: &mut Source) -> RunRecord {
    let run_id = entry.run_id();
    let clock = src.clock();
    let mut errors: Vec<String> = Vec::new();
    let (Some(tool), Some(bench)) = (cfg.tool(&entry.tool), cfg.benchmark(&entry.benchmark)) else {
        let now = clock.now_ns();
        let ts = now_iso();
        return RunRecord {
            index: entry.index,
            tool: entry.tool.clone(),
            benchmark: entry.benchmark.clone(),
            repetition: entry.repetition,
            started_at: ts.clone(),
            ended_at: ts,
            t_start_ns: now,
            t_end_ns: now,
            duration_s: 0.0,
            rapl_before: None,
            rapl_after: None,
            energy_j: DomainMap::new(),
            exit_status: None,
            exit_signal: None,
            failed: true,
            error: Some("plan entry references an unknown tool or benchmark".into()),
            sample_log: None,
            sampler_stats: None,
        };
    };

    let running = start_tool(tool, src, &cfg.output_dir, &run_id).unwrap_or_else(|e| {
        errors.push(e);
        RunningTool::None
    });
    let tool_launched = errors.is_empty();

    let started_at = now_iso();
    let before = src.read_all().map_err(|e| errors.push(format!("initial reading: {e}"))).ok();
    let t_start_ns = clock.now_ns();

    let mut exit_status = None;
    let mut exit_signal = None;
    if tool_launched {
        let line = substitute(&bench.command, &cfg.output_dir, &run_id);
        match shell(&line).spawn().and_then(|mut c| c.wait()) {
            Ok(s) => {
                exit_status = s.code();
                exit_signal = s.signal();
                if !s.success() {
                    errors.push(format!("workload exited with {s}"));
                }
            }
            Err(e) => errors.push(format!("workload failed to start: {e}")),
        }
    }

    let after = src.read_all().map_err(|e| errors.push(format!("final reading: {e}"))).ok();
    let t_end_ns = clock.now_ns();
    let ended_at = now_iso();
    let (sample_log, sampler_stats, tool_err) = stop_tool(running);
    errors.extend(tool_err);

    let energy_j = match (&before, &after) {
        (Some(b), Some(a)) => reading_energy(src, b, a).unwrap_or_else(|e| {
            errors.push(format!("energy: {e}"));
            DomainMap::new()
        }),
        _ => DomainMap::new(),
    };
    let failed = !errors.is_empty();
    RunRecord {
        index: entry.index,
        tool: entry.tool.clone(),
        benchmark: entry.benchmark.clone(),
        repetition: entry.repetition,
        started_at,
        ended_at,
        t_start_ns,
        t_end_ns,
        duration_s: t_end_ns.saturating_sub(t_start_ns) as f64 / 1e9,
        rapl_before: before,
        rapl_after: after,
        energy_j,
        exit_status,
        exit_signal,
        failed,
        error: failed.then(|| errors.join("; ")),
        sample_log,
        sampler_stats,
    }
}

/// Run a warm-up cell: the workload is killed once `duration_s` elapses.
fn run_warmup(cfg: &PlanConfig, w: &WarmupSpec, src: &Source) {
    let (Some(tool), Some(bench)) = (cfg.tool(&w.tool), cfg.benchmark(&w.benchmark)) else {
        return;
    };
    let run_id = format!("warmup-{}-{}", w.tool, w.benchmark);
    let running = match start_tool(tool, src, &cfg.output_dir, &run_id) {
        Ok(t) => t,
        Err(e) => {
            ::log::warn!("warm-up {run_id}: {e}");
            return;
        }
    };
    let line = substitute(&bench.command, &cfg.output_dir, &run_id);
    let deadline = Instant::now() + Duration::from_secs_f64(w.duration_s.max(0.0));
    match shell(&line).stdout(Stdio::null()).spawn() {
        Ok(mut child) => {
            if let Ok(None) = wait_until(&mut child, Some(deadline)) {
                let _ = terminate(&mut child, Duration::from_secs(2));
            }
        }
        Err(e) => ::log::warn!("warm-up {run_id}: workload failed to start: {e}"),
    }
    let (log, _, err) = stop_tool(running);
    if let Some(e) = err {
        ::log::warn!("warm-up {run_id}: {e}");
    }
    // Warm-up artifacts are not part of the results.
    if let Some(log) = log {
        let _ = fs::remove_file(crate::sampler::LogMetadata::sidecar_path(&log));
        let _ = fs::remove_file(log);
    }
}

fn sleep_interruptible(secs: f64, stop: &StopSignal) {
    let end = Instant::now() + Duration::from_secs_f64(secs);
    while !stop.is_stopped() {
        let now = Instant::now();
        if now >= end {
            break;
        }
        std::thread::sleep((end - now).min(Duration::from_millis(100)));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub records: Vec<RunRecord>,
    pub results_path: PathBuf,
    /// True when the stop signal ended the plan early.
    pub interrupted: bool,
}

impl PlanOutcome {
    pub fn failed_runs(&self) -> usize {
        self.records.iter().filter(|r| r.failed).count()
    }
}

/// Warm-ups, then every plan entry in order. Each record is appended and
/// synced to `<output_dir>/runs.jsonl` before the next run starts.
pub fn run_plan(
    cfg: &PlanConfig,
    plan: &RunPlan,
    src: &mut Source,
    stop: &StopSignal,
) -> Result<PlanOutcome, OrchestratorError> {
    let results_path = cfg.results_path();
    let persist_err = |source| OrchestratorError::Persist { path: results_path.clone(), source };
    fs::create_dir_all(&cfg.output_dir).map_err(persist_err)?;
    let mut out: File = OpenOptions::new().create(true).append(true).open(&results_path).map_err(persist_err)?;

    for w in &plan.warmup {
        if stop.is_stopped() {
            break;
        }
        ::log::info!("warm-up {}/{} for {} s", w.tool, w.benchmark, w.duration_s);
        run_warmup(cfg, w, src);
    }

    let mut records = Vec::with_capacity(plan.entries.len());
    for (k, entry) in plan.entries.iter().enumerate() {
        if stop.is_stopped() {
            break;
        }
        let rec = execute_run(cfg, entry, src);
        ::log::info!(
            "run {}/{} {}/{} r{}: {:.3} s{}",
            k + 1,
            plan.entries.len(),
            rec.tool,
            rec.benchmark,
            rec.repetition,
            rec.duration_s,
            rec.error.as_deref().map(|e| format!(" FAILED: {e}")).unwrap_or_default()
        );
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(persist_err)?;
        out.sync_data().map_err(persist_err)?;
        records.push(rec);
        if k + 1 < plan.entries.len() && cfg.cooldown_s > 0.0 {
            sleep_interruptible(cfg.cooldown_s, stop);
        }
    }
    let interrupted = records.len() < plan.entries.len();
    Ok(PlanOutcome { records, results_path, interrupted })
}

/// Load a results file. A truncated final line (a crash mid-write) is
/// dropped with a warning; malformed lines elsewhere are errors.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, OrchestratorError> {
    let file = File::open(path).map_err(|source| OrchestratorError::ConfigIo { path: path.into(), source })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| OrchestratorError::ConfigIo { path: path.into(), source })?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => {
                ::log::warn!("{}: ignoring truncated last line: {e}", path.display());
            }
            Err(e) => {
                return Err(OrchestratorError::MalformedRecord { path: path.into(), line: i + 1, msg: e.to_string() })
            }
        }
    }
    Ok(out)
}

/// Open the plan's source with the default clock.
pub fn open_plan_source(cfg: &PlanConfig) -> Result<Source, OrchestratorError> {
    Ok(Source::open(&cfg.source)?)
}

/// Open the plan's source against an explicit clock.
pub fn open_plan_source_with_clock(
    cfg: &PlanConfig,
    clock: Arc<dyn crate::clock::Clock>,
) -> Result<Source, OrchestratorError> {
    Ok(Source::open_with_clock(&cfg.source, clock)?)
}
