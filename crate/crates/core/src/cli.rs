//! Command-line front end: `sample`, `bench`, `experiment`, `analyze`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::clock::{Clock, MonotonicClock, SimClock};
use crate::counter_source::{BackendConfig, Source, SourceDescriptor, DEFAULT_MSR_ROOT, DEFAULT_POWERCAP_ROOT};
use crate::domain::{DomainId, DomainMap};
use crate::microbench::{run_suite, BenchSpec, OpKind, SuiteOptions};
use crate::orchestrator::{self, build_plan, read_records, run_plan, PlanConfig, BASELINE_TOOL};
use crate::postprocess::process_log_file;
use crate::sampler::{record_to_file, SamplerConfig, SamplerMode, StopSignal};
use crate::stats::report::{analyze, baseline_contrast_csv, descriptive_csv, dunn_matrix_csv, Observation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "raplkit", version, about = "RAPL energy sampling, microbenchmarks and overhead analysis")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Sample energy counters into a CSV log with a JSON sidecar.
    Sample(SampleArgs),
    /// Time batches of counter-access operations.
    Bench(BenchArgs),
    /// Run a randomized tool x benchmark experiment plan.
    Experiment(ExperimentArgs),
    /// Analyze experiment results or post-process a sample log.
    Analyze(AnalyzeArgs),
}

/// Duration with optional `ms`, `s` or `m` suffix; bare numbers are seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HumanDuration(pub u64);

impl FromStr for HumanDuration {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, scale) = if let Some(v) = s.strip_suffix("ms") {
            (v, 1e6)
        } else if let Some(v) = s.strip_suffix('s') {
            (v, 1e9)
        } else if let Some(v) = s.strip_suffix('m') {
            (v, 60e9)
        } else {
            (s, 1e9)
        };
        let x: f64 = num.trim().parse().map_err(|_| format!("invalid duration `{s}`"))?;
        if !(x.is_finite() && x >= 0.0) {
            return Err(format!("invalid duration `{s}`"));
        }
        Ok(HumanDuration((x * scale).round() as u64))
    }
}

/// `synthetic:<watts>[W]`, `powercap[:<root>]` or `msr[:<cpu>]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceArg {
    Synthetic(f64),
    Powercap(PathBuf),
    Msr(u32),
}

impl FromStr for SourceArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').map_or((s, None), |(k, r)| (k, Some(r)));
        match kind {
            "synthetic" => {
                let w = rest.ok_or("synthetic source needs a power, e.g. synthetic:10W")?;
                let w = w.strip_suffix(['W', 'w']).unwrap_or(w);
                let watts: f64 = w.parse().map_err(|_| format!("invalid power `{w}`"))?;
                if !(watts.is_finite() && watts >= 0.0) {
                    return Err(format!("invalid power `{w}`"));
                }
                Ok(SourceArg::Synthetic(watts))
            }
            "powercap" => Ok(SourceArg::Powercap(rest.unwrap_or(DEFAULT_POWERCAP_ROOT).into())),
            "msr" => {
                let cpu = rest.map_or(Ok(0), |c| c.parse().map_err(|_| format!("invalid cpu `{c}`")))?;
                Ok(SourceArg::Msr(cpu))
            }
            other => Err(format!("unknown source `{other}` (synthetic:<W>|powercap[:root]|msr[:cpu])")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClockArg {
    Monotonic,
    Sim,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value = "batched")]
    pub mode: SamplerMode,
    #[arg(long, default_value = "powercap")]
    pub source: SourceArg,
    /// Comma-separated domains (pkg, pp0, pp1, dram).
    #[arg(long, value_delimiter = ',', default_value = "pkg")]
    pub domains: Vec<DomainId>,
    #[arg(long, default_value_t = 1000.0)]
    pub hz: f64,
    #[arg(long, default_value = "5s")]
    pub duration: HumanDuration,
    #[arg(long)]
    pub max_samples: Option<u64>,
    #[arg(long, default_value_t = 128)]
    pub cache_capacity: usize,
    #[arg(long, default_value_t = 128)]
    pub ring_capacity: usize,
    #[arg(long, default_value = "100ms")]
    pub drain_period: HumanDuration,
    /// Synthetic source only: counter wrap range in raw units.
    #[arg(long)]
    pub wrap_range: Option<u64>,
    /// Synthetic source only: joules per raw unit.
    #[arg(long)]
    pub unit_joules: Option<f64>,
    /// `sim` runs on a virtual clock; synthetic source only.
    #[arg(long, value_enum, default_value = "monotonic")]
    pub clock: ClockArg,
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Operations: noop, clock, file:<path>, powercap:<domain>[@root], msr:<register>[@device].
    #[arg(long, value_delimiter = ',', default_value = "noop,clock,file:/proc/version")]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 15)]
    pub repetitions: u32,
    #[arg(long, default_value_t = 30.0)]
    pub cooldown_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub pin_cpu: Option<usize>,
    /// Directory for `timings.csv` and `summary.csv`.
    #[arg(long, default_value = "bench")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Plan file, JSON or TOML.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub cooldown_s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the run order and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["results", "log"])))]
pub struct AnalyzeArgs {
    /// JSON-lines results from `experiment`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Sample log CSV from `sample` (its `.json` sidecar must sit next to it).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// `duration_s` or `energy_<domain>`.
    #[arg(long, default_value = "duration_s")]
    pub metric: String,
    #[arg(long, default_value = BASELINE_TOOL)]
    pub baseline: String,
    /// Output directory (results) or file prefix (log). Defaults next to the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Experiment(a) => cmd_experiment(a),
        Cmd::Analyze(a) => cmd_analyze(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

enum CliError {
    Usage(String),
    Failed(String),
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Write to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes()).and_then(|_| out.flush());
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn cmd_sample(a: SampleArgs) -> Result<i32, CliError> {
    if !(a.hz.is_finite() && a.hz > 0.0) {
        return Err(CliError::Usage("--hz must be > 0".into()));
    }
    let mut desc = match &a.source {
        SourceArg::Synthetic(w) => {
            let power: DomainMap<f64> = a.domains.iter().map(|&d| (d, *w)).collect();
            SourceDescriptor::synthetic(power, a.unit_joules.unwrap_or(1e-6), a.wrap_range.unwrap_or(1 << 32))
        }
        SourceArg::Powercap(root) => SourceDescriptor::powercap(root.clone(), a.domains.clone()),
        SourceArg::Msr(cpu) => SourceDescriptor::msr(DEFAULT_MSR_ROOT, *cpu, a.domains.clone()),
    };
    let synthetic = matches!(desc.backend, BackendConfig::Synthetic(_));
    if !synthetic && (a.wrap_range.is_some() || a.unit_joules.is_some()) {
        return Err(CliError::Usage("--wrap-range/--unit-joules apply to synthetic sources only".into()));
    }
    let clock: Arc<dyn Clock> = match a.clock {
        ClockArg::Monotonic => Arc::new(MonotonicClock::new()),
        ClockArg::Sim if synthetic => {
            if let BackendConfig::Synthetic(c) = &mut desc.backend {
                c.start_epoch_ns = Some(0);
            }
            Arc::new(SimClock::new(0))
        }
        ClockArg::Sim => return Err(CliError::Usage("--clock sim requires a synthetic source".into())),
    };
    let cfg = SamplerConfig {
        period_ns: (1e9 / a.hz).round().max(1.0) as u64,
        cache_capacity: a.cache_capacity,
        ring_capacity: a.ring_capacity,
        drain_period_ns: a.drain_period.0,
        domains: a.domains.clone(),
        duration_ns: Some(a.duration.0),
        max_samples: a.max_samples,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut src = Source::open_with_clock(&desc, clock).map_err(failed)?;
    let stats = record_to_file(a.mode, &mut src, &cfg, &a.out, &StopSignal::new()).map_err(failed)?;
    emit(&(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"));
    Ok(if stats.read_failures > 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
    let (arg, at) = match arg {
        Some(a) => a.split_once('@').map_or((Some(a), None), |(x, y)| (Some(x), Some(y))),
        None => (None, None),
    };
    match (kind, arg) {
        ("noop", None) => Ok(OpKind::NoOp),
        ("clock", None) => Ok(OpKind::ClockRead),
        ("file", Some(p)) => Ok(OpKind::SmallFileRead { path: p.into() }),
        ("powercap", Some(d)) => Ok(OpKind::PowercapRead {
            domain: d.parse::<DomainId>().map_err(|e| e.to_string())?,
            root: at.unwrap_or(DEFAULT_POWERCAP_ROOT).into(),
        }),
        ("msr", Some(r)) => {
            let register = match r.strip_prefix("0x") {
                Some(h) => u32::from_str_radix(h, 16),
                None => r.parse(),
            }
            .map_err(|_| format!("invalid register `{r}`"))?;
            Ok(OpKind::MsrRead {
                register,
                device: at.map_or_else(|| PathBuf::from(DEFAULT_MSR_ROOT).join("0/msr"), PathBuf::from),
            })
        }
        _ => Err(format!("invalid op `{s}`")),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<i32, CliError> {
    let specs = a
        .ops
        .iter()
        .map(|o| {
            parse_op(o).map(|op| BenchSpec {
                op,
                iterations: a.iterations,
                repetitions: a.repetitions,
                cooldown_s: a.cooldown_s,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Usage)?;
    for s in &specs {
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let report = run_suite(&specs, a.seed, &SuiteOptions { pin_cpu: a.pin_cpu }).map_err(failed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| failed(format!("{}: {e}", a.out_dir.display())))?;
    write_file(&a.out_dir.join("timings.csv"), &report.timings_csv())?;
    let summary = report.summary_csv();
    write_file(&a.out_dir.join("summary.csv"), &summary)?;
    emit(&summary);
    Ok(if report.failures() > 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_experiment(a: ExperimentArgs) -> Result<i32, CliError> {
    let mut cfg = PlanConfig::load(&a.plan).map_err(|e| match e {
        orchestrator::OrchestratorError::ConfigIo { .. } => failed(e),
        other => CliError::Usage(other.to_string()),
    })?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if let Some(c) = a.cooldown_s {
        cfg.cooldown_s = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let plan = build_plan(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.dry_run {
        for w in &plan.warmup {
            emit(&format!("warmup {} {} {}s\n", w.tool, w.benchmark, w.duration_s));
        }
        for e in &plan.entries {
            emit(&format!("{} {} {} {}\n", e.index, e.tool, e.benchmark, e.repetition));
        }
        return Ok(EXIT_OK);
    }
    let mut src = orchestrator::open_plan_source(&cfg).map_err(failed)?;
    let outcome = run_plan(&cfg, &plan, &mut src, &StopSignal::new()).map_err(failed)?;
    let bad = outcome.failed_runs();
    eprintln!("{} runs recorded in {} ({} failed)", outcome.records.len(), outcome.results_path.display(), bad);
    Ok(if bad > 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn metric_value(rec: &orchestrator::RunRecord, metric: &str) -> Result<Option<f64>, String> {
    if metric == "duration_s" {
        return Ok(Some(rec.duration_s));
    }
    let d = metric
        .strip_prefix("energy_")
        .ok_or_else(|| format!("unknown metric `{metric}` (duration_s|energy_<domain>)"))?;
    let d: DomainId = d.parse::<DomainId>().map_err(|e| e.to_string())?;
    Ok(rec.energy_j.get(d).copied())
}

/// File-name-safe form of an id.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<i32, CliError> {
    if let Some(log) = a.log {
        let prefix = a.out.unwrap_or_else(|| log.with_extension(""));
        let (_, summary) = process_log_file(&log, &prefix).map_err(failed)?;
        emit(&(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"));
        return Ok(EXIT_OK);
    }
    let path = a.results.expect("clap enforces one input");
    let records = read_records(&path).map_err(failed)?;
    let mut obs = Vec::with_capacity(records.len());
    let mut skipped = 0usize;
    for r in &records {
        if r.failed {
            skipped += 1;
            continue;
        }
        match metric_value(r, &a.metric).map_err(CliError::Usage)? {
            Some(value) => obs.push(Observation { tool: r.tool.clone(), benchmark: r.benchmark.clone(), value }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} failed or incomplete records");
    }
    if obs.is_empty() {
        return Err(failed(format!("{}: no usable records", path.display())));
    }
    let report = analyze(&obs, &a.baseline, &a.metric).map_err(failed)?;
    let out_dir = a.out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("analysis"));
    fs::create_dir_all(&out_dir).map_err(|e| failed(format!("{}: {e}", out_dir.display())))?;
    for b in &report.benchmarks {
        let name = slug(&b.benchmark);
        write_file(&out_dir.join(format!("descriptive-{name}.csv")), &descriptive_csv(b))?;
        write_file(&out_dir.join(format!("dunn-{name}.csv")), &dunn_matrix_csv(b))?;
    }
    let contrasts = baseline_contrast_csv(&report);
    write_file(&out_dir.join("contrasts.csv"), &contrasts)?;
    write_file(
        &out_dir.join("report.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    emit(&contrasts);
    Ok(EXIT_OK)
}
