//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion; run with `--nocapture` to see them all.

use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raplkit::counter_source::BackendConfig;
use raplkit::microbench::{per_op, run_suite, time_batch, BenchSpec, OpKind, SuiteOptions};
use raplkit::orchestrator::{
    build_plan, open_plan_source, read_records, run_plan, BenchmarkSpec, PlanConfig, ToolLaunch, ToolSpec,
};
use raplkit::postprocess::{summarize, to_intervals, EnergySummary as Summary};
use raplkit::sampler::{
    self, CountingSink, MemorySink, SampleLog, SamplerConfig, SamplerMode, SamplerStats, StopSignal,
};
use raplkit::stats::{bonferroni, cliffs_delta, dunn_posthoc, kruskal_wallis, overhead_from_medians, shapiro_wilk};
use raplkit::{DomainId, SimClock, Source, SourceDescriptor};

const MS: u64 = 1_000_000;
const SEC: u64 = 1_000_000_000;

/// Wall-clock criteria hold this so they do not compete for CPUs.
static WALL: Mutex<()> = Mutex::new(());

fn wall_lock() -> MutexGuard<'static, ()> {
    WALL.lock().unwrap_or_else(|e| e.into_inner())
}

struct Checks {
    id: &'static str,
    title: &'static str,
    items: Vec<(String, bool)>,
}

impl Checks {
    fn new(id: &'static str, title: &'static str) -> Self {
        Checks { id, title, items: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.items.push((what.into(), ok));
    }

    fn finish(self) {
        let failed: Vec<&str> = self.items.iter().filter(|(_, ok)| !ok).map(|(w, _)| w.as_str()).collect();
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {:<4} {verdict}  {} ({} checks)", self.id, self.title, self.items.len());
        for (what, ok) in &self.items {
            println!("    {} {what}", if *ok { "ok  " } else { "FAIL" });
        }
        assert!(failed.is_empty(), "criterion {} failed: {failed:#?}", self.id);
    }
}

fn sim_source(watts: f64, range: u64) -> Source {
    let mut desc = SourceDescriptor::synthetic_pkg(watts, 1e-6, range);
    if let BackendConfig::Synthetic(c) = &mut desc.backend {
        c.start_epoch_ns = Some(0);
    }
    Source::open_with_clock(&desc, Arc::new(SimClock::new(0))).unwrap()
}

fn wall_source(watts: f64) -> Source {
    Source::open(&SourceDescriptor::synthetic_pkg(watts, 1e-6, 1 << 32)).unwrap()
}

fn sample(mode: SamplerMode, src: &mut Source, cfg: &SamplerConfig) -> (SamplerStats, Summary, u64) {
    let mut sink = CountingSink::new(MemorySink::new());
    let counters = sink.counters();
    let stats = sampler::run(mode, src, cfg, &mut sink, &StopSignal::new()).unwrap();
    let log = SampleLog::new(sink.into_inner().samples());
    let summary = summarize(&to_intervals(&log, src.meta()).unwrap()).unwrap();
    (stats, summary, counters.writes())
}

fn pkg(s: &Summary) -> f64 {
    s.total.get(DomainId::Pkg).copied().unwrap()
}

#[test]
fn c01_synthetic_energy_conservation() {
    let mut c = Checks::new("1", "synthetic energy conservation");
    let cfg = SamplerConfig::default().with_duration_ns(5 * SEC);

    let (stats, summary, _) = sample(SamplerMode::Batched, &mut sim_source(10.0, 1 << 32), &cfg);
    let total = pkg(&summary);
    c.check(stats.samples_taken == 5001, format!("sim clock: {} samples at 1 kHz over 5 s", stats.samples_taken));
    c.check((total - 50.0).abs() <= 1e-9, format!("sim clock: total {total} J == 50 J"));

    let _g = wall_lock();
    let t0 = Instant::now();
    let (stats, summary, _) = sample(SamplerMode::Batched, &mut wall_source(10.0), &cfg);
    let elapsed = t0.elapsed();
    let total = pkg(&summary);
    c.check((total - 50.0).abs() <= 0.5, format!("wall clock: total {total:.6} J within 1% of 50 J"));
    c.check(stats.samples_persisted == stats.samples_taken, "wall clock: every sample persisted");
    c.check(elapsed < Duration::from_secs(10), format!("runtime {elapsed:.2?} < 10 s"));
    c.finish();
}

#[test]
fn c02_wraparound_is_transparent() {
    let mut c = Checks::new("2", "wraparound");
    let cfg = SamplerConfig::default().with_duration_ns(5 * SEC);
    // 50 J is 5e7 raw units; a 1e7 range wraps five times.
    let (_, wrapped, _) = sample(SamplerMode::Batched, &mut sim_source(10.0, 10_000_000), &cfg);
    let (_, oracle, _) = sample(SamplerMode::Batched, &mut sim_source(10.0, u64::MAX), &cfg);
    let wraps = wrapped.wrap_events.get(DomainId::Pkg).copied().unwrap();
    c.check(wraps >= 3, format!("{wraps} wraps observed"));
    c.check(oracle.wrap_events.get(DomainId::Pkg).copied() == Some(0), "oracle run never wraps");
    c.check(
        pkg(&wrapped) == pkg(&oracle),
        format!("wrapped total {} J == unwrapped {} J", pkg(&wrapped), pkg(&oracle)),
    );
    c.finish();
}

#[test]
fn c03_write_counts() {
    let mut c = Checks::new("3", "sink write counts");
    let duration = 2 * SEC;
    let cfg = SamplerConfig::default().with_duration_ns(duration);
    let ring_bound = duration.div_ceil(cfg.drain_period_ns) + 1;

    let mut run = |label: &str, open: &dyn Fn() -> Source| {
        let (s, _, w) = sample(SamplerMode::Naive, &mut open(), &cfg);
        c.check(w == s.samples_taken, format!("{label} naive: {w} writes == {} samples", s.samples_taken));
        let (s, _, w) = sample(SamplerMode::Batched, &mut open(), &cfg);
        let expect = s.samples_taken.div_ceil(128);
        c.check(w == expect, format!("{label} batched: {w} writes == ceil({}/128)", s.samples_taken));
        let (s, _, w) = sample(SamplerMode::Ring, &mut open(), &cfg);
        c.check(w <= ring_bound, format!("{label} ring: {w} writes <= {ring_bound}"));
        c.check(s.samples_persisted == s.samples_taken, format!("{label} ring: nothing lost"));
    };
    run("sim", &|| sim_source(10.0, 1 << 32));
    {
        let _g = wall_lock();
        run("wall", &|| wall_source(10.0));
    }
    c.finish();
}

#[test]
fn c04_ring_nominal_no_loss() {
    let mut c = Checks::new("4", "ring buffer loss behaviour");
    let nominal = SamplerConfig { ring_capacity: 128, drain_period_ns: 100 * MS, ..SamplerConfig::default() }
        .with_duration_ns(10 * SEC);
    let slow = SamplerConfig { drain_period_ns: 300 * MS, ..nominal.clone() };

    let (s, _, _) = sample(SamplerMode::Ring, &mut sim_source(10.0, 1 << 32), &nominal);
    c.check(s.overruns == 0, format!("sim 100 ms drain: overruns {}", s.overruns));
    c.check(
        s.samples_persisted == s.samples_taken,
        format!("sim: persisted {} == taken {}", s.samples_persisted, s.samples_taken),
    );
    let (s, _, _) = sample(SamplerMode::Ring, &mut sim_source(10.0, 1 << 32), &slow);
    c.check(s.overruns > 0, format!("sim 300 ms drain: overruns {}", s.overruns));

    let _g = wall_lock();
    let (s, _, _) = sample(SamplerMode::Ring, &mut wall_source(10.0), &nominal);
    c.check(s.overruns == 0, format!("wall 100 ms drain: overruns {}", s.overruns));
    c.check(
        s.samples_persisted == s.samples_taken,
        format!("wall: persisted {} == taken {}", s.samples_persisted, s.samples_taken),
    );
    let (s, _, _) = sample(SamplerMode::Ring, &mut wall_source(10.0), &slow.with_duration_ns(2 * SEC));
    c.check(s.overruns > 0, format!("wall 300 ms drain: overruns {}", s.overruns));
    c.finish();
}

const TOOLS: [&str; 8] = ["N_T", "R_K", "R_U", "Perf", "PJ", "Tur", "Sca", "CC"];

/// (benchmark, published medians, published Δt, published %Δ), columns in `TOOLS` order.
type Row = (&'static str, [f64; 8], [f64; 8], [f64; 8]);

#[rustfmt::skip]
const TIME_TABLE: [Row; 6] = [
    ("bt", [196.21, 196.29, 194.84, 196.95, 199.48, 209.88, 218.10, 228.79],
           [0.00, 0.08, -1.37, 0.74, 3.28, 13.67, 21.89, 32.58],
           [0.00, 0.04, -0.70, 0.38, 1.67, 6.97, 11.16, 16.60]),
    ("cg", [43.67, 43.60, 43.58, 43.97, 45.12, 47.50, 51.36, 50.47],
           [0.00, -0.07, -0.09, 0.30, 1.45, 3.83, 7.69, 6.80],
           [0.00, -0.17, -0.20, 0.69, 3.31, 8.77, 17.60, 15.57]),
    ("ep", [265.28, 267.90, 273.05, 276.59, 288.84, 303.39, 340.56, 389.29],
           [0.00, 2.62, 7.77, 11.31, 23.56, 38.11, 75.28, 124.01],
           [0.00, 0.99, 2.93, 4.26, 8.88, 14.37, 28.38, 46.75]),
    ("ft", [54.80, 54.94, 54.74, 54.26, 54.33, 57.08, 56.89, 59.91],
           [0.00, 0.14, -0.06, -0.55, -0.47, 2.28, 2.09, 5.11],
           [0.00, 0.26, -0.11, -1.00, -0.87, 4.15, 3.81, 9.32]),
    ("is", [102.51, 102.54, 102.79, 103.55, 104.43, 109.62, 107.44, 109.04],
           [0.00, 0.03, 0.28, 1.04, 1.92, 7.11, 4.93, 6.53],
           [0.00, 0.03, 0.27, 1.02, 1.87, 6.93, 4.81, 6.37]),
    ("mg", [25.41, 25.41, 25.41, 25.47, 25.62, 26.10, 26.51, 26.78],
           [0.00, 0.00, 0.00, 0.06, 0.21, 0.69, 1.10, 1.37],
           [0.00, 0.00, -0.04, 0.25, 0.82, 2.73, 4.34, 5.38]),
];

/// Cells whose printed value cannot follow from the printed (rounded)
/// medians: the table was computed from unrounded medians.
const UNREPRODUCIBLE: [(&str, &str); 9] = [
    ("cg", "PJ"),
    ("ft", "Perf"),
    ("ft", "PJ"),
    ("ft", "Tur"),
    ("mg", "R_U"),
    ("mg", "Perf"),
    ("mg", "Tur"),
    ("mg", "Sca"),
    ("mg", "CC"),
];

const CELL_TOL: f64 = 0.01 + 1e-9;

fn table_cells() -> Vec<(&'static str, &'static str, &'static str, f64, f64)> {
    let mut cells = Vec::new();
    for (bench, medians, dt, pct) in TIME_TABLE {
        for (i, tool) in TOOLS.iter().enumerate() {
            let row = overhead_from_medians(medians[0], medians[i]);
            cells.push((bench, *tool, "dt", row.delta_t, dt[i]));
            cells.push((bench, *tool, "pct", row.pct_delta, pct[i]));
        }
    }
    cells
}

#[test]
fn c05_overhead_table_every_cell() {
    let mut c = Checks::new("5", "overhead table, every cell from published medians");
    for (bench, tool, kind, got, want) in table_cells() {
        c.check((got - want).abs() <= CELL_TOL, format!("{bench}/{tool} {kind}: {got:.4} vs {want:.2}"));
    }
    c.finish();
}

#[test]
fn c05_overhead_table_reproducible_cells() {
    let mut c = Checks::new("5*", "overhead table, cells consistent with rounded medians");
    let named = overhead_from_medians(196.21, 228.79);
    c.check(
        (named.delta_t - 32.58).abs() <= CELL_TOL && (named.pct_delta - 16.60).abs() <= CELL_TOL,
        "bt/CC 32.58, 16.60",
    );
    let named = overhead_from_medians(43.67, 51.36);
    c.check(
        (named.delta_t - 7.69).abs() <= CELL_TOL && (named.pct_delta - 17.60).abs() <= CELL_TOL,
        "cg/Sca 7.69, 17.60",
    );
    let mut pinned = 0;
    for (bench, tool, kind, got, want) in table_cells() {
        if kind == "pct" && UNREPRODUCIBLE.contains(&(bench, tool)) {
            continue;
        }
        pinned += 1;
        c.check((got - want).abs() <= CELL_TOL, format!("{bench}/{tool} {kind}: {got:.4} vs {want:.2}"));
    }
    c.check(pinned == 87, format!("{pinned} of 96 cells pinned"));
    c.finish();
}

#[test]
fn c06_per_op_arithmetic() {
    let mut c = Checks::new("6", "per-operation latency arithmetic");
    for (median, want) in [(135.74, 0.00136), (55.68, 0.00056)] {
        let got = per_op(median, None, 100_000).per_op_ms;
        c.check((got - want).abs() <= 5e-6, format!("{median} ms / 100000 = {got} ms ~ {want}"));
    }
    c.finish();
}

#[test]
fn c07_statistics_oracles() {
    let mut c = Checks::new("7", "statistics oracles");
    let h = kruskal_wallis(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap().statistic;
    c.check((h - 3.857).abs() <= 1e-3, format!("KW H = {h}"));

    let sep = (cliffs_delta(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), cliffs_delta(&[3.0, 4.0], &[1.0, 2.0]).unwrap());
    c.check(sep == (-1.0, 1.0), format!("separated groups: delta {sep:?}"));
    let same = cliffs_delta(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    c.check(same == 0.0, format!("identical groups: delta {same}"));

    let d = dunn_posthoc(&[vec![1.0, 2.0, 3.0, 3.5], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0, 2.5]]).unwrap();
    let mut exact = true;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                exact &= d.p_adjusted[i][j] == (d.comparisons as f64 * d.p_raw[i][j]).min(1.0);
                exact &= d.p_adjusted[i][j] == bonferroni(d.p_raw[i][j], d.comparisons);
            }
        }
    }
    c.check(exact, "Dunn adjusted p == min(1, m * p) exactly");

    // scipy.stats.shapiro on this fixture
    let x = [
        11.6665, 12.6911, 10.3716, 11.5266, 8.0269, 8.7863, 10.4835, 7.6671, 7.9447, 10.1517, 9.7257, 6.3263, 9.9817,
        12.0724, 8.1432,
    ];
    let sw = shapiro_wilk(&x).unwrap();
    c.check((sw.statistic - 0.9663184341296369).abs() <= 1e-6, format!("SW W = {}", sw.statistic));
    c.check((sw.p_value - 0.8002988628857706).abs() <= 1e-6, format!("SW p = {}", sw.p_value));
    c.finish();
}

fn transform(kind: u32, a: f64, b: f64, x: f64) -> f64 {
    match kind {
        0 => a * x + b,
        1 => (x / 25.0).exp() + b,
        2 => (x - 20.0).powi(3) + b,
        3 => (x + 1.0).ln() * a,
        _ => (x / 60.0).atan() * a + b,
    }
}

#[test]
fn c08_rank_invariance() {
    let mut c = Checks::new("8", "rank invariance under increasing transforms");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut worst_h, mut worst_p, mut worst_d) = (0f64, 0f64, 0f64);
    let trials = 100;
    for _ in 0..trials {
        let k = rng.gen_range(2..=5);
        // Integer grid so ties occur and survive every transform.
        let groups: Vec<Vec<f64>> =
            (0..k).map(|_| (0..rng.gen_range(3..=15)).map(|_| rng.gen_range(0..50) as f64).collect()).collect();
        let kind = rng.gen_range(0..5);
        let (a, b) = (rng.gen_range(0.1..10.0), rng.gen_range(-100.0..100.0));
        let moved: Vec<Vec<f64>> =
            groups.iter().map(|g| g.iter().map(|&x| transform(kind, a, b, x)).collect()).collect();

        let (h0, h1) = (kruskal_wallis(&groups).unwrap(), kruskal_wallis(&moved).unwrap());
        worst_h = worst_h.max((h0.statistic - h1.statistic).abs()).max((h0.p_value - h1.p_value).abs());
        let (d0, d1) = (dunn_posthoc(&groups).unwrap(), dunn_posthoc(&moved).unwrap());
        for i in 0..k {
            for j in 0..k {
                worst_p = worst_p
                    .max((d0.p_raw[i][j] - d1.p_raw[i][j]).abs())
                    .max((d0.p_adjusted[i][j] - d1.p_adjusted[i][j]).abs());
            }
            let delta = |g: &[Vec<f64>]| cliffs_delta(&g[i], &g[(i + 1) % k]).unwrap();
            worst_d = worst_d.max((delta(&groups) - delta(&moved)).abs());
        }
    }
    c.check(worst_h <= 1e-12, format!("{trials} trials: max |dH|, |dp| = {worst_h:e}"));
    c.check(worst_p <= 1e-12, format!("{trials} trials: max Dunn |dp| = {worst_p:e}"));
    c.check(worst_d <= 1e-12, format!("{trials} trials: max |d delta| = {worst_d:e}"));
    c.finish();
}

#[cfg(target_os = "linux")]
#[test]
fn c09_microbench_ordering() {
    let mut c = Checks::new("9", "microbenchmark ordering");
    let _g = wall_lock();
    let spec = |op| BenchSpec { op, iterations: 100_000, repetitions: 15, cooldown_s: 0.0 };
    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), b"1234567\n").unwrap();
    let mut specs = vec![spec(OpKind::NoOp), spec(OpKind::SmallFileRead { path: file.path().into() })];

    let msr = OpKind::MsrRead { register: 0x611, device: "/dev/cpu/0/msr".into() };
    let msr_ok = time_batch(&BenchSpec { op: msr.clone(), iterations: 1, repetitions: 1, cooldown_s: 0.0 }).is_ok();
    if msr_ok {
        specs.push(spec(OpKind::ClockRead));
        specs.push(spec(msr.clone()));
    }

    let t0 = Instant::now();
    let report = run_suite(&specs, 9, &SuiteOptions::default()).unwrap();
    let elapsed = t0.elapsed();
    let median = |op: &OpKind| report.summary_for(&op.to_string()).unwrap().describe.unwrap().median;
    let (noop, read) = (median(&specs[0].op), median(&specs[1].op));
    c.check(report.failures() == 0, "no failed batches");
    c.check(noop < read, format!("median noop {noop:.3} ms < small file read {read:.3} ms"));
    if msr_ok {
        let (clock, msr) = (median(&OpKind::ClockRead), median(&msr));
        c.check(msr > clock, format!("median msr read {msr:.3} ms > clock read {clock:.3} ms"));
    } else {
        println!("    (msr device not readable; msr ordering not checked)");
    }
    c.check(elapsed < Duration::from_secs(120), format!("runtime {elapsed:.2?} < 2 min"));
    c.finish();
}

fn factorial_config(out: &std::path::Path) -> PlanConfig {
    PlanConfig {
        tools: vec![
            ToolSpec { id: "none".into(), launch: ToolLaunch::None },
            ToolSpec { id: "other".into(), launch: ToolLaunch::None },
        ],
        benchmarks: vec![
            BenchmarkSpec { id: "a".into(), command: "true".into() },
            BenchmarkSpec { id: "b".into(), command: ":".into() },
        ],
        repetitions: 15,
        seed: 2024,
        warmup: Some(Vec::new()),
        cooldown_s: 0.0,
        source: SourceDescriptor::synthetic_pkg(10.0, 1e-6, 1 << 32),
        output_dir: out.into(),
    }
}

#[test]
fn c10_orchestrator_determinism_and_crash_safety() {
    let mut c = Checks::new("10", "orchestrator determinism and crash safety");
    let mut orders = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = factorial_config(dir.path());
        let plan = build_plan(&cfg).unwrap();
        let mut src = open_plan_source(&cfg).unwrap();
        let outcome = run_plan(&cfg, &plan, &mut src, &StopSignal::new()).unwrap();
        let mut per_cell = std::collections::BTreeMap::new();
        for r in &outcome.records {
            *per_cell.entry((r.tool.clone(), r.benchmark.clone())).or_insert(0) += 1;
        }
        c.check(outcome.records.len() == 60, format!("{} records", outcome.records.len()));
        c.check(per_cell.len() == 4 && per_cell.values().all(|&n| n == 15), format!("per cell {per_cell:?}"));
        c.check(read_records(&outcome.results_path).unwrap().len() == 60, "60 lines on disk");
        orders.push(
            outcome.records.iter().map(|r| (r.tool.clone(), r.benchmark.clone(), r.repetition)).collect::<Vec<_>>(),
        );
    }
    c.check(orders[0] == orders[1], "identical order across re-runs");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let plan_path = dir.path().join("plan.json");
    let plan = serde_json::json!({
        "tools": [{"id": "none"}, {"id": "other"}],
        "benchmarks": [{"id": "a", "command": "sleep 0.1"}, {"id": "b", "command": "sleep 0.1"}],
        "repetitions": 15, "seed": 3, "warmup": [], "cooldown_s": 0,
        "source": {"backend": "synthetic", "power_watts": {"pkg": 10.0}, "domains": ["pkg"]},
        "output_dir": out,
    });
    std::fs::write(&plan_path, plan.to_string()).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_raplkit"))
        .args(["experiment", "--plan"])
        .arg(&plan_path)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let results = out.join("runs.jsonl");
    let deadline = Instant::now() + Duration::from_secs(30);
    while Instant::now() < deadline {
        let lines = std::fs::read_to_string(&results).map(|s| s.lines().count()).unwrap_or(0);
        if lines >= 5 {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let text = std::fs::read_to_string(&results).unwrap_or_default();
    let k = text.lines().count();
    let parsed = text.lines().filter(|l| serde_json::from_str::<raplkit::orchestrator::RunRecord>(l).is_ok()).count();
    c.check((5..60).contains(&k), format!("killed after {k} of 60 runs"));
    c.check(parsed == k && text.ends_with('\n'), format!("{parsed} of {k} lines parse"));
    c.finish();
}
