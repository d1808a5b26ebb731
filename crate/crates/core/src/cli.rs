//! Command-line surface: `plan`, `simulate`, `run`, `analyze` and `sweep`.
//!
//! Durations on the command line are decimal seconds and are converted to
//! integer microseconds without going through floating point.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{build_plan, check_plan, format_seconds, read_manifest, write_plan_bundle, ScriptTemplate};
use crate::metrics::paper::median_us;
use crate::metrics::svg::{overhead_svg, utilization_svg};
use crate::metrics::{
    distinct_slots, job_runtime, overhead_table, paper_dataset, per_slot_work_us, ratio_to_f64,
    read_event_log_csv, strategy_ratio, utilization, write_event_log_csv, OverheadReport, RatioBasis,
};
use crate::model::{paper_config, AggregationStrategy, BenchmarkConfig, EventLog, ExecutionPlan, MICROS_PER_SEC};
use crate::runner::{execute, execute_through_sim_dispatch, RunError, RunnerOptions};
use crate::sim::{simulate, SchedulerModel, SimError, DEFAULT_CLEANUP_RATIO, DEFAULT_DISPATCH_COST_US};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::Oversubscription { .. } => EXIT_CAPACITY,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::input(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "nodepack", version, about = "Plan, simulate, run and analyze aggregated task benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a plan and write its manifest (and per-node scripts).
    Plan(PlanArgs),
    /// Simulate a plan through the scheduler model; prints the normalized overhead.
    Simulate(SimulateArgs),
    /// Execute a plan for real on this host.
    Run(RunArgs),
    /// Analyze an event log, or the embedded published run times.
    Analyze(AnalyzeArgs),
    /// Simulate (or run) the cross product of node counts, task times and strategies.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Named configuration such as S1-rapid or S5-long.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub nodes: Option<u32>,
    /// Cores per node [default: 64].
    #[arg(long)]
    pub cores: Option<u32>,
    /// Task time in seconds.
    #[arg(long = "task-time")]
    pub task_time: Option<String>,
    /// Job time per processor in seconds [default: 240].
    #[arg(long = "job-time")]
    pub job_time: Option<String>,
    /// JSON file with any of these settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Scheduler time per dispatched unit, seconds [default: 0.015].
    #[arg(long = "dispatch-cost")]
    pub dispatch_cost: Option<String>,
    /// Scheduler time per retired unit, seconds [default: 4 x dispatch cost].
    #[arg(long = "cleanup-cost")]
    pub cleanup_cost: Option<String>,
    /// Whether cleanup occupies the scheduler loop [default: true].
    #[arg(long = "cleanup-blocks-dispatch", num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set)]
    pub cleanup_blocks_dispatch: Option<bool>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// flat, per-core or per-node [default: per-node].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Leave `taskset` out of generated scripts.
    #[arg(long)]
    pub unpinned: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub strategy: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Plan manifest (file or directory) instead of config flags.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Event log CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow more worker slots than the host has.
    #[arg(long)]
    pub oversubscribe: bool,
    /// Skip core pinning.
    #[arg(long)]
    pub no_pin: bool,
    /// Shell command per task instead of an in-process wait ({duration_s}, {task_id}).
    #[arg(long)]
    pub command: Option<String>,
    /// Release units at their simulated dispatch times.
    #[arg(long)]
    pub sim_dispatch: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Event log CSV.
    pub log: Option<PathBuf>,
    /// Use the embedded published run times.
    #[arg(long)]
    pub paper: bool,
    /// With --paper, add the per-core over per-node overhead ratios.
    #[arg(long)]
    pub ratios: bool,
    /// Node count for --ratios.
    #[arg(long, default_value_t = 512)]
    pub ratio_nodes: u32,
    /// Job time per processor, seconds [default: inferred from the log].
    #[arg(long = "job-time")]
    pub job_time: Option<String>,
    /// Processor count [default: distinct slots in the log].
    #[arg(long)]
    pub processors: Option<u64>,
    /// Directory for CSV, JSON and SVG reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated node counts.
    #[arg(long, default_value = "2,4,8")]
    pub nodes: String,
    #[arg(long, default_value_t = 8)]
    pub cores: u32,
    /// Comma-separated task times, seconds.
    #[arg(long = "task-times", default_value = "1,5,30,60")]
    pub task_times: String,
    #[arg(long = "job-time", default_value = "240")]
    pub job_time: String,
    /// Comma-separated strategies.
    #[arg(long, default_value = "flat,per-core,per-node")]
    pub strategies: String,
    #[arg(long, default_value_t = 3)]
    pub repetitions: u32,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Execute each cell for real (one at a time) instead of simulating.
    #[arg(long)]
    pub real: bool,
    #[arg(long)]
    pub oversubscribe: bool,
    /// Directory for results.csv and overhead.svg; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses non-negative decimal seconds ("5", "0.2", "1e-3" is rejected) into
/// microseconds.
pub fn parse_seconds(text: &str) -> Result<u64, String> {
    let text = text.trim();
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if (whole.is_empty() && frac.is_empty()) || !digits(whole) || !digits(frac) {
        return Err(format!("`{text}` is not a non-negative decimal number of seconds"));
    }
    let frac = frac.trim_end_matches('0');
    if frac.len() > 6 {
        return Err(format!("`{text}` has sub-microsecond precision"));
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| format!("`{text}` is too large"))? };
    let frac_us: u64 = format!("{frac:0<6}").parse().expect("six digits");
    whole
        .checked_mul(MICROS_PER_SEC)
        .and_then(|w| w.checked_add(frac_us))
        .ok_or_else(|| format!("`{text}` is too large"))
}

fn seconds_flag(flag: &str, text: &str) -> Result<u64, CliError> {
    parse_seconds(text).map_err(|e| CliError::input(format!("--{flag}: {e}")))
}

fn parse_strategy(text: &str) -> Result<AggregationStrategy, CliError> {
    text.parse()
        .map_err(|_| CliError::input(format!("--strategy: unknown strategy `{text}` (flat, per-core, per-node)")))
}

fn parse_list<T>(flag: &str, text: &str, parse: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::input(format!("--{flag}: list is empty")));
    }
    Ok(items)
}

/// Settings readable from `--config`; seconds as JSON numbers or strings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<String>,
    nodes: Option<u32>,
    cores: Option<u32>,
    task_time: Option<serde_json::Value>,
    job_time: Option<serde_json::Value>,
    strategy: Option<String>,
    dispatch_cost: Option<serde_json::Value>,
    cleanup_cost: Option<serde_json::Value>,
    cleanup_blocks_dispatch: Option<bool>,
}

fn json_seconds(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("--config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("--config {}: {e}", path.display())))
}

fn resolve_config(args: &ConfigArgs, file: &FileConfig) -> Result<BenchmarkConfig, CliError> {
    let preset = args.preset.clone().or_else(|| file.preset.clone());
    let base = match &preset {
        Some(name) => Some(paper_config(name).map_err(|e| CliError::input(format!("--preset: {e}")))?),
        None => None,
    };
    let nodes = args
        .nodes
        .or(file.nodes)
        .or(base.as_ref().map(|b| b.nodes))
        .ok_or_else(|| CliError::input("--nodes is required without --preset"))?;
    let cores = args
        .cores
        .or(file.cores)
        .or(base.as_ref().map(|b| b.cores_per_node))
        .unwrap_or(crate::model::PAPER_CORES_PER_NODE);
    let task_time_us = match args.task_time.clone().or_else(|| file.task_time.as_ref().map(json_seconds)) {
        Some(t) => seconds_flag("task-time", &t)?,
        None => base
            .as_ref()
            .map(|b| b.task_time_us)
            .ok_or_else(|| CliError::input("--task-time is required without --preset"))?,
    };
    let job_us = match args.job_time.clone().or_else(|| file.job_time.as_ref().map(json_seconds)) {
        Some(t) => seconds_flag("job-time", &t)?,
        None => base.as_ref().map_or(crate::model::PAPER_JOB_TIME_US, |b| b.job_time_per_processor_us),
    };
    let label = preset.map(|_| base.as_ref().unwrap().label.clone()).unwrap_or_default();
    BenchmarkConfig::new(nodes, cores, task_time_us, job_us, label).map_err(|e| {
        let flag = match e {
            crate::model::ConfigError::ZeroNodes => "--nodes",
            crate::model::ConfigError::ZeroCores => "--cores",
            crate::model::ConfigError::ZeroJobTime => "--job-time",
            _ => "--task-time",
        };
        CliError::input(format!("{flag}: {e}"))
    })
}

fn resolve_model(args: &ModelArgs, file: &FileConfig) -> Result<SchedulerModel, CliError> {
    let dispatch = match args.dispatch_cost.clone().or_else(|| file.dispatch_cost.as_ref().map(json_seconds)) {
        Some(t) => seconds_flag("dispatch-cost", &t)?,
        None => DEFAULT_DISPATCH_COST_US,
    };
    let cleanup = match args.cleanup_cost.clone().or_else(|| file.cleanup_cost.as_ref().map(json_seconds)) {
        Some(t) => seconds_flag("cleanup-cost", &t)?,
        None => dispatch * DEFAULT_CLEANUP_RATIO,
    };
    let blocks = args.cleanup_blocks_dispatch.or(file.cleanup_blocks_dispatch).unwrap_or(true);
    Ok(SchedulerModel::new(dispatch, cleanup, blocks))
}

fn resolve_plan(
    config: &ConfigArgs,
    strategy: Option<&str>,
    plan_path: Option<&Path>,
    file: &FileConfig,
) -> Result<ExecutionPlan, CliError> {
    if let Some(path) = plan_path {
        let manifest = read_manifest(path).map_err(|e| CliError::input(format!("--plan {}: {e}", path.display())))?;
        check_plan(&manifest.plan).map_err(|e| CliError::input(format!("--plan {}: {e}", path.display())))?;
        return Ok(manifest.plan);
    }
    let cfg = resolve_config(config, file)?;
    let strategy = match strategy.map(str::to_string).or_else(|| file.strategy.clone()) {
        Some(s) => parse_strategy(&s)?,
        None => AggregationStrategy::PerNode,
    };
    build_plan(&cfg, strategy).map_err(|e| CliError::input(e.to_string()))
}

fn write_log(path: &Path, log: &EventLog) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    write_event_log_csv(log, io::BufWriter::new(file))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::input(e.to_string()))?;
    for row in rows {
        writer.serialize(row).map_err(|e| CliError::input(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

fn report_for(plan: &ExecutionPlan, runtime_us: u64) -> OverheadReport {
    let c = &plan.config;
    OverheadReport::new(
        c.label.clone(),
        plan.strategy,
        c.nodes,
        c.task_time_us,
        c.job_time_per_processor_us,
        runtime_us,
    )
}

/// Normalized overhead as printed: plain `0` when exact zero.
fn format_overhead(report: &OverheadReport) -> String {
    if *report.normalized_overhead.numer() == 0 {
        "0".to_string()
    } else {
        ratio_to_f64(report.normalized_overhead).to_string()
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Plan(a) => cmd_plan(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
    }
}

fn cmd_plan(a: PlanArgs, out: &mut dyn Write) -> CliResult {
    let file = load_file_config(a.config.config.as_deref())?;
    let plan = resolve_plan(&a.config, a.strategy.as_deref(), None, &file)?;
    let template = if a.unpinned { ScriptTemplate::unpinned() } else { ScriptTemplate::default() };
    let scripts = plan.strategy == AggregationStrategy::PerNode;
    let manifest = write_plan_bundle(&plan, &template, &a.out, scripts).map_err(|e| CliError::input(e.to_string()))?;
    let written = manifest.units.iter().filter(|u| u.script.is_some()).count();
    writeln!(
        out,
        "{} units ({}), {} scripts, manifest in {}",
        plan.units.len(),
        plan.strategy,
        written,
        a.out.display()
    )?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> CliResult {
    let file = load_file_config(a.config.config.as_deref())?;
    let plan = resolve_plan(&a.config, a.strategy.as_deref(), a.plan.as_deref(), &file)?;
    let model = resolve_model(&a.model, &file)?;
    let result = simulate(&plan, &model)?;
    let runtime = job_runtime(&result.log).map_err(|e| CliError::input(e.to_string()))?;
    let report = report_for(&plan, runtime);
    if let Some(path) = &a.out {
        write_log(path, &result.log)?;
        result.sidecar(&model).write(&path.with_extension("sidecar.json"))?;
        write_json(&path.with_extension("report.json"), &report.row())?;
    }
    log::info!(
        "{} units, job runtime {} s, overhead {} s",
        plan.units.len(),
        format_seconds(runtime),
        report.overhead_us as f64 / MICROS_PER_SEC as f64
    );
    writeln!(out, "{}", format_overhead(&report))?;
    Ok(())
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> CliResult {
    let file = load_file_config(a.config.config.as_deref())?;
    let plan = resolve_plan(&a.config, a.strategy.as_deref(), a.plan.as_deref(), &file)?;
    let opts = RunnerOptions {
        allow_oversubscribe: a.oversubscribe,
        pin_enabled: !a.no_pin,
        task_command_override: a.command.clone(),
        ..RunnerOptions::default()
    };
    let log = if a.sim_dispatch {
        execute_through_sim_dispatch(&plan, &resolve_model(&a.model, &file)?, &opts)?
    } else {
        execute(&plan, &opts)?
    };
    if let Some(path) = &a.out {
        write_log(path, &log)?;
    }
    let runtime = job_runtime(&log).map_err(|e| CliError::input(e.to_string()))?;
    let report = report_for(&plan, runtime);
    writeln!(
        out,
        "records {} runtime_s {} normalized_overhead {}",
        log.len(),
        runtime as f64 / MICROS_PER_SEC as f64,
        format_overhead(&report)
    )?;
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    if a.paper {
        return analyze_paper(&a, out);
    }
    let Some(path) = &a.log else {
        return Err(CliError::input("give an event log path or --paper"));
    };
    let file = fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let log = read_event_log_csv(io::BufReader::new(file))
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let runtime = job_runtime(&log).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let job_us = match &a.job_time {
        Some(t) => seconds_flag("job-time", t)?,
        None => per_slot_work_us(&log),
    };
    if job_us == 0 {
        return Err(CliError::input("--job-time: job time must be positive"));
    }
    let processors = a.processors.unwrap_or_else(|| distinct_slots(&log));
    let series = utilization(&log, processors).map_err(|e| CliError::input(e.to_string()))?;
    let report = OverheadReport::new(
        path.display().to_string(),
        AggregationStrategy::PerNode,
        0,
        0,
        job_us,
        runtime,
    );
    let secs = |us: u64| us as f64 / MICROS_PER_SEC as f64;
    writeln!(out, "records {}", log.len())?;
    writeln!(out, "processors {processors}")?;
    writeln!(out, "job_time_s {}", secs(job_us))?;
    writeln!(out, "job_runtime_s {}", secs(runtime))?;
    writeln!(out, "overhead_s {}", report.overhead_us as f64 / MICROS_PER_SEC as f64)?;
    writeln!(out, "normalized_overhead {}", format_overhead(&report))?;
    match series.first_full_us() {
        Some(t) => writeln!(out, "full_utilization_at_s {}", secs(t))?,
        None => writeln!(out, "full_utilization_at_s never")?,
    }
    if report.is_negative() {
        log::warn!("runtime is shorter than the job time; check --job-time");
    }
    if let Some(dir) = &a.out {
        #[derive(Serialize)]
        struct Step {
            start_us: u64,
            busy: u64,
            utilization: f64,
        }
        let steps: Vec<Step> = series
            .breakpoints_us
            .iter()
            .zip(&series.busy)
            .zip(series.values())
            .map(|((&start_us, &busy), utilization)| Step { start_us, busy, utilization })
            .collect();
        write_rows(&dir.join("utilization.csv"), &steps)?;
        write_json(&dir.join("report.json"), &report.row())?;
        let label = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        fs::write(dir.join("utilization.svg"), utilization_svg(&[(label, &series)]))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RatioRow {
    nodes: u32,
    basis: String,
    pairing: String,
    per_core_runtime_s: f64,
    per_node_runtime_s: f64,
    ratio: Option<f64>,
}

fn analyze_paper(a: &AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    let data = paper_dataset();
    let table = overhead_table(&data);
    writeln!(out, "strategy,nodes,task_time_s,median_runtime_s,normalized_overhead,exceeds_10pct")?;
    for r in &table {
        writeln!(
            out,
            "{},{},{},{},{:.6},{}",
            r.strategy,
            r.nodes,
            format_seconds(r.task_time_us),
            format_seconds(r.job_runtime_us),
            ratio_to_f64(r.normalized_overhead),
            r.exceeds_threshold()
        )?;
    }
    for s in [AggregationStrategy::PerCore, AggregationStrategy::PerNode] {
        let cells: Vec<_> = table.iter().filter(|r| r.strategy == s).collect();
        let flagged = cells.iter().filter(|r| r.exceeds_threshold()).count();
        writeln!(out, "# {s}: {flagged} of {} cells exceed 0.10", cells.len())?;
    }

    let mut ratio_rows = Vec::new();
    if a.ratios {
        for basis in [RatioBasis::Best, RatioBasis::Median] {
            let report = strategy_ratio(&data, a.ratio_nodes, basis).map_err(|e| CliError::input(e.to_string()))?;
            for p in &report.pairings {
                let value = p.ratio_f64();
                writeln!(
                    out,
                    "ratio nodes={} basis={} pairing=\"{}\" value={}",
                    a.ratio_nodes,
                    basis,
                    p.label,
                    value.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
                )?;
                ratio_rows.push(RatioRow {
                    nodes: a.ratio_nodes,
                    basis: basis.to_string(),
                    pairing: p.label.clone(),
                    per_core_runtime_s: p.per_core_runtime_us as f64 / MICROS_PER_SEC as f64,
                    per_node_runtime_s: p.per_node_runtime_us as f64 / MICROS_PER_SEC as f64,
                    ratio: value,
                });
            }
            if let Some(note) = report.note() {
                writeln!(out, "# note ({basis}): {note}")?;
            }
        }
    }
    if let Some(dir) = &a.out {
        let rows: Vec<_> = table.iter().map(OverheadReport::row).collect();
        write_rows(&dir.join("overhead.csv"), &rows)?;
        write_json(&dir.join("overhead.json"), &rows)?;
        fs::write(dir.join("overhead.svg"), overhead_svg(&table))?;
        if a.ratios {
            write_json(&dir.join("ratios.json"), &ratio_rows)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub nodes: u32,
    pub cores: u32,
    pub task_time_us: u64,
    pub job_time_us: u64,
    pub strategy: String,
    /// Repetition number, or `median`.
    pub repetition: String,
    pub units: Option<usize>,
    pub job_runtime_us: Option<u64>,
    pub normalized_overhead: Option<f64>,
    pub error: String,
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn Write) -> CliResult {
    let nodes = parse_list("nodes", &a.nodes, |s| {
        s.parse::<u32>().map_err(|e| CliError::input(format!("--nodes: `{s}`: {e}")))
    })?;
    let times = parse_list("task-times", &a.task_times, |s| seconds_flag("task-times", s))?;
    let strategies = parse_list("strategies", &a.strategies, parse_strategy)?;
    let job_us = seconds_flag("job-time", &a.job_time)?;
    if a.repetitions == 0 {
        return Err(CliError::input("--repetitions must be at least 1"));
    }
    let model = resolve_model(&a.model, &FileConfig::default())?;

    let mut cells = Vec::new();
    for &n in &nodes {
        for &t in &times {
            for &s in &strategies {
                cells.push((n, t, s));
            }
        }
    }
    let jobs: Vec<_> = cells
        .iter()
        .flat_map(|&cell| (0..a.repetitions).map(move |rep| (cell, rep)))
        .collect();
    let run_cell = |&((n, t, s), _rep): &((u32, u64, AggregationStrategy), u32)| -> Result<(usize, u64), String> {
        let cfg = BenchmarkConfig::new(n, a.cores, t, job_us, "").map_err(|e| e.to_string())?;
        let plan = build_plan(&cfg, s).map_err(|e| e.to_string())?;
        let log = if a.real {
            let opts = RunnerOptions {
                allow_oversubscribe: a.oversubscribe,
                ..RunnerOptions::default()
            };
            execute_through_sim_dispatch(&plan, &model, &opts).map_err(|e| e.to_string())?
        } else {
            simulate(&plan, &model).map_err(|e| e.to_string())?.log
        };
        Ok((plan.units.len(), job_runtime(&log).map_err(|e| e.to_string())?))
    };
    let results: Vec<Result<(usize, u64), String>> = if a.real {
        jobs.iter().map(run_cell).collect()
    } else {
        jobs.par_iter().map(run_cell).collect()
    };

    let row = |(n, t, s): (u32, u64, AggregationStrategy), repetition: String, outcome: Result<(usize, u64), String>| {
        let (units, runtime, error) = match outcome {
            Ok((u, r)) => (Some(u), Some(r), String::new()),
            Err(e) => (None, None, e),
        };
        SweepRow {
            nodes: n,
            cores: a.cores,
            task_time_us: t,
            job_time_us: job_us,
            strategy: s.to_string(),
            repetition,
            units,
            job_runtime_us: runtime,
            normalized_overhead: runtime.map(|r| ratio_to_f64(crate::metrics::normalized_overhead(r, job_us))),
            error,
        }
    };
    let mut rows = Vec::new();
    for ((cell, rep), outcome) in jobs.iter().zip(&results) {
        rows.push(row(*cell, rep.to_string(), outcome.clone()));
    }
    let mut medians = Vec::new();
    for (ci, &cell) in cells.iter().enumerate() {
        let reps = &results[ci * a.repetitions as usize..(ci + 1) * a.repetitions as usize];
        let ok: Vec<(usize, u64)> = reps.iter().filter_map(|r| r.clone().ok()).collect();
        let outcome = match median_us(&ok.iter().map(|&(_, r)| r).collect::<Vec<_>>()) {
            Some(m) => Ok((ok[0].0, m)),
            None => Err("no successful repetition".to_string()),
        };
        if let Ok((_, m)) = outcome {
            medians.push(OverheadReport::new(
                format!("{} {} nodes", cell.2, cell.0),
                cell.2,
                cell.0,
                cell.1,
                job_us,
                m,
            ));
        }
        rows.push(row(cell, "median".to_string(), outcome));
    }
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; see the error column", results.len());
    }

    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_rows(&dir.join("results.csv"), &rows)?;
            fs::write(dir.join("overhead.svg"), overhead_svg(&medians))?;
            writeln!(out, "{} rows written to {}", rows.len(), dir.join("results.csv").display())?;
        }
        None => {
            let mut writer = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(out);
            for r in &rows {
                writer.serialize(r).map_err(|e| CliError::input(e.to_string()))?;
            }
            writer.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (Result<(), CliError>, String) {
        let cli = Cli::try_parse_from(std::iter::once("nodepack").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        let res = run(cli, &mut buf);
        (res, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn seconds_parse_exactly() {
        assert_eq!(parse_seconds("5"), Ok(5_000_000));
        assert_eq!(parse_seconds("0.2"), Ok(200_000));
        assert_eq!(parse_seconds(".05"), Ok(50_000));
        assert_eq!(parse_seconds("0.0000010"), Ok(1));
        assert!(parse_seconds("0.0000001").is_err());
        assert!(parse_seconds("-1").is_err());
        assert!(parse_seconds("1e3").is_err());
        assert!(parse_seconds("").is_err());
        assert!(parse_seconds(".").is_err());
    }

    #[test]
    fn zero_costs_print_zero() {
        let (res, out) = run_args(&[
            "simulate", "--nodes", "2", "--cores", "4", "--task-time", "1", "--job-time", "8", "--strategy", "flat",
            "--dispatch-cost", "0", "--cleanup-cost", "0",
        ]);
        res.unwrap();
        assert_eq!(out, "0\n");
    }

    #[test]
    fn per_node_toy_law() {
        let (res, out) = run_args(&[
            "simulate", "--nodes", "4", "--cores", "2", "--task-time", "1", "--job-time", "3", "--dispatch-cost",
            "0.5", "--cleanup-cost", "0",
        ]);
        res.unwrap();
        assert_eq!(out.trim().parse::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn config_errors_name_the_flag() {
        let (res, _) = run_args(&["simulate", "--nodes", "1", "--task-time", "7", "--job-time", "240"]);
        let err = res.unwrap_err();
        assert_eq!(err.code, EXIT_INPUT);
        assert!(err.message.contains("--task-time"), "{}", err.message);
        let (res, _) = run_args(&["simulate", "--task-time", "1"]);
        assert!(res.unwrap_err().message.contains("--nodes"));
        let (res, _) = run_args(&["simulate", "--preset", "S9-rapid"]);
        assert!(res.unwrap_err().message.contains("--preset"));
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"preset": "S1-rapid", "nodes": 3, "task_time": 5, "dispatch_cost": "0.5"}"#).unwrap();
        let file = load_file_config(Some(&path)).unwrap();
        let args = ConfigArgs { nodes: Some(2), ..ConfigArgs::default() };
        let cfg = resolve_config(&args, &file).unwrap();
        assert_eq!((cfg.nodes, cfg.cores_per_node, cfg.task_time_us), (2, 64, 5_000_000));
        let model = resolve_model(&ModelArgs::default(), &file).unwrap();
        assert_eq!((model.dispatch_cost_us, model.cleanup_cost_us), (500_000, 2_000_000));
        fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        assert!(load_file_config(Some(&path)).is_err());
    }

    #[test]
    fn sweep_orders_strategies_and_repeats() {
        let (res, out) = run_args(&[
            "sweep", "--nodes", "2", "--cores", "2", "--task-times", "1", "--job-time", "4", "--dispatch-cost",
            "0.1", "--repetitions", "3",
        ]);
        res.unwrap();
        let mut reader = csv::Reader::from_reader(out.as_bytes());
        let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3 * 3 + 3);
        let medians: Vec<f64> = rows.iter().filter(|r| &r[5] == "median").map(|r| r[8].parse().unwrap()).collect();
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
        for s in 0..3 {
            let reps: Vec<&str> = rows[s * 3..s * 3 + 3].iter().map(|r| &r[7]).collect();
            assert!(reps.iter().all(|&r| r == reps[0]));
        }
        let (res, _) = run_args(&["sweep", "--strategies", ""]);
        assert_eq!(res.unwrap_err().code, EXIT_INPUT);
    }

    #[test]
    fn sweep_records_cell_failures() {
        let (res, out) = run_args(&["sweep", "--nodes", "1", "--cores", "1", "--task-times", "7,1", "--job-time", "2",
            "--strategies", "per-node", "--repetitions", "1"]);
        res.unwrap();
        assert!(out.contains("not a multiple"));
        assert!(out.lines().filter(|l| l.contains("median")).count() == 2);
    }
}
