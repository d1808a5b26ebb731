//! Shared data model: benchmark configurations, task expansion, scheduling
//! units, execution plans and event logs.
//!
//! All durations are unsigned integer microseconds. Task ids are dense
//! node-major ordinals, so a task's placement can be recovered from its id
//! alone (see [`BenchmarkConfig::task`]).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MICROS_PER_SEC: u64 = 1_000_000;
const MICROS_PER_HOUR: u64 = 3_600 * MICROS_PER_SEC;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("task time must be positive")]
    ZeroTaskTime,
    #[error("job time per processor must be positive")]
    ZeroJobTime,
    #[error("node count must be at least 1")]
    ZeroNodes,
    #[error("cores per node must be at least 1")]
    ZeroCores,
    #[error("job time {job_time_us} us is not a multiple of task time {task_time_us} us")]
    NotDivisible { task_time_us: u64, job_time_us: u64 },
    #[error("unknown preset `{0}` (expected S1..S5 combined with rapid|fast|medium|long, e.g. S1-rapid)")]
    UnknownPreset(String),
    #[error("task count overflows u64")]
    Overflow,
}

/// One benchmark run: every one of `nodes * cores_per_node` processors
/// executes `job_time_per_processor_us / task_time_us` constant-time tasks
/// back to back.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct BenchmarkConfig {
    pub task_time_us: u64,
    pub job_time_per_processor_us: u64,
    pub nodes: u32,
    pub cores_per_node: u32,
    #[serde(default)]
    pub label: String,
}

#[derive(Deserialize)]
struct RawConfig {
    task_time_us: u64,
    job_time_per_processor_us: u64,
    nodes: u32,
    cores_per_node: u32,
    #[serde(default)]
    label: String,
}

impl TryFrom<RawConfig> for BenchmarkConfig {
    type Error = ConfigError;

    fn try_from(raw: RawConfig) -> Result<Self, Self::Error> {
        BenchmarkConfig::new(
            raw.nodes,
            raw.cores_per_node,
            raw.task_time_us,
            raw.job_time_per_processor_us,
            raw.label,
        )
    }
}

impl BenchmarkConfig {
    pub fn new(
        nodes: u32,
        cores_per_node: u32,
        task_time_us: u64,
        job_time_per_processor_us: u64,
        label: impl Into<String>,
    ) -> Result<Self, ConfigError> {
        let config = BenchmarkConfig {
            task_time_us,
            job_time_per_processor_us,
            nodes,
            cores_per_node,
            label: label.into(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.task_time_us == 0 {
            return Err(ConfigError::ZeroTaskTime);
        }
        if self.job_time_per_processor_us == 0 {
            return Err(ConfigError::ZeroJobTime);
        }
        if self.nodes == 0 {
            return Err(ConfigError::ZeroNodes);
        }
        if self.cores_per_node == 0 {
            return Err(ConfigError::ZeroCores);
        }
        if !self.job_time_per_processor_us.is_multiple_of(self.task_time_us) {
            return Err(ConfigError::NotDivisible {
                task_time_us: self.task_time_us,
                job_time_us: self.job_time_per_processor_us,
            });
        }
        self.processors()
            .checked_mul(self.tasks_per_processor())
            .ok_or(ConfigError::Overflow)?;
        Ok(())
    }

    /// Tasks per processor, `T_job / t`.
    pub fn tasks_per_processor(&self) -> u64 {
        self.job_time_per_processor_us / self.task_time_us
    }

    /// Total processor count, `nodes * cores_per_node`.
    pub fn processors(&self) -> u64 {
        u64::from(self.nodes) * u64::from(self.cores_per_node)
    }

    pub fn total_tasks(&self) -> u64 {
        self.processors() * self.tasks_per_processor()
    }

    /// Placement of a task id under node-major dense numbering.
    pub fn task(&self, task_id: u64) -> Option<TaskSpec> {
        if task_id >= self.total_tasks() {
            return None;
        }
        let n = self.tasks_per_processor();
        let per_node = n * u64::from(self.cores_per_node);
        Some(TaskSpec {
            task_id,
            node_index: (task_id / per_node) as u32,
            slot_index: ((task_id / n) % u64::from(self.cores_per_node)) as u32,
            sequence_index: (task_id % n) as u32,
            duration_us: self.task_time_us,
        })
    }

    /// Id of the task at (node, slot, sequence).
    pub fn task_id(&self, node_index: u32, slot_index: u32, sequence_index: u64) -> u64 {
        let n = self.tasks_per_processor();
        (u64::from(node_index) * u64::from(self.cores_per_node) + u64::from(slot_index)) * n
            + sequence_index
    }

    /// Streams the full task expansion without materializing it.
    pub fn tasks(&self) -> TaskIter<'_> {
        TaskIter {
            config: self,
            next: 0,
            end: self.total_tasks(),
        }
    }
}

impl fmt::Display for BenchmarkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.label.is_empty() {
            write!(f, "{}: ", self.label)?;
        }
        write!(
            f,
            "{} nodes x {} cores, t={} us, T_job={} us",
            self.nodes, self.cores_per_node, self.task_time_us, self.job_time_per_processor_us
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u64,
    pub node_index: u32,
    pub slot_index: u32,
    pub sequence_index: u32,
    pub duration_us: u64,
}

#[derive(Debug, Clone)]
pub struct TaskIter<'a> {
    config: &'a BenchmarkConfig,
    next: u64,
    end: u64,
}

impl Iterator for TaskIter<'_> {
    type Item = TaskSpec;

    fn next(&mut self) -> Option<TaskSpec> {
        if self.next >= self.end {
            return None;
        }
        let task = self.config.task(self.next);
        self.next += 1;
        task
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = usize::try_from(self.end - self.next).unwrap_or(usize::MAX);
        (left, Some(left))
    }

    fn count(self) -> usize {
        usize::try_from(self.end - self.next).unwrap_or(usize::MAX)
    }
}

impl ExactSizeIterator for TaskIter<'_> {}

/// Expands a configuration into its `P * n` tasks, ordered node-major,
/// then by slot, then by sequence.
pub fn expand_tasks(config: &BenchmarkConfig) -> Result<Vec<TaskSpec>, ConfigError> {
    config.validate()?;
    Ok(config.tasks().collect())
}

/// Task length classes of the benchmark (all with a 240 s job time).
const TASK_CLASSES: [(&str, u64); 4] = [("rapid", 1), ("fast", 5), ("medium", 30), ("long", 60)];
const SCALE_NODES: [u32; 5] = [32, 64, 128, 256, 512];
pub const PAPER_CORES_PER_NODE: u32 = 64;
pub const PAPER_JOB_TIME_US: u64 = 240 * MICROS_PER_SEC;

/// Named preset such as `S1-rapid` or `S5-long`.
pub fn paper_config(preset_name: &str) -> Result<BenchmarkConfig, ConfigError> {
    let unknown = || ConfigError::UnknownPreset(preset_name.to_string());
    let (scale, class) = preset_name.split_once('-').ok_or_else(unknown)?;
    let scale_idx = scale
        .strip_prefix(['S', 's'])
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|d| (1..=SCALE_NODES.len()).contains(d))
        .ok_or_else(unknown)?;
    let (_, task_s) = TASK_CLASSES
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(class))
        .ok_or_else(unknown)?;
    BenchmarkConfig::new(
        SCALE_NODES[scale_idx - 1],
        PAPER_CORES_PER_NODE,
        task_s * MICROS_PER_SEC,
        PAPER_JOB_TIME_US,
        format!("S{scale_idx}-{}", class.to_ascii_lowercase()),
    )
}

/// All twenty presets in scale-major order.
pub fn paper_presets() -> Vec<BenchmarkConfig> {
    (1..=SCALE_NODES.len())
        .flat_map(|s| {
            TASK_CLASSES
                .iter()
                .map(move |(class, _)| paper_config(&format!("S{s}-{class}")).expect("preset"))
        })
        .collect()
}

/// Exact processor-time in hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessorHours(pub Ratio<u128>);

impl ProcessorHours {
    /// Rounded half-up to one decimal, e.g. `136.5`.
    pub fn display_tenths(&self) -> String {
        let (num, den) = (*self.0.numer(), *self.0.denom());
        let tenths = (20 * num + den) / (2 * den);
        format!("{}.{}", tenths / 10, tenths % 10)
    }

    pub fn as_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

pub fn total_processor_time(config: &BenchmarkConfig) -> ProcessorHours {
    let micros = u128::from(config.processors()) * u128::from(config.job_time_per_processor_us);
    ProcessorHours(Ratio::new(micros, u128::from(MICROS_PER_HOUR)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    /// One scheduling unit per task.
    Flat,
    /// One unit per processor, its tasks looped sequentially.
    PerCore,
    /// One unit per node, covering every core of it.
    PerNode,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 3] = [
        AggregationStrategy::Flat,
        AggregationStrategy::PerCore,
        AggregationStrategy::PerNode,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AggregationStrategy::Flat => "flat",
            AggregationStrategy::PerCore => "per-core",
            AggregationStrategy::PerNode => "per-node",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "flat" => Ok(AggregationStrategy::Flat),
            "per-core" | "core" | "multi-level" | "m" => Ok(AggregationStrategy::PerCore),
            "per-node" | "node" | "triples" | "n" => Ok(AggregationStrategy::PerNode),
            other => Err(format!(
                "unknown strategy `{other}` (expected flat, per-core or per-node)"
            )),
        }
    }
}

/// The tasks one core slot runs back to back inside a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRun {
    pub slot_index: u32,
    pub task_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulingUnit {
    pub unit_id: u64,
    pub node_index: u32,
    pub slot_runs: Vec<SlotRun>,
    /// slot index -> core id
    #[serde(default)]
    pub affinity: BTreeMap<u32, u32>,
    pub threads_per_task: u32,
}

impl SchedulingUnit {
    pub fn task_count(&self) -> usize {
        self.slot_runs.iter().map(|r| r.task_ids.len()).sum()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.slot_runs.iter().flat_map(|r| r.task_ids.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub config: BenchmarkConfig,
    pub strategy: AggregationStrategy,
    pub units: Vec<SchedulingUnit>,
}

impl ExecutionPlan {
    pub fn total_tasks(&self) -> usize {
        self.units.iter().map(SchedulingUnit::task_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventRecord {
    pub unit_id: u64,
    pub task_id: u64,
    pub node_index: u32,
    pub slot_index: u32,
    pub start_us: u64,
    pub end_us: u64,
}

impl EventRecord {
    pub fn duration_us(&self) -> u64 {
        self.end_us - self.start_us
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
    pub origin_note: String,
}

impl EventLog {
    pub fn new(records: Vec<EventRecord>, origin_note: impl Into<String>) -> Self {
        EventLog {
            records,
            origin_note: origin_note.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn first_start_us(&self) -> Option<u64> {
        self.records.iter().map(|r| r.start_us).min()
    }

    /// Shifts every record so the earliest start is zero.
    pub fn normalize_origin(&mut self) {
        if let Some(origin) = self.first_start_us() {
            for r in &mut self.records {
                r.start_us -= origin;
                r.end_us -= origin;
            }
        }
    }

    /// First pair of records that share a (node, slot) and overlap in time.
    pub fn find_slot_overlap(&self) -> Option<(EventRecord, EventRecord)> {
        let mut sorted = self.records.clone();
        sorted.sort_by_key(|r| (r.node_index, r.slot_index, r.start_us, r.end_us));
        sorted.windows(2).find_map(|w| {
            let (a, b) = (w[0], w[1]);
            let same_slot = a.node_index == b.node_index && a.slot_index == b.slot_index;
            (same_slot && b.start_us < a.end_us).then_some((a, b))
        })
    }
}
