//! Measurements over event logs and over the published run-time table: job
//! runtime, normalized overhead, utilization step series, medians and
//! cross-strategy overhead ratios.

mod logio;
pub mod paper;
pub mod svg;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AggregationStrategy, EventLog};

pub use logio::{read_event_log_csv, write_event_log_csv, LogParseError, EVENT_LOG_HEADER};
pub use paper::{
    median_runtime, overhead_table, paper_dataset, strategy_ratio, PaperRun, PaperStrategy,
    RatioBasis, RatioPairing, RatioReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("event log is empty")]
    EmptyLog,
    #[error("{busy} tasks running at t={at_us} us exceeds {processors} processors")]
    CapacityExceeded { at_us: u64, busy: u64, processors: u64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// Normalized overheads above this are flagged (10% of the job time).
pub fn overhead_threshold() -> Ratio<i64> {
    Ratio::new(1, 10)
}

/// Last end minus first start.
pub fn job_runtime(log: &EventLog) -> Result<u64, MetricsError> {
    let start = log.records.iter().map(|r| r.start_us).min();
    let end = log.records.iter().map(|r| r.end_us).max();
    match (start, end) {
        (Some(s), Some(e)) => Ok(e - s),
        _ => Err(MetricsError::EmptyLog),
    }
}

/// `(runtime - job_time) / job_time`, exact. Negative when the runtime is
/// shorter than the job time, which real logs never produce.
pub fn normalized_overhead(runtime_us: u64, job_time_us: u64) -> Ratio<i64> {
    assert!(job_time_us > 0, "job time must be positive");
    Ratio::new(runtime_us as i64 - job_time_us as i64, job_time_us as i64)
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverheadReport {
    pub label: String,
    pub strategy: AggregationStrategy,
    pub nodes: u32,
    pub task_time_us: u64,
    pub job_time_us: u64,
    pub job_runtime_us: u64,
    pub overhead_us: i64,
    pub normalized_overhead: Ratio<i64>,
}

impl OverheadReport {
    pub fn new(
        label: impl Into<String>,
        strategy: AggregationStrategy,
        nodes: u32,
        task_time_us: u64,
        job_time_us: u64,
        job_runtime_us: u64,
    ) -> Self {
        OverheadReport {
            label: label.into(),
            strategy,
            nodes,
            task_time_us,
            job_time_us,
            job_runtime_us,
            overhead_us: job_runtime_us as i64 - job_time_us as i64,
            normalized_overhead: normalized_overhead(job_runtime_us, job_time_us),
        }
    }

    pub fn is_negative(&self) -> bool {
        self.overhead_us < 0
    }

    pub fn exceeds_threshold(&self) -> bool {
        self.normalized_overhead > overhead_threshold()
    }

    pub fn row(&self) -> OverheadRow {
        OverheadRow {
            label: self.label.clone(),
            strategy: self.strategy.to_string(),
            nodes: self.nodes,
            task_time_us: self.task_time_us,
            job_time_us: self.job_time_us,
            job_runtime_us: self.job_runtime_us,
            overhead_us: self.overhead_us,
            normalized_overhead: ratio_to_f64(self.normalized_overhead),
            normalized_overhead_exact: self.normalized_overhead.to_string(),
            exceeds_10pct: self.exceeds_threshold(),
        }
    }
}

/// Flat serialized form of an [`OverheadReport`] for CSV and JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub label: String,
    pub strategy: String,
    pub nodes: u32,
    pub task_time_us: u64,
    pub job_time_us: u64,
    pub job_runtime_us: u64,
    pub overhead_us: i64,
    pub normalized_overhead: f64,
    pub normalized_overhead_exact: String,
    pub exceeds_10pct: bool,
}

/// Fraction of processors busy over time, as an exact step function.
///
/// `busy[i]` tasks run on `[breakpoints_us[i], breakpoints_us[i + 1])`; the
/// final entry is always zero. Times are shifted so the first start is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilizationSeries {
    pub processors: u64,
    pub breakpoints_us: Vec<u64>,
    pub busy: Vec<u64>,
}

impl UtilizationSeries {
    pub fn values(&self) -> Vec<f64> {
        self.busy.iter().map(|&b| b as f64 / self.processors as f64).collect()
    }

    pub fn value_at(&self, t_us: u64) -> f64 {
        let idx = self.breakpoints_us.partition_point(|&b| b <= t_us);
        if idx == 0 {
            return 0.0;
        }
        self.busy[idx - 1] as f64 / self.processors as f64
    }

    /// Busy slot-microseconds under the curve.
    pub fn integral_slot_us(&self) -> u128 {
        self.breakpoints_us
            .windows(2)
            .zip(&self.busy)
            .map(|(w, &b)| u128::from(w[1] - w[0]) * u128::from(b))
            .sum()
    }

    /// Earliest time every processor is busy, if that ever happens.
    pub fn first_full_us(&self) -> Option<u64> {
        self.busy
            .iter()
            .position(|&b| b == self.processors)
            .map(|i| self.breakpoints_us[i])
    }

    pub fn end_us(&self) -> u64 {
        self.breakpoints_us.last().copied().unwrap_or(0)
    }
}

/// Sweeps the sorted start/end events into a utilization step function.
pub fn utilization(log: &EventLog, processors: u64) -> Result<UtilizationSeries, MetricsError> {
    let origin = log.first_start_us().ok_or(MetricsError::EmptyLog)?;
    let mut events: Vec<(u64, i64)> = log
        .records
        .iter()
        .flat_map(|r| [(r.start_us - origin, 1), (r.end_us - origin, -1)])
        .collect();
    events.sort_unstable();

    let mut breakpoints_us = Vec::new();
    let mut busy = Vec::new();
    let mut running: i64 = 0;
    let mut i = 0;
    while i < events.len() {
        let at = events[i].0;
        while i < events.len() && events[i].0 == at {
            running += events[i].1;
            i += 1;
        }
        let now = running as u64;
        if now > processors {
            return Err(MetricsError::CapacityExceeded {
                at_us: at,
                busy: now,
                processors,
            });
        }
        if busy.last() != Some(&now) {
            breakpoints_us.push(at);
            busy.push(now);
        }
    }
    Ok(UtilizationSeries {
        processors,
        breakpoints_us,
        busy,
    })
}

/// Busy time summed per (node, slot), maximized: the per-processor work
/// contained in a log. For a complete plan this is the job time.
pub fn per_slot_work_us(log: &EventLog) -> u64 {
    let mut work = std::collections::BTreeMap::new();
    for r in &log.records {
        *work.entry((r.node_index, r.slot_index)).or_insert(0u64) += r.duration_us();
    }
    work.values().copied().max().unwrap_or(0)
}

/// Distinct (node, slot) pairs seen in a log.
pub fn distinct_slots(log: &EventLog) -> u64 {
    let slots: std::collections::BTreeSet<_> =
        log.records.iter().map(|r| (r.node_index, r.slot_index)).collect();
    slots.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventRecord, MICROS_PER_SEC};

    fn rec(slot: u32, start_s: u64, end_s: u64) -> EventRecord {
        EventRecord {
            unit_id: 0,
            task_id: 0,
            node_index: 0,
            slot_index: slot,
            start_us: start_s * MICROS_PER_SEC,
            end_us: end_s * MICROS_PER_SEC,
        }
    }

    #[test]
    fn runtime_is_span() {
        assert_eq!(job_runtime(&EventLog::new(vec![rec(0, 0, 240)], "")), Ok(240 * MICROS_PER_SEC));
        let two = EventLog::new(vec![rec(0, 0, 240), rec(1, 100, 500)], "");
        assert_eq!(job_runtime(&two), Ok(500 * MICROS_PER_SEC));
        assert_eq!(job_runtime(&EventLog::default()), Err(MetricsError::EmptyLog));
    }

    #[test]
    fn normalized_overheads() {
        let s = MICROS_PER_SEC;
        let m = normalized_overhead(2768 * s, 240 * s);
        assert_eq!(m, Ratio::new(2528, 240));
        assert!((ratio_to_f64(m) - 10.5333).abs() < 1e-3);
        assert_eq!(normalized_overhead(242 * s, 240 * s), Ratio::new(1, 120));
        assert_eq!(normalized_overhead(240 * s, 240 * s), Ratio::from_integer(0));
        assert!(normalized_overhead(230 * s, 240 * s) < Ratio::from_integer(0));
        let report = OverheadReport::new("x", AggregationStrategy::PerNode, 1, s, 240 * s, 230 * s);
        assert!(report.is_negative());
    }

    #[test]
    fn utilization_single_task() {
        let series = utilization(&EventLog::new(vec![rec(0, 3, 8)], ""), 1).unwrap();
        assert_eq!(series.breakpoints_us, vec![0, 5 * MICROS_PER_SEC]);
        assert_eq!(series.values(), vec![1.0, 0.0]);
    }

    #[test]
    fn utilization_overlapping_pair() {
        let series = utilization(&EventLog::new(vec![rec(0, 0, 2), rec(1, 1, 3)], ""), 2).unwrap();
        let s = MICROS_PER_SEC;
        assert_eq!(series.breakpoints_us, vec![0, s, 2 * s, 3 * s]);
        assert_eq!(series.values(), vec![0.5, 1.0, 0.5, 0.0]);
        assert_eq!(series.integral_slot_us(), 4 * u128::from(s));
        assert_eq!(series.first_full_us(), Some(s));
        assert_eq!(series.value_at(2 * s + 1), 0.5);
    }

    #[test]
    fn utilization_back_to_back_merges() {
        let series = utilization(&EventLog::new(vec![rec(0, 0, 2), rec(0, 2, 4)], ""), 1).unwrap();
        assert_eq!(series.busy, vec![1, 0]);
    }

    #[test]
    fn utilization_capacity() {
        let log = EventLog::new(vec![rec(0, 0, 2), rec(1, 1, 3)], "");
        assert!(matches!(utilization(&log, 1), Err(MetricsError::CapacityExceeded { busy: 2, .. })));
        assert_eq!(utilization(&EventLog::default(), 1), Err(MetricsError::EmptyLog));
    }
}
