//! Node-based task aggregation toolkit.
//!
//! Builds execution plans that bundle constant-time compute tasks per task,
//! per core, or per node; simulates a centralized scheduler dispatching those
//! plans; runs plans for real on the local host; and analyzes the resulting
//! event logs (job runtime, normalized overhead, utilization).

pub mod aggregator;
pub mod cli;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod sim;

pub use aggregator::{build_plan, verify_partition, ScriptTemplate};
pub use model::{
    expand_tasks, paper_config, AggregationStrategy, BenchmarkConfig, EventLog, EventRecord,
    ExecutionPlan,
};
pub use sim::{simulate, SchedulerModel, SimResult};
