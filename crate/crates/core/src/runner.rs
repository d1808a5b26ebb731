//! Real execution of a plan on the local host. Virtual nodes are bookkeeping
//! only: every (node, slot) pair becomes one worker thread.

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::aggregator::{check_plan, format_seconds, PlanError};
use crate::model::{EventLog, EventRecord, ExecutionPlan};
use crate::sim::{simulate, SchedulerModel, SimError};

pub const MAX_SLOTS_ENV: &str = "NODEPACK_MAX_SLOTS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("plan needs {needed} concurrent slots but the host allows {available}")]
    Oversubscription { needed: usize, available: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("simulated dispatch failed: {0}")]
    Sim(#[from] SimError),
    #[error("task {task_id}: {source}")]
    Io {
        task_id: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("task {task_id}: command exited with {status}")]
    Command { task_id: u64, status: std::process::ExitStatus },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerOptions {
    pub allow_oversubscribe: bool,
    pub pin_enabled: bool,
    pub max_host_slots: usize,
    /// Shell command run per task instead of an in-process wait; `{duration_s}`
    /// and `{task_id}` are substituted.
    pub task_command_override: Option<String>,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            allow_oversubscribe: false,
            pin_enabled: true,
            max_host_slots: detect_host_slots(),
            task_command_override: None,
        }
    }
}

/// Available parallelism, unless `NODEPACK_MAX_SLOTS` holds a positive count.
pub fn detect_host_slots() -> usize {
    let env = std::env::var(MAX_SLOTS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    match env {
        Some(n) if n >= 1 => n,
        _ => thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// (unit id, earliest release offset, task ids) for one unit on one slot.
type UnitRun = (u64, Option<u64>, Vec<u64>);

/// Work for one worker: its unit runs in unit order.
struct SlotWork {
    node: u32,
    slot: u32,
    host_cpu: usize,
    runs: Vec<UnitRun>,
}

fn slot_work(plan: &ExecutionPlan, release_us: Option<&[u64]>) -> Vec<SlotWork> {
    let mut order: Vec<usize> = (0..plan.units.len()).collect();
    order.sort_by_key(|&i| plan.units[i].unit_id);
    let mut by_slot: BTreeMap<(u32, u32), Vec<UnitRun>> = BTreeMap::new();
    for i in order {
        let unit = &plan.units[i];
        for run in &unit.slot_runs {
            by_slot.entry((unit.node_index, run.slot_index)).or_default().push((
                unit.unit_id,
                release_us.map(|r| r[i]),
                run.task_ids.clone(),
            ));
        }
    }
    by_slot
        .into_iter()
        .enumerate()
        .map(|(host_cpu, ((node, slot), runs))| SlotWork { node, slot, host_cpu, runs })
        .collect()
}

#[cfg(target_os = "linux")]
fn pin_current_thread(cpu: usize) -> std::io::Result<()> {
    let cpus = thread::available_parallelism().map_or(1, |n| n.get());
    // SAFETY: cpu_set_t is plain data; pid 0 targets the calling thread.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu % cpus, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(std::io::Error::last_os_error());
        }
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
fn pin_current_thread(_cpu: usize) -> std::io::Result<()> {
    Err(std::io::Error::new(std::io::ErrorKind::Unsupported, "affinity not supported here"))
}

fn micros_since(origin: Instant) -> u64 {
    origin.elapsed().as_micros() as u64
}

fn run_task(task_id: u64, duration_us: u64, opts: &RunnerOptions) -> Result<(), RunError> {
    match &opts.task_command_override {
        None => {
            thread::sleep(Duration::from_micros(duration_us));
            Ok(())
        }
        Some(pattern) => {
            let command = pattern
                .replace("{duration_s}", &format_seconds(duration_us))
                .replace("{task_id}", &task_id.to_string());
            let status = Command::new("sh")
                .arg("-c")
                .arg(&command)
                .status()
                .map_err(|source| RunError::Io { task_id, source })?;
            if status.success() {
                Ok(())
            } else {
                Err(RunError::Command { task_id, status })
            }
        }
    }
}

fn run_workers(plan: &ExecutionPlan, work: Vec<SlotWork>, opts: &RunnerOptions) -> Result<EventLog, RunError> {
    if !opts.allow_oversubscribe && work.len() > opts.max_host_slots.max(1) {
        return Err(RunError::Oversubscription {
            needed: work.len(),
            available: opts.max_host_slots.max(1),
        });
    }
    let duration = plan.config.task_time_us;
    let records = Mutex::new(Vec::with_capacity(plan.total_tasks()));
    let failure: Mutex<Option<RunError>> = Mutex::new(None);
    let origin = Instant::now();

    thread::scope(|scope| {
        for w in &work {
            let (records, failure) = (&records, &failure);
            scope.spawn(move || {
                if opts.pin_enabled {
                    if let Err(e) = pin_current_thread(w.host_cpu) {
                        log::warn!("node {} slot {}: running unpinned ({e})", w.node, w.slot);
                    }
                }
                let mut local = Vec::new();
                for (unit_id, release, tasks) in &w.runs {
                    if let Some(at) = release {
                        let now = micros_since(origin);
                        if *at > now {
                            thread::sleep(Duration::from_micros(at - now));
                        }
                    }
                    for &task_id in tasks {
                        let start_us = micros_since(origin);
                        if let Err(e) = run_task(task_id, duration, opts) {
                            failure.lock().unwrap().get_or_insert(e);
                            return;
                        }
                        local.push(EventRecord {
                            unit_id: *unit_id,
                            task_id,
                            node_index: w.node,
                            slot_index: w.slot,
                            start_us,
                            end_us: micros_since(origin),
                        });
                    }
                }
                records.lock().unwrap().extend(local);
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut records = records.into_inner().unwrap();
    records.sort_unstable_by_key(|r| r.task_id);
    let mut log = EventLog::new(records, "measured: t=0 is the first task start");
    log.normalize_origin();
    Ok(log)
}

/// Runs every slot's tasks back to back as real timed waits.
pub fn execute(plan: &ExecutionPlan, opts: &RunnerOptions) -> Result<EventLog, RunError> {
    if plan.units.is_empty() {
        return Ok(EventLog::default());
    }
    check_plan(plan)?;
    run_workers(plan, slot_work(plan, None), opts)
}

/// Releases each unit no earlier than the start time the simulator gives it
/// under `model`, then runs its tasks for real.
pub fn execute_through_sim_dispatch(
    plan: &ExecutionPlan,
    model: &SchedulerModel,
    opts: &RunnerOptions,
) -> Result<EventLog, RunError> {
    if plan.units.is_empty() {
        return Ok(EventLog::default());
    }
    check_plan(plan)?;
    let work = slot_work(plan, None);
    if !opts.allow_oversubscribe && work.len() > opts.max_host_slots.max(1) {
        return Err(RunError::Oversubscription {
            needed: work.len(),
            available: opts.max_host_slots.max(1),
        });
    }
    let starts = simulate(plan, model)?.unit_start_us(plan);
    run_workers(plan, slot_work(plan, Some(&starts)), opts)
}
