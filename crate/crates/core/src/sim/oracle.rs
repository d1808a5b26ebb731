//! Naive 1 µs time-stepped replay of the scheduler model, used only to
//! cross-check the event-driven engine. Every tick it rescans all units.

use super::{BusyInterval, LoopWork, SchedulerModel, SimError, SimResult};
use crate::aggregator::check_plan;
use crate::model::{EventLog, EventRecord, ExecutionPlan};

pub const ORACLE_MAX_TASKS: usize = 10_000;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Waiting,
    Dispatching,
    Running { end: u64 },
    AwaitingCleanup { since: u64 },
    CleaningUp,
    Releasing { at: u64 },
    Done,
}

pub fn replay_oracle(plan: &ExecutionPlan, model: &SchedulerModel) -> Result<SimResult, SimError> {
    let tasks = plan.total_tasks();
    if tasks > ORACLE_MAX_TASKS {
        return Err(SimError::Size {
            tasks,
            limit: ORACLE_MAX_TASKS,
        });
    }
    check_plan(plan)?;

    let t = plan.config.task_time_us;
    let units = &plan.units;
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by_key(|&i| units[i].unit_id);

    let slots_of = |i: usize| -> Vec<(u32, u32)> {
        units[i]
            .slot_runs
            .iter()
            .map(|r| (units[i].node_index, r.slot_index))
            .collect()
    };
    let makespan = |i: usize| -> u64 {
        units[i].slot_runs.iter().map(|r| r.task_ids.len() as u64 * t).max().unwrap_or(0)
    };
    let on_loop = model.cleanup_blocks_dispatch && model.cleanup_cost_us > 0;

    let mut phase = vec![Phase::Waiting; units.len()];
    let mut started_at = vec![0u64; units.len()];
    let mut release = vec![0u64; units.len()];
    let mut busy_slots: Vec<(u32, u32)> = Vec::new();
    // (work, unit index, finishes at)
    let mut loop_item: Option<(LoopWork, usize, u64)> = None;
    let mut intervals = Vec::new();

    let mut tick: u64 = 0;
    loop {
        // completions at this tick
        if let Some((work, i, done)) = loop_item {
            if done == tick {
                loop_item = None;
                match work {
                    LoopWork::Dispatch => {
                        started_at[i] = tick;
                        phase[i] = Phase::Running { end: tick + makespan(i) };
                    }
                    LoopWork::Cleanup => phase[i] = Phase::Releasing { at: tick },
                }
            }
        }
        for p in phase.iter_mut() {
            if *p == (Phase::Running { end: tick }) {
                *p = if on_loop {
                    Phase::AwaitingCleanup { since: tick }
                } else {
                    Phase::Releasing {
                        at: tick + model.cleanup_cost_us,
                    }
                };
            }
        }
        for i in 0..units.len() {
            if phase[i] == (Phase::Releasing { at: tick }) {
                phase[i] = Phase::Done;
                release[i] = tick;
                let slots = slots_of(i);
                busy_slots.retain(|s| !slots.contains(s));
            }
        }

        // decisions at this tick
        while loop_item.is_none() {
            let cleanup = order
                .iter()
                .filter_map(|&i| match phase[i] {
                    Phase::AwaitingCleanup { since } => Some((since, units[i].unit_id, i)),
                    _ => None,
                })
                .min();
            if let Some((_, unit_id, i)) = cleanup {
                phase[i] = Phase::CleaningUp;
                intervals.push(BusyInterval {
                    start_us: tick,
                    end_us: tick + model.cleanup_cost_us,
                    work: LoopWork::Cleanup,
                    unit_id,
                });
                loop_item = Some((LoopWork::Cleanup, i, tick + model.cleanup_cost_us));
                break;
            }

            let candidate = order.iter().copied().find(|&i| {
                phase[i] == Phase::Waiting
                    && slots_of(i).iter().all(|s| {
                        !busy_slots.contains(s)
                            && !order.iter().any(|&j| {
                                units[j].unit_id < units[i].unit_id
                                    && phase[j] == Phase::Waiting
                                    && slots_of(j).contains(s)
                            })
                    })
            });
            let Some(i) = candidate else { break };
            busy_slots.extend(slots_of(i));
            if model.dispatch_cost_us == 0 {
                started_at[i] = tick;
                phase[i] = Phase::Running { end: tick + makespan(i) };
            } else {
                phase[i] = Phase::Dispatching;
                intervals.push(BusyInterval {
                    start_us: tick,
                    end_us: tick + model.dispatch_cost_us,
                    work: LoopWork::Dispatch,
                    unit_id: units[i].unit_id,
                });
                loop_item = Some((LoopWork::Dispatch, i, tick + model.dispatch_cost_us));
            }
        }

        if phase.iter().all(|p| *p == Phase::Done) {
            break;
        }
        tick += 1;
    }

    let mut records = Vec::with_capacity(tasks);
    for (i, unit) in units.iter().enumerate() {
        for run in &unit.slot_runs {
            for (k, &task_id) in run.task_ids.iter().enumerate() {
                let start = started_at[i] + k as u64 * t;
                records.push(EventRecord {
                    unit_id: unit.unit_id,
                    task_id,
                    node_index: unit.node_index,
                    slot_index: run.slot_index,
                    start_us: start,
                    end_us: start + t,
                });
            }
        }
    }
    records.sort_unstable_by_key(|r| r.task_id);

    Ok(SimResult {
        log: EventLog::new(records, "simulated: t=0 is the first scheduler action"),
        resource_release_us: release,
        scheduler_busy_intervals: intervals,
    })
}
