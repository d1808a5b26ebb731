//! Execution-plan construction for the three aggregation strategies, core
//! affinity assignment, and per-node job script rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AggregationStrategy, BenchmarkConfig, ConfigError, ExecutionPlan, SchedulingUnit, SlotRun,
    MICROS_PER_SEC,
};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unit {unit_id} needs {slots} slots but nodes have {cores_per_node} cores")]
    Oversubscription {
        unit_id: u64,
        slots: usize,
        cores_per_node: u32,
    },
    #[error("unit {unit_id}: slot {slot_index} is outside 0..{cores_per_node}")]
    SlotOutOfRange {
        unit_id: u64,
        slot_index: u32,
        cores_per_node: u32,
    },
    #[error("unit {unit_id}: slot {slot_index} appears in more than one run")]
    DuplicateSlot { unit_id: u64, slot_index: u32 },
    #[error("unit {0} has no tasks")]
    EmptyUnit(u64),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("writing plan bundle: {0}")]
    Io(#[from] io::Error),
    #[error("serializing manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unresolved placeholder {{{name}}} in `{pattern}`")]
    Unresolved { name: String, pattern: String },
    #[error("pattern `{pattern}` is missing required placeholder {{{name}}}")]
    Missing { name: &'static str, pattern: String },
    #[error("unit {0} has no affinity assigned")]
    NoAffinity(u64),
}

/// Builds the plan for `strategy`. Units come back with affinity assigned.
///
/// Flat units are numbered wave by wave (every processor's first task, then
/// every processor's second task, ...), which is the order an array job
/// fills its slots in.
pub fn build_plan(
    config: &BenchmarkConfig,
    strategy: AggregationStrategy,
) -> Result<ExecutionPlan, AggregateError> {
    config.validate()?;
    let n = config.tasks_per_processor();
    let cores = config.cores_per_node;
    let mut raw = Vec::new();

    match strategy {
        AggregationStrategy::Flat => {
            raw.reserve(usize::try_from(config.total_tasks()).unwrap_or(0));
            for seq in 0..n {
                for node in 0..config.nodes {
                    for slot in 0..cores {
                        raw.push((
                            node,
                            vec![SlotRun {
                                slot_index: slot,
                                task_ids: vec![config.task_id(node, slot, seq)],
                            }],
                        ));
                    }
                }
            }
        }
        AggregationStrategy::PerCore => {
            for node in 0..config.nodes {
                for slot in 0..cores {
                    raw.push((node, vec![slot_run(config, node, slot)]));
                }
            }
        }
        AggregationStrategy::PerNode => {
            for node in 0..config.nodes {
                let runs = (0..cores).map(|slot| slot_run(config, node, slot)).collect();
                raw.push((node, runs));
            }
        }
    }

    let units = raw
        .into_iter()
        .enumerate()
        .map(|(id, (node_index, slot_runs))| {
            let unit = SchedulingUnit {
                unit_id: id as u64,
                node_index,
                slot_runs,
                affinity: BTreeMap::new(),
                threads_per_task: 1,
            };
            assign_affinity(unit, cores)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ExecutionPlan {
        config: config.clone(),
        strategy,
        units,
    })
}

fn slot_run(config: &BenchmarkConfig, node: u32, slot: u32) -> SlotRun {
    let first = config.task_id(node, slot, 0);
    SlotRun {
        slot_index: slot,
        task_ids: (first..first + config.tasks_per_processor()).collect(),
    }
}

/// Pins slot `i` to core `i` and spreads the node's cores evenly over the
/// unit's slots as threads per task.
pub fn assign_affinity(
    mut unit: SchedulingUnit,
    cores_per_node: u32,
) -> Result<SchedulingUnit, AggregateError> {
    let slots = unit.slot_runs.len();
    if slots == 0 {
        return Err(AggregateError::EmptyUnit(unit.unit_id));
    }
    if slots > cores_per_node as usize {
        return Err(AggregateError::Oversubscription {
            unit_id: unit.unit_id,
            slots,
            cores_per_node,
        });
    }
    let mut affinity = BTreeMap::new();
    for run in &unit.slot_runs {
        if run.slot_index >= cores_per_node {
            return Err(AggregateError::SlotOutOfRange {
                unit_id: unit.unit_id,
                slot_index: run.slot_index,
                cores_per_node,
            });
        }
        if affinity.insert(run.slot_index, run.slot_index).is_some() {
            return Err(AggregateError::DuplicateSlot {
                unit_id: unit.unit_id,
                slot_index: run.slot_index,
            });
        }
    }
    unit.affinity = affinity;
    unit.threads_per_task = cores_per_node / slots as u32;
    Ok(unit)
}

/// Outcome of [`verify_partition`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionCheck {
    pub first_missing: Option<u64>,
    pub first_duplicate: Option<u64>,
    pub first_out_of_range: Option<u64>,
}

impl PartitionCheck {
    pub fn is_valid(&self) -> bool {
        self.first_missing.is_none()
            && self.first_duplicate.is_none()
            && self.first_out_of_range.is_none()
    }
}

impl fmt::Display for PartitionCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("every task appears exactly once");
        }
        let mut parts = Vec::new();
        if let Some(id) = self.first_missing {
            parts.push(format!("first missing task id {id}"));
        }
        if let Some(id) = self.first_duplicate {
            parts.push(format!("first duplicated task id {id}"));
        }
        if let Some(id) = self.first_out_of_range {
            parts.push(format!("first out-of-range task id {id}"));
        }
        f.write_str(&parts.join("; "))
    }
}

/// Checks that every task id of the configuration appears exactly once
/// across the plan's units, using a presence bitmap.
pub fn verify_partition(plan: &ExecutionPlan) -> PartitionCheck {
    let total = plan.config.total_tasks();
    let mut seen = vec![false; usize::try_from(total).unwrap_or(0)];
    let mut check = PartitionCheck::default();
    for id in plan.units.iter().flat_map(SchedulingUnit::task_ids) {
        match seen.get_mut(id as usize) {
            None => {
                check.first_out_of_range.get_or_insert(id);
            }
            Some(slot) if *slot => {
                check.first_duplicate.get_or_insert(id);
            }
            Some(slot) => *slot = true,
        }
    }
    check.first_missing = seen.iter().position(|s| !s).map(|i| i as u64);
    check
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan does not partition the tasks: {0}")]
    Partition(PartitionCheck),
    #[error("unit {unit_id}: node {node_index} is outside 0..{nodes}")]
    NodeOutOfRange { unit_id: u64, node_index: u32, nodes: u32 },
    #[error("unit {unit_id}: task {task_id} belongs to node {expected_node} slot {expected_slot}")]
    Misplaced {
        unit_id: u64,
        task_id: u64,
        expected_node: u32,
        expected_slot: u32,
    },
    #[error("unit {unit_id}: tasks in slot {slot_index} are not in sequence order")]
    Unordered { unit_id: u64, slot_index: u32 },
    #[error(transparent)]
    Shape(#[from] AggregateError),
}

/// Full structural check: partition, placement consistency with the task
/// numbering, per-slot sequence order, and unit shape.
pub fn check_plan(plan: &ExecutionPlan) -> Result<(), PlanError> {
    let config = &plan.config;
    config.validate().map_err(AggregateError::from)?;
    for unit in &plan.units {
        if unit.node_index >= config.nodes {
            return Err(PlanError::NodeOutOfRange {
                unit_id: unit.unit_id,
                node_index: unit.node_index,
                nodes: config.nodes,
            });
        }
        // reuses the shape checks: non-empty, no duplicate or out-of-range slots
        assign_affinity(unit.clone(), config.cores_per_node)?;
        for run in &unit.slot_runs {
            if run.task_ids.is_empty() {
                return Err(AggregateError::EmptyUnit(unit.unit_id).into());
            }
            let mut last_seq = None;
            for &id in &run.task_ids {
                let Some(task) = config.task(id) else { continue };
                if task.node_index != unit.node_index || task.slot_index != run.slot_index {
                    return Err(PlanError::Misplaced {
                        unit_id: unit.unit_id,
                        task_id: id,
                        expected_node: task.node_index,
                        expected_slot: task.slot_index,
                    });
                }
                if last_seq.is_some_and(|s| s >= task.sequence_index) {
                    return Err(PlanError::Unordered {
                        unit_id: unit.unit_id,
                        slot_index: run.slot_index,
                    });
                }
                last_seq = Some(task.sequence_index);
            }
        }
    }
    let check = verify_partition(plan);
    if !check.is_valid() {
        return Err(PlanError::Partition(check));
    }
    Ok(())
}

/// Text patterns for generated node scripts.
///
/// Placeholders are `{name}` tokens made of lowercase letters and
/// underscores; shell constructs like `${HOME}` or `{ a; b; }` pass through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTemplate {
    pub shell_preamble: String,
    /// Wraps one worker; needs `{command}`, normally also uses `{core}`.
    pub pin_command_pattern: String,
    /// One compute task; needs `{duration_s}`, may use `{task_id}`.
    pub task_command_pattern: String,
}

impl Default for ScriptTemplate {
    fn default() -> Self {
        ScriptTemplate {
            shell_preamble: "#!/bin/sh".to_string(),
            pin_command_pattern: "taskset -c {core} {command}".to_string(),
            task_command_pattern: "sleep {duration_s} # task {task_id}".to_string(),
        }
    }
}

impl ScriptTemplate {
    /// Template without any CPU pinning wrapper.
    pub fn unpinned() -> Self {
        ScriptTemplate {
            pin_command_pattern: "{command}".to_string(),
            ..ScriptTemplate::default()
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        require(&self.pin_command_pattern, "command")?;
        require(&self.task_command_pattern, "duration_s")?;
        fill(&self.pin_command_pattern, &[("core", ""), ("command", "")])?;
        fill(&self.task_command_pattern, &[("duration_s", ""), ("task_id", "")])?;
        Ok(())
    }
}

fn require(pattern: &str, name: &'static str) -> Result<(), TemplateError> {
    if pattern.contains(&format!("{{{name}}}")) {
        Ok(())
    } else {
        Err(TemplateError::Missing {
            name,
            pattern: pattern.to_string(),
        })
    }
}

/// Substitutes `{name}` placeholders; any unknown placeholder is an error.
fn fill(pattern: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(pattern.len());
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            let name = &after[..name_len];
            match values.iter().find(|(k, _)| *k == name) {
                Some((_, v)) => out.push_str(v),
                None => {
                    return Err(TemplateError::Unresolved {
                        name: name.to_string(),
                        pattern: pattern.to_string(),
                    })
                }
            }
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Seconds with the fractional part trimmed, e.g. `5`, `0.2`, `1.000001`.
pub fn format_seconds(micros: u64) -> String {
    let whole = micros / MICROS_PER_SEC;
    let frac = micros % MICROS_PER_SEC;
    if frac == 0 {
        whole.to_string()
    } else {
        let digits = format!("{frac:06}");
        format!("{whole}.{}", digits.trim_end_matches('0'))
    }
}

fn single_quote(body: &str) -> String {
    format!("'{}'", body.replace('\'', r"'\''"))
}

/// Renders the job script for one unit: a background worker per slot, each
/// running its tasks in order under the pin command, then a single `wait`.
pub fn render_node_script(
    unit: &SchedulingUnit,
    task_time_us: u64,
    template: &ScriptTemplate,
) -> Result<String, TemplateError> {
    template.validate()?;
    if unit.affinity.is_empty() {
        return Err(TemplateError::NoAffinity(unit.unit_id));
    }
    let duration_s = format_seconds(task_time_us);
    let mut script = String::new();
    if !template.shell_preamble.is_empty() {
        script.push_str(template.shell_preamble.trim_end_matches('\n'));
        script.push('\n');
    }
    script.push_str(&format!(
        "# unit {} on node {}: {} worker(s)\nexport OMP_NUM_THREADS={}\n",
        unit.unit_id,
        unit.node_index,
        unit.slot_runs.len(),
        unit.threads_per_task
    ));
    for run in &unit.slot_runs {
        let core = unit
            .affinity
            .get(&run.slot_index)
            .ok_or(TemplateError::NoAffinity(unit.unit_id))?;
        let mut body = String::from("\n");
        for id in &run.task_ids {
            let task = fill(
                &template.task_command_pattern,
                &[("duration_s", &duration_s), ("task_id", &id.to_string())],
            )?;
            body.push_str(&task);
            body.push('\n');
        }
        let command = format!("sh -c {}", single_quote(&body));
        let worker = fill(
            &template.pin_command_pattern,
            &[("core", &core.to_string()), ("command", &command)],
        )?;
        script.push_str(&worker);
        script.push_str(" &\n");
    }
    script.push_str("wait\n");
    Ok(script)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub unit_id: u64,
    pub node_index: u32,
    pub script: Option<PathBuf>,
}

/// On-disk plan description: the full plan plus one entry per unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub plan: ExecutionPlan,
    pub units: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn script_file_name(unit_id: u64) -> String {
    format!("unit_{unit_id}.sh")
}

/// Writes `manifest.json` into `dir`, plus `unit_<id>.sh` for every unit when
/// `with_scripts` is set. Script paths in the manifest are relative to `dir`.
pub fn write_plan_bundle(
    plan: &ExecutionPlan,
    template: &ScriptTemplate,
    dir: &Path,
    with_scripts: bool,
) -> Result<PlanManifest, AggregateError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(plan.units.len());
    for unit in &plan.units {
        let script = if with_scripts {
            let name = script_file_name(unit.unit_id);
            let text = render_node_script(unit, plan.config.task_time_us, template)?;
            fs::write(dir.join(&name), text)?;
            Some(PathBuf::from(name))
        } else {
            None
        };
        entries.push(ManifestEntry {
            unit_id: unit.unit_id,
            node_index: unit.node_index,
            script,
        });
    }
    let manifest = PlanManifest {
        plan: plan.clone(),
        units: entries,
    };
    let file = fs::File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer(io::BufWriter::new(file), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<PlanManifest, AggregateError> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::paper_config;

    fn cfg(nodes: u32, cores: u32, t_s: u64, job_s: u64) -> BenchmarkConfig {
        BenchmarkConfig::new(nodes, cores, t_s * MICROS_PER_SEC, job_s * MICROS_PER_SEC, "")
            .unwrap()
    }

    fn unit_with_slots(slots: u32) -> SchedulingUnit {
        SchedulingUnit {
            unit_id: 0,
            node_index: 0,
            slot_runs: (0..slots)
                .map(|s| SlotRun {
                    slot_index: s,
                    task_ids: vec![u64::from(s)],
                })
                .collect(),
            affinity: BTreeMap::new(),
            threads_per_task: 1,
        }
    }

    #[test]
    fn unit_counts_for_paper_scales() {
        let s5 = paper_config("S5-long").unwrap();
        assert_eq!(build_plan(&s5, AggregationStrategy::PerNode).unwrap().units.len(), 512);
        let s1 = paper_config("S1-rapid").unwrap();
        assert_eq!(build_plan(&s1, AggregationStrategy::PerCore).unwrap().units.len(), 2048);
    }

    #[test]
    fn flat_units_hold_one_task() {
        let plan = build_plan(&cfg(2, 2, 5, 15), AggregationStrategy::Flat).unwrap();
        assert_eq!(plan.units.len(), 12);
        assert!(plan.units.iter().all(|u| u.task_count() == 1));
        assert!(verify_partition(&plan).is_valid());
        check_plan(&plan).unwrap();
    }

    #[test]
    fn per_node_unit_shape() {
        let c = cfg(3, 4, 5, 20);
        let plan = build_plan(&c, AggregationStrategy::PerNode).unwrap();
        for unit in &plan.units {
            assert_eq!(unit.slot_runs.len(), 4);
            for run in &unit.slot_runs {
                assert_eq!(run.task_ids.len(), 4);
                let seqs: Vec<_> = run
                    .task_ids
                    .iter()
                    .map(|&id| c.task(id).unwrap().sequence_index)
                    .collect();
                assert_eq!(seqs, vec![0, 1, 2, 3]);
            }
        }
    }

    #[test]
    fn affinity_identity_and_threads() {
        let u = assign_affinity(unit_with_slots(64), 64).unwrap();
        assert!(u.affinity.iter().all(|(s, c)| s == c));
        assert_eq!(u.threads_per_task, 1);

        assert_eq!(assign_affinity(unit_with_slots(32), 64).unwrap().threads_per_task, 2);

        let one = assign_affinity(unit_with_slots(1), 4).unwrap();
        assert_eq!(one.affinity.get(&0), Some(&0));
        assert_eq!(one.threads_per_task, 4);

        let again = assign_affinity(one.clone(), 4).unwrap();
        assert_eq!(again, one);
    }

    #[test]
    fn affinity_rejects_oversubscription() {
        assert!(matches!(
            assign_affinity(unit_with_slots(5), 4),
            Err(AggregateError::Oversubscription { slots: 5, .. })
        ));
    }

    #[test]
    fn partition_fault_injection() {
        let c = cfg(2, 2, 5, 15);
        let mut dup = build_plan(&c, AggregationStrategy::PerCore).unwrap();
        let copy = dup.units[0].slot_runs[0].task_ids.clone();
        dup.units[1].slot_runs[0].task_ids.extend(copy);
        let check = verify_partition(&dup);
        assert!(!check.is_valid());
        assert_eq!(check.first_duplicate, Some(0));

        let mut missing = build_plan(&c, AggregationStrategy::PerNode).unwrap();
        missing.units.last_mut().unwrap().slot_runs.last_mut().unwrap().task_ids.pop();
        let check = verify_partition(&missing);
        assert_eq!(check.first_missing, Some(c.total_tasks() - 1));
        assert!(check.to_string().contains("11"));
    }

    #[test]
    fn check_plan_catches_misplacement() {
        let c = cfg(2, 2, 5, 10);
        let mut plan = build_plan(&c, AggregationStrategy::PerCore).unwrap();
        plan.units.swap(0, 1);
        plan.units[0].slot_runs[0].slot_index = 0;
        plan.units[1].slot_runs[0].slot_index = 1;
        assert!(matches!(check_plan(&plan), Err(PlanError::Misplaced { .. })));
    }

    #[test]
    fn script_structure() {
        let c = cfg(1, 2, 5, 10);
        let plan = build_plan(&c, AggregationStrategy::PerNode).unwrap();
        let script = render_node_script(&plan.units[0], c.task_time_us, &ScriptTemplate::default())
            .unwrap();
        assert_eq!(script.matches("taskset -c").count(), 2);
        assert_eq!(script.matches("sleep 5").count(), 4);
        assert_eq!(script.lines().filter(|l| *l == "wait").count(), 1);
        assert!(script.contains("export OMP_NUM_THREADS=1"));
        assert_eq!(
            script,
            render_node_script(&plan.units[0], c.task_time_us, &ScriptTemplate::default()).unwrap()
        );
    }

    #[test]
    fn script_pins_every_slot() {
        let c = cfg(1, 64, 60, 240);
        let plan = build_plan(&c, AggregationStrategy::PerNode).unwrap();
        let script = render_node_script(&plan.units[0], c.task_time_us, &ScriptTemplate::default())
            .unwrap();
        assert_eq!(script.matches("taskset -c").count(), 64);
        assert!(script.contains("taskset -c 63 sh -c"));
    }

    #[test]
    fn template_errors() {
        let c = cfg(1, 1, 1, 1);
        let plan = build_plan(&c, AggregationStrategy::PerNode).unwrap();
        let unresolved = ScriptTemplate {
            task_command_pattern: "run {duration_s} {bogus}".into(),
            ..ScriptTemplate::default()
        };
        assert!(matches!(
            render_node_script(&plan.units[0], 1, &unresolved),
            Err(TemplateError::Unresolved { .. })
        ));
        let missing = ScriptTemplate {
            pin_command_pattern: "taskset -c {core}".into(),
            ..ScriptTemplate::default()
        };
        assert!(matches!(
            render_node_script(&plan.units[0], 1, &missing),
            Err(TemplateError::Missing { name: "command", .. })
        ));
        let shell_braces = ScriptTemplate {
            task_command_pattern: "${RUNNER} { sleep {duration_s}; }".into(),
            ..ScriptTemplate::unpinned()
        };
        let script = render_node_script(&plan.units[0], 1_500_000, &shell_braces).unwrap();
        assert!(script.contains("${RUNNER} { sleep 1.5; }"));
    }

    #[test]
    fn seconds_formatting() {
        assert_eq!(format_seconds(5_000_000), "5");
        assert_eq!(format_seconds(200_000), "0.2");
        assert_eq!(format_seconds(1_000_001), "1.000001");
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = build_plan(&cfg(2, 2, 5, 10), AggregationStrategy::PerNode).unwrap();
        let written = write_plan_bundle(&plan, &ScriptTemplate::default(), dir.path(), true).unwrap();
        assert!(dir.path().join("unit_1.sh").exists());
        let read = read_manifest(dir.path()).unwrap();
        assert_eq!(read, written);
        assert_eq!(read.plan, plan);
    }
}
