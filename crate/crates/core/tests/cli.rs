use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nodepack::aggregator::{build_plan, read_manifest};
use nodepack::metrics::{read_event_log_csv, write_event_log_csv};
use nodepack::model::{paper_config, AggregationStrategy};
use nodepack::sim::{simulate, SchedulerModel};

fn nodepack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodepack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn count_scripts(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "sh"))
        .count()
}

#[test]
fn plan_per_node_preset_writes_one_script_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nodepack(&["plan", "--preset", "S1-rapid", "--strategy", "per-node", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(count_scripts(dir.path()), 32);
    let script = fs::read_to_string(dir.path().join("unit_0.sh")).unwrap();
    assert_eq!(script.matches("taskset -c").count(), 64);
    assert_eq!(script.matches("sleep 1 #").count(), 64 * 240);
}

#[test]
fn plan_flat_toy_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nodepack(&[
        "plan", "--nodes", "2", "--cores", "2", "--task-time", "5", "--job-time", "20", "--strategy", "flat", "--out", out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.units.len(), 16);
    assert_eq!(count_scripts(dir.path()), 0);
}

#[test]
fn plan_rejects_indivisible_job_time() {
    let dir = tempfile::tempdir().unwrap();
    let o = nodepack(&["plan", "--nodes", "1", "--task-time", "7", "--job-time", "240", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--task-time"), "{}", stderr(&o));
}

#[test]
fn manifest_round_trip_simulates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["--nodes", "3", "--cores", "4", "--task-time", "2", "--job-time", "8", "--strategy", "per-core"];
    let o = nodepack(&[&["plan"][..], &args, &["--out", out]].concat());
    assert!(o.status.success());

    let manifest = read_manifest(dir.path()).unwrap();
    let config = nodepack::model::BenchmarkConfig::new(3, 4, 2_000_000, 8_000_000, "").unwrap();
    assert_eq!(manifest.plan, build_plan(&config, AggregationStrategy::PerCore).unwrap());

    let log_a = dir.path().join("a.csv");
    let log_b = dir.path().join("b.csv");
    let a = nodepack(&["simulate", "--plan", out, "--out", log_a.to_str().unwrap()]);
    let b = nodepack(&[&["simulate"][..], &args, &["--out", log_b.to_str().unwrap()]].concat());
    assert!(a.status.success() && b.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(fs::read(&log_a).unwrap(), fs::read(&log_b).unwrap());

    let expected = simulate(&manifest.plan, &SchedulerModel::default()).unwrap();
    let mut csv = Vec::new();
    write_event_log_csv(&expected.log, &mut csv).unwrap();
    assert_eq!(fs::read(&log_a).unwrap(), csv);
    assert!(dir.path().join("a.sidecar.json").exists());
}

#[test]
fn simulate_zero_costs_prints_zero() {
    for strategy in ["flat", "per-core", "per-node"] {
        let o = nodepack(&[
            "simulate", "--preset", "S1-medium", "--strategy", strategy, "--dispatch-cost", "0", "--cleanup-cost", "0",
        ]);
        assert!(o.status.success());
        assert_eq!(stdout(&o), "0\n", "{strategy}");
    }
}

#[test]
fn simulate_s5_long_per_core_near_published_median() {
    let o = nodepack(&["simulate", "--preset", "S5-long", "--strategy", "per-core"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let overhead: f64 = stdout(&o).trim().parse().unwrap();
    let published = (2768.0 - 240.0) / 240.0;
    assert!((overhead - published).abs() / published <= 0.25, "{overhead}");
}

#[test]
fn run_writes_a_log_that_analyze_reads() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.csv");
    let o = nodepack(&[
        "run", "--nodes", "1", "--cores", "2", "--task-time", "0.05", "--job-time", "0.2", "--oversubscribe", "--out",
        log.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("records 8 "));

    let reports = dir.path().join("reports");
    let a = nodepack(&["analyze", log.to_str().unwrap(), "--out", reports.to_str().unwrap()]);
    assert!(a.status.success(), "{}", stderr(&a));
    let text = stdout(&a);
    assert!(text.contains("records 8") && text.contains("processors 2"), "{text}");
    for f in ["utilization.csv", "utilization.svg", "report.json"] {
        assert!(reports.join(f).exists(), "{f}");
    }
}

#[test]
fn run_refuses_oversubscription() {
    let o = Command::new(env!("CARGO_BIN_EXE_nodepack"))
        .args(["run", "--nodes", "1", "--cores", "2", "--task-time", "0.01", "--job-time", "0.01"])
        .env("NODEPACK_MAX_SLOTS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn analyze_rejects_bad_logs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(nodepack(&["analyze", empty.to_str().unwrap()]).status.code(), Some(2));

    let header_only = dir.path().join("header.csv");
    fs::write(&header_only, "unit_id,task_id,node,slot,start_us,end_us\n").unwrap();
    assert_eq!(nodepack(&["analyze", header_only.to_str().unwrap()]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "unit_id,task_id,node,slot,start_us,end_us\n0,0,0,0,0,5\n0,1,0,1,zz,5\n").unwrap();
    let o = nodepack(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn analyze_simulated_log_infers_job_time() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sim.csv");
    let o = nodepack(&[
        "simulate", "--preset", "S1-long", "--strategy", "per-node", "--dispatch-cost", "0", "--out",
        log.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let parsed = read_event_log_csv(fs::File::open(&log).unwrap()).unwrap();
    assert_eq!(parsed.len() as u64, paper_config("S1-long").unwrap().total_tasks());
    let a = nodepack(&["analyze", log.to_str().unwrap()]);
    let text = stdout(&a);
    assert!(text.contains("job_time_s 240\n") && text.contains("normalized_overhead 0\n"), "{text}");
    assert!(text.contains("full_utilization_at_s 0\n"), "{text}");
}

#[test]
fn analyze_paper_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nodepack(&["analyze", "--paper", "--ratios", "--out", out]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("per-node,32,1,242,0.008333,false"), "{text}");
    assert!(text.contains("basis=best pairing=\"t=60s best\" value=92.462"));
    for f in ["overhead.csv", "overhead.json", "overhead.svg", "ratios.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_writes_results_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nodepack(&["sweep", "--nodes", "2,4", "--cores", "2", "--task-times", "1,5", "--job-time", "10",
        "--dispatch-cost", "0.05", "--repetitions", "2", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    // 2 nodes x 2 times x 3 strategies, two runs plus a median each, plus header
    assert_eq!(csv.lines().count(), 12 * 3 + 1);
    assert!(dir.path().join("overhead.svg").exists());
    assert_eq!(nodepack(&["sweep", "--strategies", ","]).status.code(), Some(2));
}
