use std::path::Path;
use std::process::Command;

use primwalk::config::ExperimentConfig;
use primwalk::output::{csv_header, read, sha256_hex, RunManifest, RunRecorder};
use primwalk::pipeline::{self, Target};
use primwalk::HarnessError;
use primwalk_core::planner::RUN_LOG_HEADER;
use primwalk_core::sac::CURVE_HEADER;

/// A few iterations and cycles: exercises every stage in seconds.
fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 7;
    for t in [&mut cfg.training.forward, &mut cfg.training.turn] {
        t.iterations = 2;
        t.sac.cycles_per_iteration = 2;
        t.sac.grad_steps_per_cycle = 2;
    }
    cfg.dynamics.cycles = 16;
    cfg.dynamics.validation_cycles = 16;
    cfg.planner.max_cycles = 4;
    cfg.planner.goals = vec![[1.0, 0.0], [0.0, 1.0]];
    cfg.planner.waypoints = vec![[0.5, 0.0], [0.5, 0.5]];
    cfg
}

fn run_all(cfg: &ExperimentConfig, root: &Path) -> Vec<pipeline::TrainReport> {
    let mut rec = RunRecorder::new(root);
    let fwd = pipeline::train(cfg, Target::Forward, &mut rec, |_| {}).unwrap();
    let turn = pipeline::train(cfg, Target::Turn, &mut rec, |_| {}).unwrap();
    pipeline::learn_dynamics(cfg, &mut rec).unwrap();
    pipeline::run_goals(cfg, &mut rec, |_| {}).unwrap();
    pipeline::run_waypoints(cfg, &mut rec, |_| {}).unwrap();
    rec.finish("all", cfg.hash(), pipeline::seed_list(cfg), 0.0).unwrap();
    vec![fwd, turn]
}

fn svg_paths(path: &Path) -> usize {
    let text = String::from_utf8(read(path).unwrap()).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc.descendants()
        .filter(|n| n.has_tag_name("path") && n.attribute("class") == Some("trajectory"))
        .count()
}

#[test]
fn full_pipeline_writes_documented_artifacts() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let reports = run_all(&cfg, root);

    // turn training starts from the whole relabelled forward buffer
    let forward_samples = reports[0].curve.last().unwrap().samples as usize;
    assert_eq!(forward_samples, 2 * 2 * 100);
    assert_eq!(reports[1].initial_buffer, forward_samples);
    assert_eq!(reports[1].final_buffer, 2 * forward_samples);

    assert_eq!(csv_header(&root.join("curves/forward.csv")).unwrap(), CURVE_HEADER);
    assert_eq!(csv_header(&root.join("table/cycles.csv")).unwrap(), pipeline::TABLE_CYCLES_HEADER);
    assert_eq!(csv_header(&root.join("table/validation.csv")).unwrap(), pipeline::VALIDATION_HEADER);
    assert_eq!(csv_header(&root.join("goals/goal_1_log.csv")).unwrap(), RUN_LOG_HEADER);
    assert_eq!(
        csv_header(&root.join("goals/goal_0_trajectory.csv")).unwrap(),
        pipeline::TRAJECTORY_HEADER
    );
    assert_eq!(
        csv_header(&root.join("waypoints/waypoint_1_trajectory.csv")).unwrap(),
        pipeline::TRAJECTORY_HEADER
    );
    assert_eq!(svg_paths(&root.join(pipeline::GOAL_PLOT_FILE)), 2);
    assert_eq!(svg_paths(&root.join(pipeline::WAYPOINT_PLOT_FILE)), 2);

    // trajectory rows: one per simulator step plus the start
    let mut r = csv::Reader::from_path(root.join("goals/goal_0_trajectory.csv")).unwrap();
    let rows = r.records().count();
    let mut log = csv::Reader::from_path(root.join("goals/goal_0_log.csv")).unwrap();
    assert_eq!(rows, 1 + 100 * log.records().count());

    let manifest: RunManifest =
        serde_json::from_slice(&read(&root.join("manifest-all.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_sha256, cfg.hash());
    assert!(manifest.artifacts.len() > 10);
    for a in &manifest.artifacts {
        assert_eq!(sha256_hex(&read(&root.join(&a.path)).unwrap()), a.sha256, "{}", a.path.display());
    }
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&cfg, a.path());
    run_all(&cfg, b.path());
    for f in [
        "curves/forward.csv",
        "curves/turn.csv",
        "policies/forward.policy",
        "policies/turn.policy",
        "table/table.json",
        "table/cycles.csv",
        "goals/goal_0_trajectory.csv",
        "waypoints/summary.csv",
    ] {
        assert_eq!(read(&a.path().join(f)).unwrap(), read(&b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stages_report_missing_inputs() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let mut rec = RunRecorder::new(dir.path());
    let e = pipeline::train(&cfg, Target::Turn, &mut rec, |_| {}).unwrap_err();
    assert!(matches!(e, HarnessError::Missing(_)));
    let e = pipeline::learn_dynamics(&cfg, &mut rec).unwrap_err();
    assert!(matches!(&e, HarnessError::Missing(m) if m.contains("forward")));
    pipeline::train(&cfg, Target::Forward, &mut rec, |_| {}).unwrap();
    let e = pipeline::learn_dynamics(&cfg, &mut rec).unwrap_err();
    assert!(matches!(&e, HarnessError::Missing(m) if m.contains("turn")));
    let e = pipeline::run_goals(&cfg, &mut rec, |_| {}).unwrap_err();
    assert!(matches!(e, HarnessError::Missing(_)));
}

#[test]
fn damaged_table_is_an_error() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    run_all(&cfg, dir.path());
    std::fs::write(dir.path().join(pipeline::TABLE_FILE), "{\"entries\": 3}").unwrap();
    let mut rec = RunRecorder::new(dir.path());
    assert!(pipeline::run_goals(&cfg, &mut rec, |_| {}).is_err());
}

fn primwalk(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_primwalk"))
        .args(args)
        .env_remove("PRIMWALK_OUT")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("empty-waypoints.toml");
    std::fs::write(&cfg, "[planner]\nwaypoints = []\n").unwrap();
    let o = primwalk(&["run-waypoints", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sim]\nslip = 2.0\n").unwrap();
    assert_eq!(primwalk(&["learn-dynamics", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(primwalk(&["train", "sideways"]).status.code(), Some(2));

    let o = primwalk(&["learn-dynamics", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("forward policy"));
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (from_env, from_flag) = (dir.path().join("env"), dir.path().join("flag"));
    let run = |extra: &[&str]| {
        let mut args = vec!["learn-dynamics"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_primwalk"))
            .args(&args)
            .env("PRIMWALK_OUT", &from_env)
            .output()
            .unwrap()
    };
    // the failing stage still leaves its manifest in the chosen directory
    run(&[]);
    assert!(from_env.join("manifest-learn-dynamics.json").exists());
    run(&["--out", from_flag.to_str().unwrap()]);
    assert!(from_flag.join("manifest-learn-dynamics.json").exists());
}
