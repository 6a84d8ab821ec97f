//! The four pipeline stages. Each stage reads its inputs from and writes its
//! artifacts under the run directory of a [`RunRecorder`].

use std::path::PathBuf;

use primwalk_core::dynamics::{learn_table, LookupTable};
use primwalk_core::planner::{follow_waypoints, mpc_run, CycleLog, MpcOutcome, RUN_LOG_HEADER};
use primwalk_core::policy::{deserialize, serialize, NeuralPolicy, Policy, PrimitiveId, PrimitiveLibrary, SinusoidalPolicy};
use primwalk_core::rewards::{hl_reward_sim, HighLevelGoal};
use primwalk_core::sac::{train_primitive, IterationStats, ReplayBuffer, CURVE_HEADER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ExperimentConfig, PolicyChoice, PrimitiveTraining, SeedStream};
use crate::error::{HarnessError, Result};
use crate::output::{csv_bytes, num, read, RunRecorder};
use crate::svg::{trajectory_plot, Series};

pub const TABLE_FILE: &str = "table/table.json";
pub const TABLE_CYCLES_FILE: &str = "table/cycles.csv";
pub const VALIDATION_FILE: &str = "table/validation.csv";
pub const GOAL_SUMMARY_FILE: &str = "goals/summary.csv";
pub const GOAL_PLOT_FILE: &str = "goals/trajectories.svg";
pub const WAYPOINT_SUMMARY_FILE: &str = "waypoints/summary.csv";
pub const WAYPOINT_PLOT_FILE: &str = "waypoints/route.svg";

pub const TABLE_CYCLES_HEADER: [&str; 5] = ["cycle", "primitive", "dx", "dy", "dtheta"];
pub const VALIDATION_HEADER: [&str; 9] = [
    "primitive",
    "component",
    "table_count",
    "table_mean",
    "table_se",
    "heldout_count",
    "heldout_mean",
    "deviation_se",
    "within_3se",
];
pub const TRAJECTORY_HEADER: [&str; 6] = ["step", "x", "y", "theta", "stance_count", "reward"];
pub const SUMMARY_HEADER: [&str; 7] = ["index", "goal_x", "goal_y", "success", "cycles", "final_distance", "recovery_cycles"];

/// Run index of the waypoint route, kept apart from the goal indices.
const WAYPOINT_RUN: u64 = 1000;
const INIT_SALT: u64 = 0x1A17_5EED;
const BUFFER_SALT: u64 = 0xB0FF_E125;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Forward,
    Turn,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Forward => "forward",
            Target::Turn => "turn",
        }
    }

    fn stream(self) -> SeedStream {
        match self {
            Target::Forward => SeedStream::ForwardTraining,
            Target::Turn => SeedStream::TurnTraining,
        }
    }

    fn settings(self, cfg: &ExperimentConfig) -> &PrimitiveTraining {
        match self {
            Target::Forward => &cfg.training.forward,
            Target::Turn => &cfg.training.turn,
        }
    }
}

pub fn policy_file(target: Target) -> PathBuf {
    PathBuf::from(format!("policies/{}.policy", target.name()))
}

pub fn buffer_file(target: Target) -> PathBuf {
    PathBuf::from(format!("buffers/{}.replay", target.name()))
}

pub fn curve_file(target: Target) -> PathBuf {
    PathBuf::from(format!("curves/{}.csv", target.name()))
}

pub fn goal_log_file(i: usize) -> PathBuf {
    PathBuf::from(format!("goals/goal_{i}_log.csv"))
}

pub fn goal_trajectory_file(i: usize) -> PathBuf {
    PathBuf::from(format!("goals/goal_{i}_trajectory.csv"))
}

pub fn waypoint_log_file(i: usize) -> PathBuf {
    PathBuf::from(format!("waypoints/waypoint_{i}_log.csv"))
}

pub fn waypoint_trajectory_file(i: usize) -> PathBuf {
    PathBuf::from(format!("waypoints/waypoint_{i}_trajectory.csv"))
}

/// Seeds used by the pipeline, for the run manifest.
pub fn seed_list(cfg: &ExperimentConfig) -> Vec<(String, u64)> {
    let mut seeds = vec![("master".to_string(), cfg.seed)];
    for (name, stream) in [
        ("sim_noise", SeedStream::SimNoise),
        ("forward_training", SeedStream::ForwardTraining),
        ("turn_training", SeedStream::TurnTraining),
        ("table", SeedStream::Table),
        ("validation", SeedStream::Validation),
        ("planner", SeedStream::Planner),
    ] {
        seeds.push((name.to_string(), derive_seed(cfg.seed, stream)));
    }
    seeds
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub target: Target,
    pub curve: Vec<IterationStats>,
    /// Transitions in the buffer before the first iteration.
    pub initial_buffer: usize,
    pub final_buffer: usize,
}

/// Trains one primitive and writes its policy, learning curve and (for the
/// forward primitive) replay buffer.
pub fn train(
    cfg: &ExperimentConfig,
    target: Target,
    rec: &mut RunRecorder,
    on_iteration: impl FnMut(&IterationStats),
) -> Result<TrainReport> {
    let settings = target.settings(cfg);
    let reward = settings.low_level_reward()?;
    let seed = derive_seed(cfg.seed, target.stream());
    let sim = cfg.simulator_for(target.stream(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
    let limits = sim.model.limit_table();
    let policy = match settings.policy {
        PolicyChoice::Sinusoidal => Policy::Sinusoidal(SinusoidalPolicy::random(
            limits,
            &sim.model.neutral_stance(),
            settings.sac.init_log_std,
            &mut rng,
        )?),
        PolicyChoice::Neural => Policy::Neural(NeuralPolicy::random(limits, &mut rng)?),
    };
    let buffer = if settings.reuse_buffer {
        let path = rec.root().join(buffer_file(Target::Forward));
        if !path.exists() {
            return Err(HarnessError::Missing(format!(
                "replay buffer {} not found; train the forward primitive first",
                path.display()
            )));
        }
        Some(ReplayBuffer::from_bytes(
            &read(&path)?,
            settings.sac.buffer_capacity,
            seed ^ BUFFER_SALT,
        )?)
    } else {
        None
    };
    let initial_buffer = buffer.as_ref().map_or(0, ReplayBuffer::len);

    let out = train_primitive(
        &sim,
        policy,
        reward,
        &settings.sac,
        settings.iterations,
        seed,
        buffer,
        on_iteration,
    )?;
    rec.write(curve_file(target), &curve_csv(&out.curve)?)?;
    rec.write(policy_file(target), &serialize(&out.policy))?;
    if target == Target::Forward {
        rec.write(buffer_file(target), &out.buffer.to_bytes())?;
    }
    if let Some(e) = out.error {
        return Err(HarnessError::Run(format!(
            "{} training stopped after {} iterations: {e}",
            target.name(),
            out.curve.len()
        )));
    }
    Ok(TrainReport {
        target,
        curve: out.curve,
        initial_buffer,
        final_buffer: out.buffer.len(),
    })
}

pub fn curve_csv(curve: &[IterationStats]) -> Result<Vec<u8>> {
    csv_bytes(
        &CURVE_HEADER,
        curve.iter().map(|s| {
            vec![
                s.iteration.to_string(),
                s.samples.to_string(),
                num(s.mean_reward),
                num(s.kl),
                num(s.critic_loss),
                num(s.mean_forward),
                num(s.mean_turn),
            ]
        }),
    )
}

/// Loads both trained policies and builds the four-primitive library.
pub fn load_library(rec: &RunRecorder) -> Result<PrimitiveLibrary> {
    let load = |target: Target| -> Result<Policy> {
        let path = rec.root().join(policy_file(target));
        if !path.exists() {
            return Err(HarnessError::Missing(format!(
                "{} policy {} not found; train it first",
                target.name(),
                path.display()
            )));
        }
        Ok(deserialize(&read(&path)?)?)
    };
    Ok(PrimitiveLibrary::new(load(Target::Forward)?, load(Target::Turn)?)?)
}

pub fn load_table(rec: &RunRecorder) -> Result<LookupTable> {
    let path = rec.root().join(TABLE_FILE);
    if !path.exists() {
        return Err(HarnessError::Missing(format!(
            "lookup table {} not found; learn the dynamics first",
            path.display()
        )));
    }
    let text = String::from_utf8(read(&path)?)
        .map_err(|_| HarnessError::Run(format!("{}: not UTF-8", path.display())))?;
    Ok(LookupTable::from_json(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub primitive: PrimitiveId,
    pub component: &'static str,
    pub table_count: u64,
    pub table_mean: f64,
    pub table_se: f64,
    pub heldout_count: u64,
    pub heldout_mean: f64,
    /// |table_mean - heldout_mean| in units of the table's standard error.
    pub deviation_se: f64,
    pub within: bool,
}

#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub table: LookupTable,
    pub heldout: LookupTable,
    /// One row per learned (not pinned) primitive and component.
    pub validation: Vec<ValidationRow>,
}

/// Learns the lookup table and checks it against a longer held-out run.
pub fn learn_dynamics(cfg: &ExperimentConfig, rec: &mut RunRecorder) -> Result<DynamicsReport> {
    let library = load_library(rec)?;
    let sim = cfg.simulator_for(SeedStream::Table, 0)?;
    let learned = learn_table(
        &sim,
        &library,
        sim.reset(Default::default()),
        &cfg.table_learning(SeedStream::Table, cfg.dynamics.cycles),
    );
    rec.write(TABLE_FILE, learned.table.to_json().as_bytes())?;
    rec.write(
        TABLE_CYCLES_FILE,
        &csv_bytes(
            &TABLE_CYCLES_HEADER,
            learned.cycles.iter().enumerate().map(|(i, (id, d))| {
                let (dx, dy) = d.to_cartesian();
                vec![i.to_string(), id.name().to_string(), num(dx), num(dy), num(d.beta)]
            }),
        )?,
    )?;
    if let Some(e) = learned.error {
        return Err(HarnessError::Run(format!(
            "table learning stopped after {} cycles: {e}",
            learned.cycles.len()
        )));
    }

    let vsim = cfg.simulator_for(SeedStream::Validation, 0)?;
    let heldout = learn_table(
        &vsim,
        &library,
        vsim.reset(Default::default()),
        &cfg.table_learning(SeedStream::Validation, cfg.dynamics.validation_cycles),
    );
    if let Some(e) = heldout.error {
        return Err(HarnessError::Run(format!("held-out run failed: {e}")));
    }
    let validation = compare_tables(&learned.table, &heldout.table);
    rec.write(
        VALIDATION_FILE,
        &csv_bytes(
            &VALIDATION_HEADER,
            validation.iter().map(|r| {
                vec![
                    r.primitive.name().to_string(),
                    r.component.to_string(),
                    r.table_count.to_string(),
                    num(r.table_mean),
                    num(r.table_se),
                    r.heldout_count.to_string(),
                    num(r.heldout_mean),
                    num(r.deviation_se),
                    r.within.to_string(),
                ]
            }),
        )?,
    )?;
    Ok(DynamicsReport {
        table: learned.table,
        heldout: heldout.table,
        validation,
    })
}

pub fn compare_tables(table: &LookupTable, heldout: &LookupTable) -> Vec<ValidationRow> {
    let mut rows = Vec::new();
    for id in PrimitiveId::ALL {
        let t = table.stats(id);
        if t.pinned {
            continue;
        }
        let h = heldout.stats(id);
        let se = t.standard_error();
        for (k, component) in ["dx", "dy", "dtheta"].into_iter().enumerate() {
            let gap = (t.mean[k] - h.mean[k]).abs();
            let deviation_se = if se[k] > 0.0 {
                gap / se[k]
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            rows.push(ValidationRow {
                primitive: id,
                component,
                table_count: t.count,
                table_mean: t.mean[k],
                table_se: se[k],
                heldout_count: h.count,
                heldout_mean: h.mean[k],
                deviation_se,
                within: t.count > 0 && h.count > 0 && deviation_se <= 3.0,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub index: usize,
    pub goal: [f64; 2],
    pub success: bool,
    pub cycles: usize,
    pub final_distance: f64,
    pub recovery_cycles: usize,
}

impl RunSummary {
    fn new(index: usize, out: &MpcOutcome) -> Self {
        Self {
            index,
            goal: out.goal.position,
            success: out.success,
            cycles: out.cycles,
            final_distance: out.final_distance,
            recovery_cycles: out.log.iter().filter(|c| c.recovery).count(),
        }
    }
}

pub fn run_log_csv(log: &[CycleLog]) -> Result<Vec<u8>> {
    csv_bytes(
        &RUN_LOG_HEADER,
        log.iter().map(|c| {
            vec![
                c.cycle.to_string(),
                c.primitive.name().to_string(),
                num(c.planned.x),
                num(c.planned.y),
                num(c.planned.theta),
                num(c.realized.x),
                num(c.realized.y),
                num(c.realized.theta),
                num(c.distance),
                num(c.score),
                c.dropout.to_string(),
                c.recovery.to_string(),
            ]
        }),
    )
}

pub fn trajectory_csv(out: &MpcOutcome) -> Result<Vec<u8>> {
    csv_bytes(
        &TRAJECTORY_HEADER,
        out.trajectory.iter().enumerate().map(|(k, p)| {
            vec![
                k.to_string(),
                num(p.pose.x),
                num(p.pose.y),
                num(p.pose.theta),
                p.stance_count.to_string(),
                num(hl_reward_sim(&p.pose, &out.goal)),
            ]
        }),
    )
}

fn summary_csv(rows: &[RunSummary]) -> Result<Vec<u8>> {
    csv_bytes(
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.index.to_string(),
                num(r.goal[0]),
                num(r.goal[1]),
                r.success.to_string(),
                r.cycles.to_string(),
                num(r.final_distance),
                r.recovery_cycles.to_string(),
            ]
        }),
    )
}

fn plot(title: &str, label: &str, outcomes: &[MpcOutcome], goals: &[[f64; 2]], tolerance: f64) -> String {
    let points: Vec<Vec<[f64; 2]>> = outcomes
        .iter()
        .map(|o| o.trajectory.iter().map(|p| [p.pose.x, p.pose.y]).collect())
        .collect();
    let series: Vec<Series> = points
        .iter()
        .enumerate()
        .map(|(i, pts)| Series {
            label: format!("{label} {} ({}, {})", i + 1, outcomes[i].goal.position[0], outcomes[i].goal.position[1]),
            points: pts,
        })
        .collect();
    trajectory_plot(title, &series, goals, tolerance, [0.0, 0.0])
}

/// Drives the robot from the origin to each configured goal independently.
/// Files of finished goals are kept if a later goal fails.
pub fn run_goals(
    cfg: &ExperimentConfig,
    rec: &mut RunRecorder,
    mut on_goal: impl FnMut(&RunSummary),
) -> Result<Vec<RunSummary>> {
    if cfg.planner.goals.is_empty() {
        return Err(HarnessError::Config("planner.goals is empty".into()));
    }
    let library = load_library(rec)?;
    let table = load_table(rec)?;
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    let mut failure = None;
    for (i, g) in cfg.planner.goals.iter().enumerate() {
        let sim = cfg.simulator_for(SeedStream::Planner, i as u64)?;
        let goal = HighLevelGoal::at(g[0], g[1]);
        let out = match mpc_run(&sim, sim.reset(Default::default()), &goal, &table, &library, &cfg.mpc_config(i as u64)) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(HarnessError::from(e));
                break;
            }
        };
        rec.write(goal_log_file(i), &run_log_csv(&out.log)?)?;
        rec.write(goal_trajectory_file(i), &trajectory_csv(&out)?)?;
        let summary = RunSummary::new(i, &out);
        on_goal(&summary);
        summaries.push(summary);
        let error = out.error.clone();
        outcomes.push(out);
        if let Some(e) = error {
            failure = Some(HarnessError::Run(format!("goal {i}: simulator failed: {e}")));
            break;
        }
    }
    rec.write(GOAL_SUMMARY_FILE, &summary_csv(&summaries)?)?;
    let svg = plot("Goal reaching", "goal", &outcomes, &cfg.planner.goals, cfg.planner.goal_tolerance);
    rec.write(GOAL_PLOT_FILE, svg.as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summaries),
    }
}

/// Visits the configured waypoints in order without resetting the robot.
pub fn run_waypoints(
    cfg: &ExperimentConfig,
    rec: &mut RunRecorder,
    mut on_waypoint: impl FnMut(&RunSummary),
) -> Result<Vec<RunSummary>> {
    if cfg.planner.waypoints.is_empty() {
        return Err(HarnessError::Config("planner.waypoints is empty".into()));
    }
    let library = load_library(rec)?;
    let table = load_table(rec)?;
    let sim = cfg.simulator_for(SeedStream::Planner, WAYPOINT_RUN)?;
    let goals: Vec<HighLevelGoal> = cfg.planner.waypoints.iter().map(|w| HighLevelGoal::at(w[0], w[1])).collect();
    let outcomes = follow_waypoints(
        &sim,
        sim.reset(Default::default()),
        &goals,
        &table,
        &library,
        &cfg.mpc_config(WAYPOINT_RUN),
    )?;
    let mut summaries = Vec::new();
    for (i, out) in outcomes.iter().enumerate() {
        rec.write(waypoint_log_file(i), &run_log_csv(&out.log)?)?;
        rec.write(waypoint_trajectory_file(i), &trajectory_csv(out)?)?;
        let summary = RunSummary::new(i, out);
        on_waypoint(&summary);
        summaries.push(summary);
    }
    rec.write(WAYPOINT_SUMMARY_FILE, &summary_csv(&summaries)?)?;
    let svg = plot(
        "Waypoint route",
        "leg",
        &outcomes,
        &cfg.planner.waypoints,
        cfg.planner.goal_tolerance,
    );
    rec.write(WAYPOINT_PLOT_FILE, svg.as_bytes())?;
    if let Some((i, e)) = outcomes.iter().enumerate().find_map(|(i, o)| o.error.as_ref().map(|e| (i, e))) {
        return Err(HarnessError::Run(format!("waypoint {i}: simulator failed: {e}")));
    }
    Ok(summaries)
}
