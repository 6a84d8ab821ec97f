use primwalk_core::dynamics::LookupTable;
use primwalk_core::geometry::{DeltaPose, Pose2};
use primwalk_core::planner::{follow_waypoints, mpc_run, plan, MpcConfig};
use primwalk_core::policy::{Policy, PrimitiveId, PrimitiveLibrary, SinusoidalPolicy};
use primwalk_core::rewards::HighLevelGoal;
use primwalk_core::robot::RobotModel;
use primwalk_core::sim::{SimConfig, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(rng: &mut ChaCha8Rng) -> LookupTable {
    let mut t = LookupTable::new();
    for id in PrimitiveId::ALL {
        let d = DeltaPose::new(
            rng.random_range(0.0..0.5),
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.5..0.5),
        )
        .unwrap();
        t.update(id, &d);
    }
    t
}

/// Recursive enumeration with explicit pose composition by hand.
fn brute_force(pose: Pose2, goal: [f64; 2], deltas: &[DeltaPose; 4], depth: usize) -> (f64, Vec<usize>, usize) {
    fn go(
        p: (f64, f64, f64),
        goal: [f64; 2],
        deltas: &[DeltaPose; 4],
        left: usize,
        prefix: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>, usize),
    ) {
        if left == 0 {
            best.2 += 1;
            let score = -((goal[0] - p.0).powi(2) + (goal[1] - p.1).powi(2)).sqrt();
            if score > best.0 {
                best.0 = score;
                best.1 = prefix.clone();
            }
            return;
        }
        for (i, d) in deltas.iter().enumerate() {
            let heading = p.2 + d.alpha;
            let next = (p.0 + d.r * heading.cos(), p.1 + d.r * heading.sin(), p.2 + d.beta);
            prefix.push(i);
            go(next, goal, deltas, left - 1, prefix, best);
            prefix.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new(), 0);
    go((pose.x, pose.y, pose.theta), goal, deltas, depth, &mut Vec::new(), &mut best);
    best
}

#[test]
fn plan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let config = MpcConfig::default();
    for _ in 0..100 {
        let table = random_table(&mut rng);
        let deltas = PrimitiveId::ALL.map(|id| table.predict(id).unwrap());
        let pose = Pose2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
            .unwrap();
        let goal = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
        let p = plan(pose, &HighLevelGoal::at(goal[0], goal[1]), &table, &config).unwrap();
        let (score, seq, count) = brute_force(pose, goal, &deltas, 3);
        assert_eq!(p.evaluated, 64);
        assert_eq!(count, 64);
        let ids: Vec<usize> = p.sequence.iter().map(|id| id.index()).collect();
        assert_eq!(ids, seq);
        assert!((p.score - score).abs() < 1e-12);
    }
}

#[test]
fn ties_break_toward_lower_index() {
    let mut t = LookupTable::new();
    for id in PrimitiveId::ALL {
        t.update(id, &DeltaPose::ZERO);
    }
    let p = plan(Pose2::origin(), &HighLevelGoal::at(2.0, 0.0), &t, &MpcConfig::default()).unwrap();
    assert_eq!(p.sequence, vec![PrimitiveId::Forward; 3]);
}

fn world() -> (Simulator, PrimitiveLibrary) {
    let sim = Simulator::new(SimConfig::default(), RobotModel::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::Sinusoidal(
        SinusoidalPolicy::random(sim.model.limit_table(), &sim.model.neutral_stance(), -2.0, &mut rng).unwrap(),
    );
    let lib = PrimitiveLibrary::new(policy.clone(), policy).unwrap();
    (sim, lib)
}

fn pinned_table() -> LookupTable {
    let mut t = LookupTable::new();
    for id in PrimitiveId::ALL {
        t.pin(id, &DeltaPose::ZERO);
    }
    t
}

#[test]
fn goal_at_start_takes_no_cycles() {
    let (sim, lib) = world();
    let out = mpc_run(
        &sim,
        sim.reset(Pose2::origin()),
        &HighLevelGoal::at(0.1, 0.0),
        &pinned_table(),
        &lib,
        &MpcConfig::default(),
    )
    .unwrap();
    assert!(out.success);
    assert_eq!(out.cycles, 0);
    assert_eq!(out.trajectory.len(), 1);
}

#[test]
fn duplicate_waypoint_succeeds_immediately() {
    let (sim, lib) = world();
    let goals = [HighLevelGoal::at(0.0, 0.0), HighLevelGoal::at(0.0, 0.0)];
    let out = follow_waypoints(&sim, sim.reset(Pose2::origin()), &goals, &pinned_table(), &lib, &MpcConfig::default())
        .unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|o| o.success && o.cycles == 0));
}

#[test]
fn full_dropout_forces_stand() {
    let (sim, lib) = world();
    let config = MpcConfig {
        dropout_prob: 1.0,
        max_cycles: 3,
        ..Default::default()
    };
    let out = mpc_run(
        &sim,
        sim.reset(Pose2::origin()),
        &HighLevelGoal::at(3.0, 0.0),
        &pinned_table(),
        &lib,
        &config,
    )
    .unwrap();
    assert!(!out.success);
    assert_eq!(out.cycles, 3);
    assert!(out.log.iter().all(|c| c.dropout && c.primitive == PrimitiveId::Stand));
}

#[test]
fn incomplete_table_is_rejected() {
    let (sim, lib) = world();
    let r = mpc_run(
        &sim,
        sim.reset(Pose2::origin()),
        &HighLevelGoal::at(3.0, 0.0),
        &LookupTable::new(),
        &lib,
        &MpcConfig::default(),
    );
    assert!(r.is_err());
}

/// The table promises that standing moves 1 m toward the goal; the robot
/// does not move, so only the progress monitor can notice.
fn lying_table() -> LookupTable {
    let mut t = pinned_table();
    t.pin(PrimitiveId::Stand, &DeltaPose::new(1.0, 0.0, 0.0).unwrap());
    t
}

#[test]
fn progress_monitor_switches_objective() {
    let (sim, lib) = world();
    let sim = Simulator::new(sim.config.clone().noiseless(), sim.model.clone()).unwrap();
    let run = |window| {
        let config = MpcConfig {
            max_cycles: 6,
            stall_recovery: false,
            progress_window: window,
            ..Default::default()
        };
        mpc_run(&sim, sim.reset(Pose2::origin()), &HighLevelGoal::at(5.0, 0.0), &lying_table(), &lib, &config).unwrap()
    };
    let off = run(0);
    assert!(off.log.iter().all(|c| !c.recovery && c.primitive == PrimitiveId::Stand));
    let on = run(3);
    let flags: Vec<bool> = on.log.iter().map(|c| c.recovery).collect();
    assert_eq!(flags, [false, false, false, true, true, true]);
}
