use primwalk_core::dynamics::{learn_table, LookupTable, TableLearning};
use primwalk_core::geometry::{DeltaPose, Pose2};
use primwalk_core::policy::{ActionMode, Policy, PrimitiveId, PrimitiveLibrary, SinusoidalPolicy};
use primwalk_core::robot::RobotModel;
use primwalk_core::sim::{SimConfig, Simulator};
use primwalk_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn library(sim: &Simulator) -> PrimitiveLibrary {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random = || {
        Policy::Sinusoidal(
            SinusoidalPolicy::random(sim.model.limit_table(), &sim.model.neutral_stance(), -2.0, &mut rng).unwrap(),
        )
    };
    PrimitiveLibrary::new(random(), random()).unwrap()
}

#[test]
fn table_counts_every_cycle() {
    let sim = Simulator::new(SimConfig::default(), RobotModel::default()).unwrap();
    let settings = TableLearning {
        cycles: 40,
        seed: 2,
        ..Default::default()
    };
    let out = learn_table(&sim, &library(&sim), sim.reset(Pose2::origin()), &settings);
    assert!(out.error.is_none());
    assert_eq!(out.cycles.len(), 40);
    for id in [PrimitiveId::Forward, PrimitiveId::TurnLeft, PrimitiveId::TurnRight] {
        let ran = out.cycles.iter().filter(|(c, _)| *c == id).count() as u64;
        assert_eq!(out.table.stats(id).count, ran);
    }
    // the pinned stand entry ignores its samples
    assert!(out.table.stats(PrimitiveId::Stand).pinned);
    assert_eq!(out.table.predict(PrimitiveId::Stand).unwrap(), DeltaPose::ZERO);
}

#[test]
fn noiseless_stand_from_rest_is_exactly_zero() {
    let sim = Simulator::new(SimConfig::default().noiseless(), RobotModel::default()).unwrap();
    let lib = library(&sim);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let state = sim.reset(Pose2::new(1.0, 1.0, 1.0).unwrap());
    let out = sim
        .run_cycle(&state, lib.get(PrimitiveId::Stand), 100, ActionMode::Deterministic, &mut rng)
        .unwrap();
    assert_eq!(out.delta, DeltaPose::ZERO);
    assert_eq!(out.state.pose, state.pose);
}

#[test]
fn table_file_round_trips_exactly() {
    let sim = Simulator::new(SimConfig::default(), RobotModel::default()).unwrap();
    let settings = TableLearning {
        cycles: 30,
        seed: 8,
        ..Default::default()
    };
    let table = learn_table(&sim, &library(&sim), sim.reset(Pose2::origin()), &settings).table;
    let text = table.to_json();
    let back = LookupTable::from_json(&text).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.to_json(), text);
}

#[test]
fn bad_table_files_are_rejected() {
    assert!(matches!(LookupTable::from_json("{"), Err(Error::Format(_))));
    let text = LookupTable::new().to_json().replace("\"version\": 1", "\"version\": 9");
    assert!(matches!(LookupTable::from_json(&text), Err(Error::Format(_))));
}

#[test]
fn rollout_composes_predictions() {
    let mut t = LookupTable::new();
    t.update(PrimitiveId::Forward, &DeltaPose::new(1.0, 0.0, 0.0).unwrap());
    t.update(
        PrimitiveId::TurnLeft,
        &DeltaPose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2).unwrap(),
    );
    let poses = t
        .rollout(
            Pose2::origin(),
            &[PrimitiveId::Forward, PrimitiveId::TurnLeft, PrimitiveId::Forward],
        )
        .unwrap();
    assert_eq!(poses.len(), 4);
    let end = poses[3];
    assert!((end.x - 1.0).abs() < 1e-12 && (end.y - 1.0).abs() < 1e-12);
    assert!(t.rollout(Pose2::origin(), &[PrimitiveId::TurnRight]).is_err());
}
