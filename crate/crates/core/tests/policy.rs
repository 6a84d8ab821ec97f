use primwalk_core::geometry::Pose2;
use primwalk_core::policy::{
    deserialize, serialize, ActionMode, NeuralPolicy, Policy, Primitive, PrimitiveId, PrimitiveLibrary,
    SinusoidalPolicy,
};
use primwalk_core::robot::RobotModel;
use primwalk_core::sim::{SimConfig, Simulator};
use primwalk_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sinusoid(seed: u64) -> Policy {
    let m = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Policy::Sinusoidal(SinusoidalPolicy::random(m.limit_table(), &m.neutral_stance(), -1.5, &mut rng).unwrap())
}

#[test]
fn policy_files_round_trip() {
    let m = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let neural = Policy::Neural(NeuralPolicy::random(m.limit_table(), &mut rng).unwrap());
    for p in [sinusoid(3), neural] {
        let bytes = serialize(&p);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(serialize(&back), bytes);
    }
}

#[test]
fn damaged_policy_files_fail() {
    let bytes = serialize(&sinusoid(3));
    assert!(matches!(deserialize(&bytes[..20]), Err(Error::Format(_))));
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(deserialize(&wrong), Err(Error::Format(_))));
    assert!(matches!(deserialize(b"not a policy"), Err(Error::Format(_))));
}

#[test]
fn mirrored_turn_reflects_motion() {
    let sim = Simulator::new(SimConfig::default().noiseless(), RobotModel::default()).unwrap();
    let lib = PrimitiveLibrary::new(sinusoid(5), sinusoid(6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let run = |id| {
        let mut rng = rng.clone();
        sim.run_cycle(
            &sim.reset(Pose2::origin()),
            lib.get(id),
            100,
            ActionMode::Deterministic,
            &mut rng,
        )
        .unwrap()
    };
    let left = run(PrimitiveId::TurnLeft);
    let right = run(PrimitiveId::TurnRight);
    let (lx, ly) = left.delta.to_cartesian();
    let (rx, ry) = right.delta.to_cartesian();
    assert!((lx - rx).abs() < 1e-9);
    assert!((ly + ry).abs() < 1e-9);
    assert!((left.delta.beta + right.delta.beta).abs() < 1e-9);
    assert_eq!(lib.get(PrimitiveId::Stand), &Primitive::Stand);
    let _ = &mut rng;
}

#[test]
fn mirror_is_an_involution() {
    let p = sinusoid(9);
    assert_eq!(p.mirror().unwrap().mirror().unwrap(), p);
    let m = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let neural = Policy::Neural(NeuralPolicy::random(m.limit_table(), &mut rng).unwrap());
    assert!(matches!(neural.mirror(), Err(Error::Unsupported(_))));
}

#[test]
fn primitive_names_round_trip() {
    for id in PrimitiveId::ALL {
        assert_eq!(PrimitiveId::from_name(id.name()), Some(id));
        assert_eq!(PrimitiveId::from_index(id.index()), Some(id));
    }
    assert_eq!(PrimitiveId::from_name("jump"), None);
}
