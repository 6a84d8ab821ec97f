use approx::assert_abs_diff_eq;
use primwalk_core::geometry::{rotate, Pose2};
use primwalk_core::policy::{ActionMode, Policy, Primitive, SinusoidalPolicy};
use primwalk_core::robot::{RobotModel, JOINT_COUNT};
use primwalk_core::sim::{fit_twist, SimConfig, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quiet(seed: u64) -> Simulator {
    let config = SimConfig {
        seed,
        ..SimConfig::default().noiseless()
    };
    Simulator::new(config, RobotModel::default()).unwrap()
}

/// Feet planted in the world seen from a body moving with twist (v, w): the
/// body-frame foot velocity is `-(v + w x p)`.
fn planted_feet(rng: &mut ChaCha8Rng, n: usize, v: [f64; 2], w: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
        .collect();
    let velocities = positions
        .iter()
        .map(|p| [-(v[0] - w * p[1]), -(v[1] + w * p[0])])
        .collect();
    (positions, velocities)
}

#[test]
fn rigid_fit_recovers_known_twists() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let w = rng.random_range(-2.0..2.0);
        let (p, u) = planted_feet(&mut rng, n, v, w);
        let t = fit_twist(&p, &u);
        assert_abs_diff_eq!(t.vx, v[0], epsilon = 1e-9);
        assert_abs_diff_eq!(t.vy, v[1], epsilon = 1e-9);
        assert_abs_diff_eq!(t.omega, w, epsilon = 1e-9);
    }
}

#[test]
fn backward_feet_push_the_body_forward() {
    let p = [[0.3, 0.2], [-0.3, 0.2], [0.0, -0.3]];
    let u = [[-0.1, 0.0]; 3];
    let t = fit_twist(&p, &u);
    assert_abs_diff_eq!(t.vx, 0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(t.vy, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t.omega, 0.0, epsilon = 1e-12);
}

#[test]
fn no_stance_no_motion() {
    let sim = quiet(0);
    let mut state = sim.reset(Pose2::new(1.0, -2.0, 0.4).unwrap());
    // shoulders up: every foot well above the contact height
    for leg in 0..6 {
        state.joints.q[3 * leg + 1] = 0.8;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let cmd: [f64; JOINT_COUNT] = std::array::from_fn(|j| {
            if j % 3 == 1 {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let (next, f) = sim.step(&state, &cmd).unwrap();
        assert_eq!(f.stance_count, 0);
        assert_eq!(next.pose, state.pose);
        assert_eq!(f.delta_x_com, [0.0; 3]);
        state = next;
    }
}

#[test]
fn summed_step_displacements_match_cycle_delta() {
    let sim = quiet(0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..5 {
        let policy = SinusoidalPolicy::random(sim.model.limit_table(), &sim.model.neutral_stance(), -2.0, &mut rng)
            .unwrap();
        let prim = Primitive::Policy(Policy::Sinusoidal(policy));
        let start = Pose2::new(0.5 * trial as f64, -1.0, 0.3 * trial as f64 - 0.6).unwrap();
        let state = sim.reset(start);
        let out = sim.run_cycle(&state, &prim, 100, ActionMode::Deterministic, &mut rng).unwrap();
        let mut heading = start.theta;
        let (mut sx, mut sy) = (0.0, 0.0);
        for s in &out.steps {
            let [lateral, forward, _] = s.features.delta_x_com;
            let (wx, wy) = rotate(heading, (forward, -lateral));
            sx += wx;
            sy += wy;
            heading = s.features.theta_com[2];
        }
        let (bx, by) = rotate(start.theta, out.delta.to_cartesian());
        assert_abs_diff_eq!(sx, bx, epsilon = 1e-9);
        assert_abs_diff_eq!(sy, by, epsilon = 1e-9);
    }
}

#[test]
fn noise_is_keyed_by_seed_and_step() {
    let noisy = |seed| {
        Simulator::new(
            SimConfig {
                seed,
                ..SimConfig::default()
            },
            RobotModel::default(),
        )
        .unwrap()
    };
    let a = noisy(1);
    let s = a.reset(Pose2::origin());
    let zero = [0.0; JOINT_COUNT];
    let (n1, _) = a.step(&s, &zero).unwrap();
    let (n2, _) = a.step(&s, &zero).unwrap();
    assert_eq!(n1, n2);
    let (m, _) = noisy(2).step(&s, &zero).unwrap();
    assert_ne!(n1.pose, m.pose);
    let mut later = s;
    later.step_index = 7;
    let (l, _) = a.step(&later, &zero).unwrap();
    assert_ne!(l.pose, n1.pose);
}
