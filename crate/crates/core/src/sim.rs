//! Kinematic planar surrogate for a hexapod.
//!
//! Feet whose body-frame height is below `contact_height` are in stance and
//! are assumed not to move in the world. The body twist is the rigid motion
//! that best cancels the stance feet's body-frame velocities, reduced by the
//! slip factor and perturbed by seeded Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{between, rotate, wrap_angle, DeltaPose, Pose2};
use crate::policy::{ActionMode, PhaseClock, Primitive};
use crate::robot::{JointState, JointVector, RobotModel, JOINT_COUNT, LEG_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub contact_height: f64,
    pub slip: f64,
    /// Per-step standard deviation of (dx, dy, dtheta) noise.
    pub noise_std: [f64; 3],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            contact_height: -0.12,
            slip: 0.1,
            noise_std: [0.002, 0.002, 0.005],
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn noiseless(mut self) -> Self {
        self.noise_std = [0.0; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(Error::InvalidArgument(format!("slip must be in [0, 1), got {}", self.slip)));
        }
        if !self.contact_height.is_finite() {
            return Err(Error::NonFinite("contact height"));
        }
        if self.noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("noise std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Complete simulator state. Noise for step `k` is drawn from the stream
/// `(seed, k)`, so `step_index` is also the RNG cursor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub pose: Pose2,
    pub joints: JointState,
    pub step_index: u64,
}

/// Raw reward ingredients of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepFeatures {
    /// (lateral to the right, forward, vertical) displacement in the
    /// pre-step body frame.
    pub delta_x_com: [f64; 3],
    /// (roll, pitch, heading) after the step.
    pub theta_com: [f64; 3],
    /// Sum of absolute joint angle changes over the step (radians).
    pub qdot_abs_sum: f64,
    pub stance_count: u8,
}

/// Body twist fitted to the stance feet, in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };
}

/// Least-squares rigid body twist that keeps the given feet fixed in the
/// world: minimises `sum |u_i + v + omega x p_i|^2` over body-frame foot
/// velocities `u_i` at positions `p_i`. Falls back to a translation-only
/// fit when the points do not determine a rotation.
pub fn fit_twist(positions: &[[f64; 2]], velocities: &[[f64; 2]]) -> Twist {
    let n = positions.len();
    if n == 0 {
        return Twist::ZERO;
    }
    let nf = n as f64;
    let mean = |v: &[[f64; 2]]| {
        let s = v.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / nf, s[1] / nf]
    };
    let pbar = mean(positions);
    let ubar = mean(velocities);
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, u) in positions.iter().zip(velocities) {
        let d = [p[0] - pbar[0], p[1] - pbar[1]];
        let du = [u[0] - ubar[0], u[1] - ubar[1]];
        // (J d) . du with J the 90 degree rotation
        num += -d[1] * du[0] + d[0] * du[1];
        den += d[0] * d[0] + d[1] * d[1];
    }
    let mut omega = -num / den;
    if !omega.is_finite() || den < 1e-12 {
        omega = 0.0;
    }
    Twist {
        vx: -ubar[0] + omega * pbar[1],
        vy: -ubar[1] - omega * pbar[0],
        omega,
    }
}

/// One executed step of a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub phase: f64,
    pub q_des: JointVector,
    pub features: StepFeatures,
    pub next_phase: f64,
    pub done: bool,
    pub pose: Pose2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub state: SimState,
    pub steps: Vec<StepRecord>,
    pub delta: DeltaPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub config: SimConfig,
    pub model: RobotModel,
}

impl Simulator {
    pub fn new(config: SimConfig, model: RobotModel) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        Ok(Self { config, model })
    }

    pub fn reset(&self, initial_pose: Pose2) -> SimState {
        SimState {
            pose: initial_pose,
            joints: JointState::at_rest(self.model.neutral_stance()),
            step_index: 0,
        }
    }

    pub fn is_stance(&self, foot: &[f64; 3]) -> bool {
        foot[2] < self.config.contact_height
    }

    /// Number of feet in contact for joint angles `q`.
    pub fn stance_count(&self, q: &JointVector) -> u8 {
        self.model
            .foot_positions(q)
            .iter()
            .filter(|f| self.is_stance(f))
            .count() as u8
    }

    fn noise(&self, step_index: u64) -> [f64; 3] {
        let std = self.config.noise_std;
        if std.iter().all(|s| *s == 0.0) {
            return [0.0; 3];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step_index);
        std::array::from_fn(|i| {
            let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
            z * std[i]
        })
    }

    /// Integrates joint velocity commands for one step.
    pub fn step(&self, state: &SimState, qdot_des: &JointVector) -> Result<(SimState, StepFeatures)> {
        if qdot_des.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint velocity command"));
        }
        let dt = self.config.dt;
        let q_old = state.joints.q;
        let q_new = self
            .model
            .clamp_to_limits(&std::array::from_fn(|j| q_old[j] + qdot_des[j] * dt));
        let qdot: JointVector = std::array::from_fn(|j| (q_new[j] - q_old[j]) / dt);

        let feet_old = self.model.foot_positions(&q_old);
        let feet_new = self.model.foot_positions(&q_new);
        let mut positions = Vec::with_capacity(LEG_COUNT);
        let mut velocities = Vec::with_capacity(LEG_COUNT);
        for (a, b) in feet_old.iter().zip(&feet_new) {
            if self.is_stance(b) {
                positions.push([(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5]);
                velocities.push([(b[0] - a[0]) / dt, (b[1] - a[1]) / dt]);
            }
        }
        let twist = fit_twist(&positions, &velocities);
        let keep = (1.0 - self.config.slip) * dt;
        let n = self.noise(state.step_index);
        let dx = twist.vx * keep + n[0];
        let dy = twist.vy * keep + n[1];
        let dtheta = twist.omega * keep + n[2];

        let (wx, wy) = rotate(state.pose.theta, (dx, dy));
        let pose = Pose2::new(
            state.pose.x + wx,
            state.pose.y + wy,
            state.pose.theta + dtheta,
        )?;
        let features = StepFeatures {
            delta_x_com: [-dy, dx, 0.0],
            theta_com: [0.0, 0.0, wrap_angle(pose.theta)?],
            qdot_abs_sum: (0..JOINT_COUNT).map(|j| (q_new[j] - q_old[j]).abs()).sum(),
            stance_count: positions.len() as u8,
        };
        let next = SimState {
            pose,
            joints: JointState { q: q_new, qdot },
            step_index: state.step_index + 1,
        };
        Ok((next, features))
    }

    /// Runs one full cycle of `primitive`, converting each joint target into
    /// a velocity command. `rng` is only used for stochastic actions.
    pub fn run_cycle<R: rand::Rng + ?Sized>(
        &self,
        state: &SimState,
        primitive: &Primitive,
        steps_per_cycle: usize,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<CycleOutcome> {
        let mut clock = PhaseClock::new(steps_per_cycle)?;
        let start = state.pose;
        let mut s = *state;
        let zero = [0.0; JOINT_COUNT];
        let mut steps = Vec::with_capacity(steps_per_cycle);
        loop {
            let phase = clock.phase();
            let action = primitive.act(phase, &s.joints.q, mode, rng)?;
            let cmd = self
                .model
                .velocity_command(&action.q_des, &s.joints.q, &s.joints.qdot, &zero)?;
            let (next, features) = self.step(&s, &cmd)?;
            s = next;
            let done = clock.advance();
            steps.push(StepRecord {
                phase,
                q_des: action.q_des,
                features,
                next_phase: clock.phase(),
                done,
                pose: s.pose,
            });
            if done {
                break;
            }
        }
        Ok(CycleOutcome {
            state: s,
            steps,
            delta: between(&start, &s.pose),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Policy, SinusoidalPolicy};
    use approx::assert_abs_diff_eq;

    fn quiet() -> Simulator {
        Simulator::new(SimConfig::default().noiseless(), RobotModel::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_all_feet_stand() {
        let sim = quiet();
        let a = sim.reset(Pose2::origin());
        assert_eq!(a, sim.reset(Pose2::origin()));
        let feet = sim.model.foot_positions(&a.joints.q);
        assert!(feet.iter().all(|f| sim.is_stance(f)));
    }

    #[test]
    fn uniform_foot_translation() {
        let p = [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]];
        let u = [[-0.3, 0.1]; 3];
        let t = fit_twist(&p, &u);
        assert_abs_diff_eq!(t.vx, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(t.vy, -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(t.omega, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_foot_falls_back_to_translation() {
        let t = fit_twist(&[[0.2, 0.1]], &[[0.5, 0.0]]);
        assert_eq!(t.omega, 0.0);
        assert_eq!((t.vx, t.vy), (-0.5, 0.0));
    }

    #[test]
    fn rejects_bad_config_and_commands() {
        let mut c = SimConfig::default();
        c.slip = 1.0;
        assert!(Simulator::new(c, RobotModel::default()).is_err());
        let sim = quiet();
        let s = sim.reset(Pose2::origin());
        let mut cmd = [0.0; JOINT_COUNT];
        cmd[3] = f64::NAN;
        assert!(sim.step(&s, &cmd).is_err());
    }

    #[test]
    fn lifted_feet_do_not_move_the_body() {
        let sim = quiet();
        let mut s = sim.reset(Pose2::origin());
        // raise every shoulder so no foot touches
        for leg in 0..LEG_COUNT {
            s.joints.q[leg * 3 + 1] = 0.5;
        }
        let mut cmd = [0.0; JOINT_COUNT];
        for leg in 0..LEG_COUNT {
            cmd[leg * 3] = 2.0;
        }
        let (next, f) = sim.step(&s, &cmd).unwrap();
        assert_eq!(f.stance_count, 0);
        assert_eq!(next.pose, s.pose);
        assert_eq!(f.delta_x_com, [0.0; 3]);
    }

    #[test]
    fn stand_cycle_does_not_move() {
        let sim = quiet();
        let s = sim.reset(Pose2::new(1.0, -2.0, 0.4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sim
            .run_cycle(&s, &Primitive::Stand, 100, ActionMode::Deterministic, &mut rng)
            .unwrap();
        assert_eq!(out.steps.len(), 100);
        assert!(out.steps.last().unwrap().done);
        assert_eq!(out.steps.iter().filter(|r| r.done).count(), 1);
        assert_eq!(out.delta, DeltaPose::ZERO);
    }

    #[test]
    fn same_seed_same_cycle() {
        let sim = Simulator::new(SimConfig::default(), RobotModel::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SinusoidalPolicy::random(
            sim.model.limit_table(),
            &sim.model.neutral_stance(),
            -1.0,
            &mut rng,
        )
        .unwrap();
        let prim = Primitive::Policy(Policy::Sinusoidal(p));
        let s = sim.reset(Pose2::origin());
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            sim.run_cycle(&s, &prim, 100, ActionMode::Stochastic, &mut r).unwrap()
        };
        assert_eq!(run(9), run(9));
    }
}
