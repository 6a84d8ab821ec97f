//! Hexapod kinematics and the joint-space feedback law.
//!
//! Body frame: x forward, y left, z up. Legs are numbered counter-clockwise
//! starting at the front-left leg, so leg `i` and leg `5 - i` are reflections
//! of each other across the body x-axis. Every leg has three joints in the
//! order base (yaw about body z), shoulder (pitch), elbow (pitch); joint `j` of
//! leg `i` lives at index `3 * i + j`.
//!
//! Zero angles put the leg straight and horizontal in the ground plane of the
//! neutral stance, which sits `body_height` below the centre of mass. Positive
//! shoulder/elbow angles lift the foot.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEG_COUNT: usize = 6;
pub const JOINTS_PER_LEG: usize = 3;
pub const JOINT_COUNT: usize = LEG_COUNT * JOINTS_PER_LEG;

pub type JointVector = [f64; JOINT_COUNT];
pub type FootPositions = [[f64; 3]; LEG_COUNT];

/// Index of the leg that mirrors `leg` across the body x-axis.
pub const fn mirror_leg(leg: usize) -> usize {
    LEG_COUNT - 1 - leg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkLengths {
    pub coxa: f64,
    pub femur: f64,
    pub tibia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    pub mount_angles: [f64; LEG_COUNT],
    pub mount_radius: f64,
    pub links: LinkLengths,
    /// `(min, max)` for base, shoulder and elbow; shared by all legs.
    pub joint_limits: [(f64, f64); JOINTS_PER_LEG],
    pub joint_velocity_limit: f64,
    pub kp: [f64; JOINTS_PER_LEG],
    pub kd: [f64; JOINTS_PER_LEG],
    pub body_height: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            mount_angles: [
                PI / 6.0,
                PI / 2.0,
                5.0 * PI / 6.0,
                -5.0 * PI / 6.0,
                -PI / 2.0,
                -PI / 6.0,
            ],
            mount_radius: 0.25,
            links: LinkLengths {
                coxa: 0.06,
                femur: 0.20,
                tibia: 0.20,
            },
            joint_limits: [(-1.0, 1.0), (-1.0, 1.2), (-1.2, 1.2)],
            joint_velocity_limit: 4.0,
            kp: [8.0; JOINTS_PER_LEG],
            kd: [0.1; JOINTS_PER_LEG],
            body_height: 0.14,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        let l = &self.links;
        if !(l.coxa > 0.0 && l.femur > 0.0 && l.tibia > 0.0) {
            return Err(Error::InvalidArgument("link lengths must be positive".into()));
        }
        if !(self.mount_radius >= 0.0 && self.body_height.is_finite()) {
            return Err(Error::InvalidArgument("invalid body dimensions".into()));
        }
        for (lo, hi) in self.joint_limits {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "joint limits must satisfy min < max, got ({lo}, {hi})"
                )));
            }
        }
        let gains_ok = self
            .kp
            .iter()
            .chain(self.kd.iter())
            .all(|g| g.is_finite() && *g >= 0.0);
        if !gains_ok {
            return Err(Error::InvalidArgument("gains must be non-negative".into()));
        }
        if !(self.joint_velocity_limit > 0.0) {
            return Err(Error::InvalidArgument("joint velocity limit must be positive".into()));
        }
        Ok(())
    }

    pub fn limits(&self, joint: usize) -> (f64, f64) {
        self.joint_limits[joint % JOINTS_PER_LEG]
    }

    /// Per-joint limits expanded to all 18 joints.
    pub fn limit_table(&self) -> [(f64, f64); JOINT_COUNT] {
        std::array::from_fn(|j| self.limits(j))
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        std::array::from_fn(|j| {
            let (lo, hi) = self.limits(j);
            q[j].clamp(lo, hi)
        })
    }

    /// All joints at zero: straight legs resting on the ground plane.
    pub fn neutral_stance(&self) -> JointVector {
        [0.0; JOINT_COUNT]
    }

    /// Body-frame tip of one leg for its (base, shoulder, elbow) angles.
    pub fn foot_position(&self, leg: usize, angles: [f64; 3]) -> [f64; 3] {
        let [yaw, shoulder, elbow] = angles;
        let mount = self.mount_angles[leg];
        let l = &self.links;
        let reach = l.coxa + l.femur * shoulder.cos() + l.tibia * (shoulder + elbow).cos();
        let lift = l.femur * shoulder.sin() + l.tibia * (shoulder + elbow).sin();
        let heading = mount + yaw;
        [
            self.mount_radius * mount.cos() + reach * heading.cos(),
            self.mount_radius * mount.sin() + reach * heading.sin(),
            -self.body_height + lift,
        ]
    }

    pub fn foot_positions(&self, q: &JointVector) -> FootPositions {
        std::array::from_fn(|leg| {
            let b = leg * JOINTS_PER_LEG;
            self.foot_position(leg, [q[b], q[b + 1], q[b + 2]])
        })
    }

    /// `kp (q_des - q) - kd qdot + qff`, clamped to the joint velocity limit.
    pub fn velocity_command(
        &self,
        q_des: &JointVector,
        q: &JointVector,
        qdot: &JointVector,
        qff: &JointVector,
    ) -> Result<JointVector> {
        let finite = |v: &JointVector| v.iter().all(|x| x.is_finite());
        if !(finite(q_des) && finite(q) && finite(qdot) && finite(qff)) {
            return Err(Error::NonFinite("velocity command input"));
        }
        let limit = self.joint_velocity_limit;
        Ok(std::array::from_fn(|j| {
            let k = j % JOINTS_PER_LEG;
            let raw = self.kp[k] * (q_des[j] - q[j]) - self.kd[k] * qdot[j] + qff[j];
            raw.clamp(-limit, limit)
        }))
    }
}

/// Joint angles and velocities of all 18 joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVector,
    pub qdot: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            q,
            qdot: [0.0; JOINT_COUNT],
        }
    }
}

/// Reflects a joint vector across the body x-axis: legs swap with their
/// mirror partner and base angles change sign.
pub fn mirror_joints(q: &JointVector) -> JointVector {
    let mut out = [0.0; JOINT_COUNT];
    for leg in 0..LEG_COUNT {
        let src = mirror_leg(leg) * JOINTS_PER_LEG;
        let dst = leg * JOINTS_PER_LEG;
        out[dst] = -q[src];
        out[dst + 1] = q[src + 1];
        out[dst + 2] = q[src + 2];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_configuration_feet() {
        let m = RobotModel::default();
        let feet = m.foot_positions(&[0.0; JOINT_COUNT]);
        let reach = m.mount_radius + m.links.coxa + m.links.femur + m.links.tibia;
        for (leg, f) in feet.iter().enumerate() {
            let angle = m.mount_angles[leg];
            assert_abs_diff_eq!(f[0], reach * angle.cos(), epsilon = 1e-15);
            assert_abs_diff_eq!(f[1], reach * angle.sin(), epsilon = 1e-15);
            assert_abs_diff_eq!(f[2], -m.body_height, epsilon = 1e-15);
        }
    }

    #[test]
    fn raised_elbow_lifts_foot_by_tibia() {
        let m = RobotModel::default();
        let mut q = [0.0; JOINT_COUNT];
        q[2] = PI / 2.0;
        let base = m.foot_positions(&[0.0; JOINT_COUNT]);
        let feet = m.foot_positions(&q);
        assert_abs_diff_eq!(feet[0][2] - base[0][2], m.links.tibia, epsilon = 1e-15);
        for leg in 1..LEG_COUNT {
            assert_eq!(feet[leg], base[leg]);
        }
    }

    #[test]
    fn velocity_law_examples() {
        let m = RobotModel::default();
        let zero = [0.0; JOINT_COUNT];
        let q = [0.3; JOINT_COUNT];
        assert_eq!(m.velocity_command(&q, &q, &zero, &zero).unwrap(), zero);

        let mut m2 = m.clone();
        m2.kp = [1.0; 3];
        m2.kd = [0.5; 3];
        let q_des = [0.1; JOINT_COUNT];
        let qdot = [0.2; JOINT_COUNT];
        let out = m2.velocity_command(&q_des, &zero, &qdot, &zero).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }

        let mut m3 = m.clone();
        m3.kp = [1.0; 3];
        m3.kd = [0.0; 3];
        m3.joint_velocity_limit = 1.0;
        let out = m3.velocity_command(&[3.7; JOINT_COUNT], &zero, &zero, &zero).unwrap();
        assert!(out.iter().all(|v| *v == 1.0));

        let mut bad = zero;
        bad[4] = f64::NAN;
        assert!(m.velocity_command(&bad, &zero, &zero, &zero).is_err());
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(RobotModel::default().validate().is_ok());
        let mut m = RobotModel::default();
        m.links.femur = 0.0;
        assert!(m.validate().is_err());
        let mut m = RobotModel::default();
        m.joint_limits[1] = (0.5, 0.5);
        assert!(m.validate().is_err());
        let mut m = RobotModel::default();
        m.kd[0] = -1.0;
        assert!(m.validate().is_err());
    }

    fn joints() -> impl Strategy<Value = JointVector> {
        proptest::collection::vec(-1.0..1.0f64, JOINT_COUNT)
            .prop_map(|v| std::array::from_fn(|i| v[i]))
    }

    proptest! {
        #[test]
        fn mirrored_joints_reflect_feet(q in joints()) {
            let m = RobotModel::default();
            let feet = m.foot_positions(&q);
            let mirrored = m.foot_positions(&mirror_joints(&q));
            for leg in 0..LEG_COUNT {
                let a = feet[leg];
                let b = mirrored[mirror_leg(leg)];
                prop_assert!((a[0] - b[0]).abs() < 1e-12);
                prop_assert!((a[1] + b[1]).abs() < 1e-12);
                prop_assert!((a[2] - b[2]).abs() < 1e-12);
            }
            prop_assert_eq!(mirror_joints(&mirror_joints(&q)), q);
        }

        #[test]
        fn velocity_law_superposition(a in joints(), b in joints(), qd in joints()) {
            let mut m = RobotModel::default();
            m.joint_velocity_limit = 1e9;
            let zero = [0.0; JOINT_COUNT];
            let sum: JointVector = std::array::from_fn(|i| a[i] + b[i]);
            let full = m.velocity_command(&sum, &zero, &qd, &zero).unwrap();
            let pa = m.velocity_command(&a, &zero, &zero, &zero).unwrap();
            let pb = m.velocity_command(&b, &zero, &zero, &zero).unwrap();
            let pd = m.velocity_command(&zero, &zero, &qd, &zero).unwrap();
            for i in 0..JOINT_COUNT {
                prop_assert!((full[i] - (pa[i] + pb[i] + pd[i])).abs() < 1e-12);
            }
        }
    }
}
