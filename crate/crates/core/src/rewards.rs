//! Low-level step rewards and high-level planning rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::sim::StepFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    /// Displacement weights over (lateral, forward, vertical).
    pub w1: [f64; 3],
    /// Orientation weights over (roll, pitch, yaw).
    pub w2: [f64; 3],
    pub w3: f64,
}

impl RewardWeights {
    pub const SIM_FORWARD: RewardWeights = RewardWeights {
        w1: [-1.0, 5.0, -0.1],
        w2: [0.1, 0.1, 0.1],
        w3: 0.01,
    };
    pub const SIM_TURN: RewardWeights = RewardWeights {
        w1: [0.1, 0.1, 0.1],
        w2: [0.1, 0.1, 20.0],
        w3: 0.002,
    };
    pub const HW_FORWARD: RewardWeights = RewardWeights {
        w1: [-50.0, 300.0, -10.0],
        w2: [1.0, 1.0, 1.0],
        w3: 0.01,
    };
    pub const HW_TURN: RewardWeights = RewardWeights {
        w1: [1.0, 1.0, 1.0],
        w2: [0.1, 0.1, 40.0],
        w3: 0.002,
    };

    pub const NAMES: [&'static str; 4] = ["sim-forward", "sim-turn", "hw-forward", "hw-turn"];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "sim-forward" => Ok(Self::SIM_FORWARD),
            "sim-turn" => Ok(Self::SIM_TURN),
            "hw-forward" => Ok(Self::HW_FORWARD),
            "hw-turn" => Ok(Self::HW_TURN),
            other => Err(Error::InvalidArgument(format!("unknown reward weights '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.w1.iter().chain(&self.w2).all(|v| v.is_finite());
        if !finite || !(self.w3.is_finite() && self.w3 >= 0.0) {
            return Err(Error::InvalidArgument("reward weights must be finite with w3 >= 0".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `w1 . dx - w2 . |theta| - w3 |qdot|`
pub fn forward_reward(f: &StepFeatures, w: &RewardWeights) -> f64 {
    let abs_theta = f.theta_com.map(f64::abs);
    dot(&w.w1, &f.delta_x_com) - dot(&w.w2, &abs_theta) - w.w3 * f.qdot_abs_sum
}

/// `-w1 . |dx| - w2 . |theta - theta_des| - w3 |qdot|`, with the yaw
/// difference wrapped to (-pi, pi].
pub fn turn_reward(f: &StepFeatures, w: &RewardWeights, theta_des: &[f64; 3]) -> f64 {
    let abs_dx = f.delta_x_com.map(f64::abs);
    let yaw_gap = wrap_angle(f.theta_com[2] - theta_des[2]).unwrap_or(f64::NAN);
    let err = [
        (f.theta_com[0] - theta_des[0]).abs(),
        (f.theta_com[1] - theta_des[1]).abs(),
        yaw_gap.abs(),
    ];
    -dot(&w.w1, &abs_dx) - dot(&w.w2, &err) - w.w3 * f.qdot_abs_sum
}

/// A named low-level reward that can be re-evaluated from stored features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LowLevelReward {
    Forward { weights: RewardWeights },
    /// Target heading rises linearly to `yaw_per_cycle` over the cycle.
    Turn { weights: RewardWeights, yaw_per_cycle: f64 },
}

impl LowLevelReward {
    pub const DEFAULT_YAW_PER_CYCLE: f64 = 0.2;

    /// Built-in rewards by weight-set name: `*-forward` rewards use the
    /// forward form, `*-turn` the turn form with the default target rate.
    pub fn by_name(name: &str) -> Result<Self> {
        let weights = RewardWeights::by_name(name)?;
        Ok(if name.ends_with("turn") {
            LowLevelReward::Turn {
                weights,
                yaw_per_cycle: Self::DEFAULT_YAW_PER_CYCLE,
            }
        } else {
            LowLevelReward::Forward { weights }
        })
    }

    /// Reward of a step taken at `phase` with the given features.
    pub fn evaluate(&self, phase: f64, f: &StepFeatures) -> f64 {
        match self {
            LowLevelReward::Forward { weights } => forward_reward(f, weights),
            LowLevelReward::Turn {
                weights,
                yaw_per_cycle,
            } => turn_reward(f, weights, &[0.0, 0.0, yaw_per_cycle * phase]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighLevelGoal {
    pub position: [f64; 2],
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default = "default_orientation_weight")]
    pub orientation_weight: f64,
}

fn default_orientation_weight() -> f64 {
    1.0
}

impl HighLevelGoal {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            position: [x, y],
            theta: None,
            orientation_weight: 1.0,
        }
    }
}

/// Negative distance from the pose to the goal position.
pub fn hl_reward_sim(pose: &Pose2, goal: &HighLevelGoal) -> f64 {
    -pose.distance_to(goal.position)
}

/// Negative distance minus weighted absolute heading error.
pub fn hl_reward_hw(pose: &Pose2, goal: &HighLevelGoal) -> Result<f64> {
    let theta = goal
        .theta
        .ok_or_else(|| Error::InvalidArgument("hardware reward needs a goal heading".into()))?;
    let gap = wrap_angle(theta - pose.theta)?;
    Ok(hl_reward_sim(pose, goal) - goal.orientation_weight * gap.abs())
}
