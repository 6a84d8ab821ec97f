//! Receding-horizon planning over primitive sequences with the lookup-table
//! model: enumerate every sequence, execute the first primitive of the best
//! one for a full cycle, measure, re-plan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::LookupTable;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::policy::{ActionMode, PrimitiveId, PrimitiveLibrary};
use crate::rewards::{hl_reward_hw, hl_reward_sim, HighLevelGoal};
use crate::sim::{SimState, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HlVariant {
    /// Negative distance to the goal.
    Sim,
    /// Negative distance minus weighted heading error; needs a goal heading.
    Hw,
    /// Negative distance minus weighted error between the heading and the
    /// bearing to the goal.
    Facing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub variant: HlVariant,
    /// Success radius (m).
    pub goal_tolerance: f64,
    pub max_cycles: usize,
    pub steps_per_cycle: usize,
    /// Score the sum of rewards along the horizon instead of the terminal one.
    pub sum_rewards: bool,
    /// Probability per cycle that the pose measurement is lost and the
    /// robot stands still for that cycle.
    pub dropout_prob: f64,
    /// When the best sequence predicts no progress, re-plan with the
    /// [`HlVariant::Facing`] objective so the robot turns toward the goal
    /// instead of standing still.
    pub stall_recovery: bool,
    /// Cycles without measured progress after which planning switches to
    /// the [`HlVariant::Facing`] objective until progress resumes; 0 disables.
    pub progress_window: usize,
    /// Decrease of the best distance so far that counts as progress (m).
    pub progress_margin: f64,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            variant: HlVariant::Sim,
            goal_tolerance: 0.3,
            max_cycles: 400,
            steps_per_cycle: 100,
            sum_rewards: false,
            dropout_prob: 0.0,
            stall_recovery: true,
            progress_window: 10,
            progress_margin: 0.1,
            seed: 0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon > 8 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be in 1..=8, got {}",
                self.horizon
            )));
        }
        if !(self.goal_tolerance > 0.0 && self.goal_tolerance.is_finite()) {
            return Err(Error::InvalidArgument("goal tolerance must be positive".into()));
        }
        if self.steps_per_cycle == 0 {
            return Err(Error::InvalidArgument("steps per cycle must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidArgument("dropout probability must be in [0, 1]".into()));
        }
        if !(self.progress_margin >= 0.0 && self.progress_margin.is_finite()) {
            return Err(Error::InvalidArgument("progress margin must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub sequence: Vec<PrimitiveId>,
    /// Predicted pose after each primitive of the sequence.
    pub poses: Vec<Pose2>,
    pub score: f64,
    /// Number of sequences scored.
    pub evaluated: usize,
}

pub fn score_pose(pose: &Pose2, goal: &HighLevelGoal, variant: HlVariant) -> Result<f64> {
    match variant {
        HlVariant::Sim => Ok(hl_reward_sim(pose, goal)),
        HlVariant::Hw => hl_reward_hw(pose, goal),
        HlVariant::Facing => {
            let distance = pose.distance_to(goal.position);
            if distance == 0.0 {
                return Ok(0.0);
            }
            let bearing = (goal.position[1] - pose.y).atan2(goal.position[0] - pose.x);
            let gap = wrap_angle(bearing - pose.theta)?;
            Ok(-distance - goal.orientation_weight * gap.abs())
        }
    }
}

/// Exhaustive search over all `K^H` sequences in lexicographic index order;
/// only a strictly better score replaces the incumbent, so ties go to the
/// lexicographically smallest sequence.
pub fn plan(pose: Pose2, goal: &HighLevelGoal, table: &LookupTable, config: &MpcConfig) -> Result<Plan> {
    config.validate()?;
    let k = PrimitiveId::ALL.len();
    let deltas = PrimitiveId::ALL
        .iter()
        .map(|&id| table.predict(id))
        .collect::<Result<Vec<_>>>()?;
    let h = config.horizon;
    let total = k.pow(h as u32);
    let mut digits = vec![0usize; h];
    let mut poses = vec![pose; h];
    let mut best: Option<(f64, Vec<usize>, Vec<Pose2>)> = None;
    for _ in 0..total {
        let mut p = pose;
        let mut acc = 0.0;
        for (i, &d) in digits.iter().enumerate() {
            p = p.compose(&deltas[d]);
            poses[i] = p;
            if config.sum_rewards {
                acc += score_pose(&p, goal, config.variant)?;
            }
        }
        let score = if config.sum_rewards {
            acc
        } else {
            score_pose(&p, goal, config.variant)?
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, digits.clone(), poses.clone()));
        }
        // next sequence in lexicographic order
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < k {
                break;
            }
            *d = 0;
        }
    }
    let (score, seq, poses) = best.expect("at least one sequence");
    Ok(Plan {
        sequence: seq.into_iter().map(|i| PrimitiveId::ALL[i]).collect(),
        poses,
        score,
        evaluated: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleLog {
    pub cycle: usize,
    pub primitive: PrimitiveId,
    /// Pose the table predicted after this cycle.
    pub planned: Pose2,
    pub realized: Pose2,
    /// Distance to the goal after the cycle.
    pub distance: f64,
    pub score: f64,
    pub dropout: bool,
    /// The plan came from the facing objective, after a predicted stall or
    /// a window without measured progress.
    pub recovery: bool,
}

pub const RUN_LOG_HEADER: [&str; 12] = [
    "cycle",
    "primitive",
    "planned_x",
    "planned_y",
    "planned_theta",
    "realized_x",
    "realized_y",
    "realized_theta",
    "distance",
    "score",
    "dropout",
    "recovery",
];

/// Simulated pose after one step and the number of feet in contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub pose: Pose2,
    pub stance_count: u8,
}

#[derive(Debug, Clone)]
pub struct MpcOutcome {
    pub goal: HighLevelGoal,
    pub success: bool,
    pub cycles: usize,
    pub final_distance: f64,
    pub log: Vec<CycleLog>,
    /// State after every simulator step, starting with the initial state.
    pub trajectory: Vec<TrajectoryPoint>,
    pub state: SimState,
    pub error: Option<Error>,
}

/// Plans and executes one cycle at a time until the goal is within the
/// tolerance or `max_cycles` cycles have run.
pub fn mpc_run(
    sim: &Simulator,
    state: SimState,
    goal: &HighLevelGoal,
    table: &LookupTable,
    library: &PrimitiveLibrary,
    config: &MpcConfig,
) -> Result<MpcOutcome> {
    config.validate()?;
    if !table.is_complete() {
        return Err(Error::InvalidArgument("lookup table does not cover every primitive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = state;
    let mut log = Vec::new();
    let mut trajectory = vec![TrajectoryPoint {
        pose: state.pose,
        stance_count: sim.stance_count(&state.joints.q),
    }];
    let mut distance = state.pose.distance_to(goal.position);
    let mut error = None;
    let mut best_distance = distance;
    let mut since_progress = 0usize;
    while distance > config.goal_tolerance && log.len() < config.max_cycles {
        let dropout = config.dropout_prob > 0.0 && rng.random_bool(config.dropout_prob);
        let (primitive, planned, score, recovery) = if dropout {
            (PrimitiveId::Stand, state.pose, f64::NAN, false)
        } else {
            let p = plan(state.pose, goal, table, config)?;
            let repeats = if config.sum_rewards { config.horizon as f64 } else { 1.0 };
            let stalled = p.score <= repeats * score_pose(&state.pose, goal, config.variant)?;
            let stuck = config.progress_window > 0 && since_progress >= config.progress_window;
            if (config.stall_recovery && stalled) || stuck {
                let facing = MpcConfig {
                    variant: HlVariant::Facing,
                    ..config.clone()
                };
                let p = plan(state.pose, goal, table, &facing)?;
                (p.sequence[0], p.poses[0], p.score, true)
            } else {
                (p.sequence[0], p.poses[0], p.score, false)
            }
        };
        let out = match sim.run_cycle(
            &state,
            library.get(primitive),
            config.steps_per_cycle,
            ActionMode::Deterministic,
            &mut rng,
        ) {
            Ok(o) => o,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        trajectory.extend(out.steps.iter().map(|s| TrajectoryPoint {
            pose: s.pose,
            stance_count: s.features.stance_count,
        }));
        state = out.state;
        distance = state.pose.distance_to(goal.position);
        if distance < best_distance - config.progress_margin {
            best_distance = distance;
            since_progress = 0;
        } else {
            since_progress += 1;
        }
        log.push(CycleLog {
            cycle: log.len(),
            primitive,
            planned,
            realized: state.pose,
            distance,
            score,
            dropout,
            recovery,
        });
    }
    Ok(MpcOutcome {
        goal: *goal,
        success: error.is_none() && distance <= config.goal_tolerance,
        cycles: log.len(),
        final_distance: distance,
        log,
        trajectory,
        state,
        error,
    })
}

/// Visits the waypoints in order, carrying the simulator state across them.
/// A waypoint that runs out of cycles is abandoned and the next one starts
/// from wherever the robot stopped.
pub fn follow_waypoints(
    sim: &Simulator,
    state: SimState,
    waypoints: &[HighLevelGoal],
    table: &LookupTable,
    library: &PrimitiveLibrary,
    config: &MpcConfig,
) -> Result<Vec<MpcOutcome>> {
    let mut state = state;
    let mut results = Vec::with_capacity(waypoints.len());
    for (i, goal) in waypoints.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        let out = mpc_run(sim, state, goal, table, library, &cfg)?;
        state = out.state;
        let failed = out.error.is_some();
        results.push(out);
        if failed {
            break;
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DeltaPose;

    fn example_table() -> LookupTable {
        let mut t = LookupTable::new();
        t.update(PrimitiveId::Forward, &DeltaPose::new(0.1, 0.0, 0.0).unwrap());
        t.update(PrimitiveId::TurnLeft, &DeltaPose::new(0.02, 0.0, 0.3).unwrap());
        t.update(PrimitiveId::TurnRight, &DeltaPose::new(0.02, 0.0, -0.3).unwrap());
        t.pin(PrimitiveId::Stand, &DeltaPose::ZERO);
        t
    }

    #[test]
    fn counts_every_sequence() {
        let p = plan(Pose2::origin(), &HighLevelGoal::at(1.0, 0.0), &example_table(), &MpcConfig::default())
            .unwrap();
        assert_eq!(p.evaluated, 64);
        assert_eq!(p.sequence, vec![PrimitiveId::Forward; 3]);
        assert_eq!(p.poses.len(), 3);
        assert!((p.score + 0.7).abs() < 1e-12);
    }

    #[test]
    fn goal_here_means_stand() {
        let p = plan(Pose2::origin(), &HighLevelGoal::at(0.0, 0.0), &example_table(), &MpcConfig::default())
            .unwrap();
        assert_eq!(p.sequence, vec![PrimitiveId::Stand; 3]);
        assert_eq!(p.score, 0.0);
    }

    #[test]
    fn empty_table_errors() {
        let r = plan(Pose2::origin(), &HighLevelGoal::at(1.0, 0.0), &LookupTable::new(), &MpcConfig::default());
        assert!(matches!(r, Err(Error::UnseenPrimitive(_))));
    }

    #[test]
    fn hw_variant_needs_heading() {
        let cfg = MpcConfig {
            variant: HlVariant::Hw,
            ..Default::default()
        };
        assert!(plan(Pose2::origin(), &HighLevelGoal::at(1.0, 0.0), &example_table(), &cfg).is_err());
        let mut goal = HighLevelGoal::at(0.0, 0.0);
        goal.theta = Some(0.6);
        let p = plan(Pose2::origin(), &goal, &example_table(), &cfg).unwrap();
        assert_eq!(p.sequence[..2], [PrimitiveId::TurnLeft, PrimitiveId::TurnLeft]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            MpcConfig { horizon: 0, ..Default::default() },
            MpcConfig { goal_tolerance: 0.0, ..Default::default() },
            MpcConfig { dropout_prob: 1.5, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
