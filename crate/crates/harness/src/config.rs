//! Experiment configuration: one TOML file drives a whole pipeline run.
//!
//! Every section is optional and falls back to the defaults below; unknown
//! keys are rejected. All seeds are derived from the top-level `seed`.

use std::path::{Path, PathBuf};

use primwalk_core::dynamics::TableLearning;
use primwalk_core::planner::{HlVariant, MpcConfig};
use primwalk_core::rewards::{LowLevelReward, RewardWeights};
use primwalk_core::robot::RobotModel;
use primwalk_core::sac::SacConfig;
use primwalk_core::sim::{SimConfig, Simulator};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Environment variable that overrides the output directory of the config.
pub const OUTPUT_ENV: &str = "PRIMWALK_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub robot: RobotModel,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub planner: PlannerSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            robot: RobotModel::default(),
            sim: SimSection::default(),
            training: TrainingSection::default(),
            dynamics: DynamicsSection::default(),
            planner: PlannerSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub contact_height: f64,
    pub slip: f64,
    pub noise_std: [f64; 3],
    /// Control steps per primitive cycle, shared by training, table learning
    /// and planning.
    pub steps_per_cycle: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt: s.dt,
            contact_height: s.contact_height,
            slip: s.slip,
            noise_std: s.noise_std,
            steps_per_cycle: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Sinusoidal,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveTraining {
    /// Reward weight-set name, e.g. `sim-forward`.
    pub reward: String,
    /// Target heading change per cycle for turn rewards (rad).
    #[serde(default)]
    pub yaw_per_cycle: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_policy")]
    pub policy: PolicyChoice,
    /// Start from the forward run's replay buffer, relabeled with this reward.
    #[serde(default)]
    pub reuse_buffer: bool,
    #[serde(default)]
    pub sac: SacConfig,
}

fn default_iterations() -> usize {
    50
}

fn default_policy() -> PolicyChoice {
    PolicyChoice::Sinusoidal
}

impl PrimitiveTraining {
    pub fn low_level_reward(&self) -> Result<LowLevelReward> {
        let mut reward = LowLevelReward::by_name(&self.reward).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let (LowLevelReward::Turn { yaw_per_cycle, .. }, Some(v)) = (&mut reward, self.yaw_per_cycle) {
            *yaw_per_cycle = v;
        } else if self.yaw_per_cycle.is_some() {
            return Err(HarnessError::Config(format!(
                "yaw_per_cycle only applies to turn rewards, not '{}'",
                self.reward
            )));
        }
        Ok(reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub forward: PrimitiveTraining,
    /// Trained as "turn left"; "turn right" is its mirror image.
    pub turn: PrimitiveTraining,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            forward: PrimitiveTraining {
                reward: "sim-forward".into(),
                yaw_per_cycle: None,
                iterations: 50,
                policy: PolicyChoice::Sinusoidal,
                reuse_buffer: false,
                sac: SacConfig::default(),
            },
            turn: PrimitiveTraining {
                reward: "sim-turn".into(),
                yaw_per_cycle: None,
                iterations: 50,
                policy: PolicyChoice::Sinusoidal,
                reuse_buffer: true,
                sac: SacConfig {
                    gamma: 0.9,
                    reward_scale: 1.0,
                    ..SacConfig::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub cycles: usize,
    pub zero_stand: bool,
    /// Length of the held-out run used for the validation report.
    pub validation_cycles: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            cycles: 50,
            zero_stand: true,
            validation_cycles: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub horizon: usize,
    pub variant: HlVariant,
    pub goal_tolerance: f64,
    pub max_cycles: usize,
    pub sum_rewards: bool,
    pub dropout_prob: f64,
    pub stall_recovery: bool,
    pub progress_window: usize,
    pub progress_margin: f64,
    pub goals: Vec<[f64; 2]>,
    pub waypoints: Vec<[f64; 2]>,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let m = MpcConfig::default();
        Self {
            horizon: m.horizon,
            variant: m.variant,
            goal_tolerance: m.goal_tolerance,
            max_cycles: m.max_cycles,
            sum_rewards: m.sum_rewards,
            dropout_prob: m.dropout_prob,
            stall_recovery: m.stall_recovery,
            progress_window: m.progress_window,
            progress_margin: m.progress_margin,
            goals: vec![[5.0, 0.0], [5.0, 5.0], [0.0, 5.0], [-5.0, 5.0], [-5.0, 0.0]],
            waypoints: vec![[0.0, 4.0], [-4.0, 4.0], [-4.0, 0.0]],
        }
    }
}

/// Independent seed streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    SimNoise = 1,
    ForwardTraining = 2,
    TurnTraining = 3,
    Table = 4,
    Validation = 5,
    Planner = 6,
}

pub fn derive_seed(master: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML rendering of the resolved config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: primwalk_core::Error| HarnessError::Config(e.to_string());
        self.robot.validate().map_err(cfg_err)?;
        self.sim_config().validate().map_err(cfg_err)?;
        if self.sim.steps_per_cycle == 0 {
            return Err(HarnessError::Config("sim.steps_per_cycle must be positive".into()));
        }
        for (name, t) in [("forward", &self.training.forward), ("turn", &self.training.turn)] {
            t.sac
                .validate()
                .map_err(|e| HarnessError::Config(format!("training.{name}.sac: {e}")))?;
            if t.sac.steps_per_cycle != self.sim.steps_per_cycle {
                return Err(HarnessError::Config(format!(
                    "training.{name}.sac.steps_per_cycle ({}) must equal sim.steps_per_cycle ({})",
                    t.sac.steps_per_cycle, self.sim.steps_per_cycle
                )));
            }
            if t.iterations == 0 {
                return Err(HarnessError::Config(format!("training.{name}.iterations must be positive")));
            }
            RewardWeights::by_name(&t.reward).map_err(|e| HarnessError::Config(format!("training.{name}: {e}")))?;
            t.low_level_reward()?;
        }
        if self.training.forward.reuse_buffer {
            return Err(HarnessError::Config(
                "training.forward.reuse_buffer: the forward primitive is trained first".into(),
            ));
        }
        if self.dynamics.cycles == 0 {
            return Err(HarnessError::Config("dynamics.cycles must be positive".into()));
        }
        self.mpc_config(0).validate().map_err(cfg_err)?;
        let finite = |pts: &[[f64; 2]]| pts.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.planner.goals) || !finite(&self.planner.waypoints) {
            return Err(HarnessError::Config("goal coordinates must be finite".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            contact_height: self.sim.contact_height,
            slip: self.sim.slip,
            noise_std: self.sim.noise_std,
            seed: derive_seed(self.seed, SeedStream::SimNoise),
        }
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Ok(Simulator::new(self.sim_config(), self.robot.clone())?)
    }

    /// Simulator whose noise sequence is specific to one stage (`stream`) and
    /// run (`index`) of the pipeline.
    pub fn simulator_for(&self, stream: SeedStream, index: u64) -> Result<Simulator> {
        let mut config = self.sim_config();
        config.seed = config
            .seed
            .wrapping_add(derive_seed(self.seed, stream))
            .wrapping_add(index);
        Ok(Simulator::new(config, self.robot.clone())?)
    }

    pub fn table_learning(&self, stream: SeedStream, cycles: usize) -> TableLearning {
        TableLearning {
            cycles,
            steps_per_cycle: self.sim.steps_per_cycle,
            zero_stand: self.dynamics.zero_stand,
            seed: derive_seed(self.seed, stream),
        }
    }

    /// Planner settings for the run with index `run` (goal or waypoint route).
    pub fn mpc_config(&self, run: u64) -> MpcConfig {
        let p = &self.planner;
        MpcConfig {
            horizon: p.horizon,
            variant: p.variant,
            goal_tolerance: p.goal_tolerance,
            max_cycles: p.max_cycles,
            steps_per_cycle: self.sim.steps_per_cycle,
            sum_rewards: p.sum_rewards,
            dropout_prob: p.dropout_prob,
            stall_recovery: p.stall_recovery,
            progress_window: p.progress_window,
            progress_margin: p.progress_margin,
            seed: derive_seed(self.seed, SeedStream::Planner).wrapping_add(run),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[sim]\nslipp = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("[training.forward.sac]\ngama = 0.9").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = ExperimentConfig::from_toml("[sim]\nslip = 1.5").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml("[training.turn]\nreward = \"sim-jump\"").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml("[training.forward.sac]\nsteps_per_cycle = 50").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn seed_streams_differ() {
        let a = derive_seed(0, SeedStream::SimNoise);
        let b = derive_seed(0, SeedStream::Table);
        let c = derive_seed(1, SeedStream::SimNoise);
        assert!(a != b && a != c);
        assert_eq!(a, derive_seed(0, SeedStream::SimNoise));
    }
}
