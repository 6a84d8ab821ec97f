//! Soft actor-critic with a KL penalty towards a periodically refreshed
//! snapshot of the policy.
//!
//! Critics see `(phase, normalised action)` where the normalised action is
//! `tanh(x)` in [-1, 1]^18. Rewards are cached per registered reward so a
//! buffer collected for one primitive can be relabelled for another.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::nn::{Adam, Mlp};
use crate::policy::{log_tanh_jacobian, normalize, ActionMode, HeadBatch, Policy, Primitive};
use crate::rewards::LowLevelReward;
use crate::robot::{JointVector, JOINT_COUNT};
use crate::sim::{SimState, Simulator, StepFeatures};

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("truncated replay buffer file".into()));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub const BUFFER_MAGIC: &[u8; 8] = b"PWREPLAY";
pub const BUFFER_FORMAT_VERSION: u32 = 1;
pub const CRITIC_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub phase: f64,
    pub action: JointVector,
    pub features: StepFeatures,
    pub next_phase: f64,
    pub done: bool,
    /// One entry per reward registered in the owning buffer.
    pub rewards: Vec<f64>,
}

/// FIFO ring buffer with uniform seeded sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    inserted: u64,
    rewards: Vec<LowLevelReward>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            data: Vec::new(),
            next: 0,
            inserted: 0,
            rewards: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.data
    }

    pub fn registered(&self) -> &[LowLevelReward] {
        &self.rewards
    }

    /// Registers a reward (or finds an identical one) and returns its index.
    /// Stored transitions get their cache entry computed immediately.
    pub fn register(&mut self, reward: LowLevelReward) -> usize {
        if let Some(i) = self.rewards.iter().position(|r| *r == reward) {
            return i;
        }
        self.rewards.push(reward);
        for t in &mut self.data {
            t.rewards.push(reward.evaluate(t.phase, &t.features));
        }
        self.rewards.len() - 1
    }

    pub fn push(
        &mut self,
        phase: f64,
        action: JointVector,
        features: StepFeatures,
        next_phase: f64,
        done: bool,
    ) {
        let rewards = self
            .rewards
            .iter()
            .map(|r| r.evaluate(phase, &features))
            .collect();
        let t = Transition {
            phase,
            action,
            features,
            next_phase,
            done,
            rewards,
        };
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Recomputes the cached reward `id` of every stored transition.
    pub fn relabel(&mut self, id: usize) -> Result<()> {
        let reward = *self
            .rewards
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("reward {id} not registered")))?;
        for t in &mut self.data {
            t.rewards[id] = reward.evaluate(t.phase, &t.features);
        }
        Ok(())
    }

    /// Transitions oldest first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(self.data[..split].iter())
    }

    /// Binary dump of the stored transitions (oldest first). Reward caches
    /// are not stored; they are recomputed when rewards are registered.
    ///
    /// Layout, little-endian: magic `PWREPLAY`, u32 version, u64 count, then
    /// per transition: phase, 18 action values, 3 displacement, 3 orientation
    /// and qdot_abs_sum (all f64), u8 stance count, f64 next phase, u8 done.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 226);
        out.extend_from_slice(BUFFER_MAGIC);
        out.extend_from_slice(&BUFFER_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        for t in self.iter_ordered() {
            put(&mut out, t.phase);
            for &a in &t.action {
                put(&mut out, a);
            }
            for &v in t.features.delta_x_com.iter().chain(&t.features.theta_com) {
                put(&mut out, v);
            }
            put(&mut out, t.features.qdot_abs_sum);
            out.push(t.features.stance_count);
            put(&mut out, t.next_phase);
            out.push(t.done as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], capacity: usize, seed: u64) -> Result<Self> {
        let mut buf = ReplayBuffer::new(capacity, seed)?;
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != BUFFER_MAGIC {
            return Err(Error::Format("not a replay buffer file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != BUFFER_FORMAT_VERSION {
            return Err(Error::Format(format!("replay buffer version {version} unsupported")));
        }
        let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        for _ in 0..count {
            let phase = r.f64()?;
            let mut action = [0.0; JOINT_COUNT];
            for a in &mut action {
                *a = r.f64()?;
            }
            let mut v = [0.0; 7];
            for x in &mut v {
                *x = r.f64()?;
            }
            let stance_count = r.take(1)?[0];
            let next_phase = r.f64()?;
            let done = match r.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Format(format!("bad done flag {other}"))),
            };
            let features = StepFeatures {
                delta_x_com: [v[0], v[1], v[2]],
                theta_com: [v[3], v[4], v[5]],
                qdot_abs_sum: v[6],
                stance_count,
            };
            buf.push(phase, action, features, next_phase, done);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after replay buffer".into()));
        }
        Ok(buf)
    }

    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        if self.data.is_empty() {
            return Err(Error::InvalidArgument("sampling from an empty buffer".into()));
        }
        let len = self.data.len();
        Ok((0..n).map(|_| self.rng.random_range(0..len)).collect())
    }

    pub fn sample(&mut self, n: usize, reward: usize, policy: &Policy, scale: f64) -> Result<Batch> {
        if reward >= self.rewards.len() {
            return Err(Error::InvalidArgument(format!("reward {reward} not registered")));
        }
        let idx = self.sample_indices(n)?;
        Ok(Batch::from_transitions(
            idx.iter().map(|&i| &self.data[i]),
            reward,
            policy,
            scale,
        ))
    }
}

/// Minibatch in critic-ready form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub phases: Vec<f64>,
    /// Actions mapped to [-1, 1] per joint, shape `(n, 18)`.
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_phases: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a>(
        items: impl Iterator<Item = &'a Transition>,
        reward: usize,
        policy: &Policy,
        scale: f64,
    ) -> Batch {
        let limits = policy.limits();
        let items: Vec<_> = items.collect();
        let n = items.len();
        let actions = Array2::from_shape_fn((n, JOINT_COUNT), |(i, j)| {
            normalize(items[i].action[j], limits[j]).clamp(-1.0, 1.0)
        });
        Batch {
            phases: items.iter().map(|t| t.phase).collect(),
            actions,
            rewards: items.iter().map(|t| scale * t.rewards[reward]).collect(),
            next_phases: items.iter().map(|t| t.next_phase).collect(),
            dones: items.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub alpha: f64,
    /// Temperature reached at the last iteration; `None` keeps `alpha` fixed.
    pub alpha_final: Option<f64>,
    pub kl_coef: f64,
    /// Target critic update rate: `target <- (1 - polyak) target + polyak online`.
    pub polyak: f64,
    pub batch_size: usize,
    pub grad_steps_per_cycle: usize,
    pub snapshot_interval: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub buffer_capacity: usize,
    /// Multiplies stored rewards before they enter the critic targets.
    pub reward_scale: f64,
    pub cycles_per_iteration: usize,
    pub steps_per_cycle: usize,
    pub init_log_std: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: 0.05,
            alpha_final: Some(0.0),
            kl_coef: 0.1,
            polyak: 0.005,
            batch_size: 128,
            grad_steps_per_cycle: 20,
            snapshot_interval: 10,
            policy_lr: 3e-4,
            critic_lr: 3e-4,
            buffer_capacity: 100_000,
            reward_scale: 20.0,
            cycles_per_iteration: 10,
            steps_per_cycle: 100,
            init_log_std: -2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.alpha_final.is_none_or(|a| a >= 0.0)) {
            return bad("temperature must be >= 0");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be >= 0");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak must be in (0, 1]");
        }
        if self.batch_size == 0 || self.snapshot_interval == 0 {
            return bad("batch size and snapshot interval must be positive");
        }
        if self.cycles_per_iteration == 0 || self.steps_per_cycle == 0 {
            return bad("cycles per iteration and steps per cycle must be positive");
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0 && self.reward_scale > 0.0) {
            return bad("learning rates and reward scale must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer capacity must be positive");
        }
        Ok(())
    }

    pub fn alpha_at(&self, iteration: usize, iterations: usize) -> f64 {
        match self.alpha_final {
            Some(end) if iterations > 1 => {
                let f = iteration as f64 / (iterations - 1) as f64;
                self.alpha + (end - self.alpha) * f
            }
            _ => self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    pub loss: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStats {
    pub loss: f64,
    pub kl: f64,
}

fn critic_input(phases: &[f64], actions: &Array2<f64>) -> Array2<f64> {
    let n = phases.len();
    let mut x = Array2::zeros((n, JOINT_COUNT + 1));
    for i in 0..n {
        x[[i, 0]] = phases[i];
        for j in 0..JOINT_COUNT {
            x[[i, j + 1]] = actions[[i, j]];
        }
    }
    x
}

/// Reparametrised sample from a head: pre-squash values, their tanh and
/// the standard normal draws used.
struct Sampled {
    x: Array2<f64>,
    y: Array2<f64>,
    eps: Array2<f64>,
    log_prob: Vec<f64>,
}

fn sample_head<R: Rng + ?Sized>(head: &HeadBatch, limits: &[(f64, f64)], rng: &mut R) -> Sampled {
    let (n, d) = head.mean.dim();
    let eps = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng));
    let x = &head.mean + &(head.log_std.mapv(f64::exp) * &eps);
    let y = x.mapv(f64::tanh);
    let log_range: f64 = limits.iter().map(|(lo, hi)| ((hi - lo) * 0.5).ln()).sum();
    let log_prob = (0..n)
        .map(|i| {
            let mut lp = -log_range;
            for j in 0..d {
                let e = eps[[i, j]];
                lp += -0.5 * e * e
                    - head.log_std[[i, j]]
                    - 0.918_938_533_204_672_7
                    - log_tanh_jacobian(x[[i, j]]);
            }
            lp
        })
        .collect();
    Sampled { x, y, eps, log_prob }
}

/// Closed-form `KL(N(m, s) || N(m_old, s_old))` summed over joints, per row.
fn gaussian_kl(head: &HeadBatch, old: &HeadBatch) -> Vec<f64> {
    let (n, d) = head.mean.dim();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let (m, s) = (head.mean[[i, j]], head.log_std[[i, j]]);
                    let (mo, so) = (old.mean[[i, j]], old.log_std[[i, j]]);
                    let var_ratio = (2.0 * (s - so)).exp();
                    let dm = (m - mo) * (-so).exp();
                    so - s + 0.5 * (var_ratio + dm * dm - 1.0)
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sac {
    pub config: SacConfig,
    pub policy: Policy,
    pub policy_old: Policy,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    policy_opt: Adam,
    critic_opts: [Adam; 2],
    rng: ChaCha8Rng,
    grad_steps: u64,
    pub alpha: f64,
}

impl Sac {
    pub fn new(policy: Policy, config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [JOINT_COUNT + 1, CRITIC_HIDDEN[0], CRITIC_HIDDEN[1], 1];
        let critics = [Mlp::new(&sizes, &mut rng)?, Mlp::new(&sizes, &mut rng)?];
        let n_params = policy.params().len();
        Ok(Self {
            policy_old: policy.clone(),
            policy,
            targets: critics.clone(),
            critic_opts: [
                Adam::new(critics[0].param_count(), config.critic_lr),
                Adam::new(critics[1].param_count(), config.critic_lr),
            ],
            critics,
            policy_opt: Adam::new(n_params, config.policy_lr),
            alpha: config.alpha,
            config,
            rng,
            grad_steps: 0,
        })
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    /// Freezes the current policy as the KL anchor.
    pub fn snapshot(&mut self) {
        self.policy_old = self.policy.clone();
    }

    /// Reseeds the sampling stream used inside updates.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn critic_values(&self, phases: &[f64], actions: &Array2<f64>) -> Result<[Vec<f64>; 2]> {
        let x = critic_input(phases, actions);
        let q0 = self.critics[0].predict(x.view())?;
        let q1 = self.critics[1].predict(x.view())?;
        Ok([q0.column(0).to_vec(), q1.column(0).to_vec()])
    }

    /// Regression of both critics towards the soft Bellman target, then a
    /// polyak step on the target critics.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<CriticStats> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let gamma = self.config.gamma;
        let targets: Vec<f64> = if gamma == 0.0 {
            batch.rewards.clone()
        } else {
            let head = self.policy.head_batch(&batch.next_phases)?;
            let s = sample_head(&head, self.policy.limits(), &mut self.rng);
            let x = critic_input(&batch.next_phases, &s.y);
            let q0 = self.targets[0].predict(x.view())?;
            let q1 = self.targets[1].predict(x.view())?;
            (0..n)
                .map(|i| {
                    let soft = q0[[i, 0]].min(q1[[i, 0]]) - self.alpha * s.log_prob[i];
                    let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                    batch.rewards[i] + gamma * cont * soft
                })
                .collect()
        };
        let x = critic_input(&batch.phases, &batch.actions);
        let mut loss = [0.0; 2];
        for k in 0..2 {
            let q = self.critics[k].forward_train(x.view())?;
            let mut g = Array2::zeros((n, 1));
            for i in 0..n {
                let err = q[[i, 0]] - targets[i];
                loss[k] += err * err / n as f64;
                g[[i, 0]] = 2.0 * err / n as f64;
            }
            if !loss[k].is_finite() {
                return Err(Error::Training(format!("critic {k} loss is not finite")));
            }
            let grads = self.critics[k].backward(g.view())?;
            self.critic_opts[k].step_mlp(&mut self.critics[k], &grads)?;
        }
        for k in 0..2 {
            self.critics[k].soft_update_into(&mut self.targets[k], self.config.polyak);
        }
        Ok(CriticStats { loss })
    }

    /// Flat gradient of the policy loss
    /// `mean[alpha log pi - min Q + kl_coef KL(pi || pi_old)]`.
    pub fn policy_gradient(&mut self, phases: &[f64]) -> Result<(Vec<f64>, PolicyStats)> {
        if self.policy.kind() != self.policy_old.kind()
            || self.policy.params().len() != self.policy_old.params().len()
        {
            return Err(Error::InvalidArgument(
                "snapshot policy has a different parametrisation".into(),
            ));
        }
        let n = phases.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let nf = n as f64;
        let head = self.policy.head_batch_train(phases)?;
        let old = self.policy_old.head_batch(phases)?;
        let s = sample_head(&head, self.policy.limits(), &mut self.rng);

        // dQmin / dy through whichever critic is smaller per sample
        let x = critic_input(phases, &s.y);
        let q0 = self.critics[0].forward_train(x.view())?;
        let q1 = self.critics[1].forward_train(x.view())?;
        let pick0: Vec<bool> = (0..n).map(|i| q0[[i, 0]] <= q1[[i, 0]]).collect();
        let mut dq_dy = Array2::zeros((n, JOINT_COUNT));
        let mut q_min_mean = 0.0;
        for k in 0..2 {
            let g = Array2::from_shape_fn((n, 1), |(i, _)| {
                if pick0[i] == (k == 0) {
                    1.0
                } else {
                    0.0
                }
            });
            let grads = self.critics[k].backward(g.view())?;
            let input = grads.input;
            for i in 0..n {
                if pick0[i] == (k == 0) {
                    for j in 0..JOINT_COUNT {
                        dq_dy[[i, j]] = input[[i, j + 1]];
                    }
                }
            }
        }
        for i in 0..n {
            q_min_mean += q0[[i, 0]].min(q1[[i, 0]]) / nf;
        }

        let kl = gaussian_kl(&head, &old);
        let alpha = self.alpha;
        let eta = self.config.kl_coef;
        let mut g_mean = Array2::zeros((n, JOINT_COUNT));
        let mut g_log_std = Array2::zeros((n, JOINT_COUNT));
        for i in 0..n {
            for j in 0..JOINT_COUNT {
                let y = s.y[[i, j]];
                let sigma = head.log_std[[i, j]].exp();
                let e = s.eps[[i, j]];
                let dq_dx = dq_dy[[i, j]] * (1.0 - y * y);
                let (m, ls) = (head.mean[[i, j]], head.log_std[[i, j]]);
                let (mo, lso) = (old.mean[[i, j]], old.log_std[[i, j]]);
                let inv_var_old = (-2.0 * lso).exp();
                let dkl_dm = (m - mo) * inv_var_old;
                let dkl_ds = -1.0 + (2.0 * (ls - lso)).exp();
                g_mean[[i, j]] = (alpha * 2.0 * y - dq_dx + eta * dkl_dm) / nf;
                g_log_std[[i, j]] =
                    (alpha * (-1.0 + 2.0 * y * sigma * e) - dq_dx * sigma * e + eta * dkl_ds) / nf;
            }
        }
        let grad = self.policy.head_backward(&head, &g_mean, &g_log_std)?;
        let mean_log_prob = s.log_prob.iter().sum::<f64>() / nf;
        let kl_mean = kl.iter().sum::<f64>() / nf;
        let loss = alpha * mean_log_prob - q_min_mean + eta * kl_mean;
        if !loss.is_finite() {
            return Err(Error::Training("policy loss is not finite".into()));
        }
        debug_assert_eq!(s.x.len_of(Axis(0)), n);
        Ok((grad, PolicyStats { loss, kl: kl_mean }))
    }

    pub fn policy_update(&mut self, batch: &Batch) -> Result<PolicyStats> {
        let (grad, stats) = self.policy_gradient(&batch.phases)?;
        let mut params = self.policy.params();
        self.policy_opt.step(&mut params, &grad)?;
        self.policy.set_params(&params)?;
        self.policy.project();
        Ok(stats)
    }

    /// One critic step and one policy step; refreshes the snapshot on the
    /// configured interval.
    pub fn update(&mut self, batch: &Batch) -> Result<(CriticStats, PolicyStats)> {
        if self.grad_steps % self.config.snapshot_interval as u64 == 0 {
            self.snapshot();
        }
        let c = self.critic_update(batch)?;
        let p = self.policy_update(batch)?;
        self.grad_steps += 1;
        Ok((c, p))
    }
}

/// Per-iteration learning statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Environment steps collected so far in this run.
    pub samples: u64,
    /// Mean undiscounted reward per cycle under the trained reward.
    pub mean_reward: f64,
    pub kl: f64,
    pub critic_loss: f64,
    /// Mean per-cycle displacement along the cycle-start heading (m).
    pub mean_forward: f64,
    /// Mean per-cycle heading change (rad).
    pub mean_turn: f64,
}

pub const CURVE_HEADER: [&str; 7] = [
    "iteration",
    "samples",
    "mean_reward",
    "kl",
    "critic_loss",
    "mean_forward",
    "mean_turn",
];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<IterationStats>,
    pub buffer: ReplayBuffer,
    pub state: SimState,
    /// Set when training stopped early; the curve holds completed iterations.
    pub error: Option<Error>,
}

/// Trains `policy` on `reward` for `iterations` iterations of
/// `cycles_per_iteration` stochastic cycles each. Each cycle is an episode
/// started from the origin pose (joints carry over between cycles).
/// `buffer` may already hold data, e.g. relabelled from another primitive.
pub fn train_primitive(
    sim: &Simulator,
    policy: Policy,
    reward: LowLevelReward,
    config: &SacConfig,
    iterations: usize,
    seed: u64,
    buffer: Option<ReplayBuffer>,
    mut on_iteration: impl FnMut(&IterationStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut buffer = match buffer {
        Some(b) => b,
        None => ReplayBuffer::new(config.buffer_capacity, seed ^ 0x5EED_B0FF)?,
    };
    let reward_id = buffer.register(reward);
    buffer.relabel(reward_id)?;
    let mut sac = Sac::new(policy, config.clone(), seed)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut state = sim.reset(Pose2::origin());
    let mut curve = Vec::with_capacity(iterations);
    let mut samples = 0u64;

    for it in 0..iterations {
        sac.alpha = config.alpha_at(it, iterations);
        let mut reward_sum = 0.0;
        let mut forward_sum = 0.0;
        let mut turn_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        for _ in 0..config.cycles_per_iteration {
            state.pose = Pose2::origin();
            let prim = Primitive::Policy(sac.policy.clone());
            let out = match sim.run_cycle(
                &state,
                &prim,
                config.steps_per_cycle,
                ActionMode::Stochastic,
                &mut act_rng,
            ) {
                Ok(o) => o,
                Err(e) => {
                    return Ok(TrainOutcome {
                        policy: sac.policy,
                        curve,
                        buffer,
                        state,
                        error: Some(e),
                    })
                }
            };
            for r in &out.steps {
                buffer.push(r.phase, r.q_des, r.features, r.next_phase, r.done);
                reward_sum += reward.evaluate(r.phase, &r.features);
            }
            samples += out.steps.len() as u64;
            let (dx, _) = out.delta.to_cartesian();
            forward_sum += dx;
            turn_sum += out.delta.beta;
            state = out.state;

            for _ in 0..config.grad_steps_per_cycle {
                if buffer.len() < config.batch_size {
                    break;
                }
                let batch =
                    buffer.sample(config.batch_size, reward_id, &sac.policy, config.reward_scale)?;
                match sac.update(&batch) {
                    Ok((c, p)) => {
                        loss_sum += 0.5 * (c.loss[0] + c.loss[1]);
                        kl_sum += p.kl;
                        updates += 1;
                    }
                    Err(e) => {
                        return Ok(TrainOutcome {
                            policy: sac.policy,
                            curve,
                            buffer,
                            state,
                            error: Some(e),
                        })
                    }
                }
            }
        }
        let cycles = config.cycles_per_iteration as f64;
        let per_update = |v: f64| if updates > 0 { v / updates as f64 } else { 0.0 };
        let stats = IterationStats {
            iteration: it,
            samples,
            mean_reward: reward_sum / cycles,
            kl: per_update(kl_sum),
            critic_loss: per_update(loss_sum),
            mean_forward: forward_sum / cycles,
            mean_turn: turn_sum / cycles,
        };
        on_iteration(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        policy: sac.policy,
        curve,
        buffer,
        state,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{NeuralPolicy, SinusoidalPolicy};
    use crate::robot::RobotModel;

    fn sinusoid(seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = RobotModel::default();
        let mut p = SinusoidalPolicy::random(m.limit_table(), &m.neutral_stance(), -1.0, &mut rng).unwrap();
        for j in 0..JOINT_COUNT {
            p.amplitude[j] = rng.random_range(-0.5..0.5);
            p.log_std[j] = rng.random_range(-1.5..-0.5);
        }
        Policy::Sinusoidal(p)
    }

    fn perturbed(mut sac: Sac, seed: u64) -> Sac {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = sac.policy.params();
        for v in &mut p {
            *v += rng.random_range(-0.05..0.05);
        }
        sac.policy.set_params(&p).unwrap();
        sac
    }

    fn loss_at(sac: &Sac, params: &[f64], phases: &[f64], seed: u64) -> f64 {
        let mut s = sac.clone();
        s.policy.set_params(params).unwrap();
        s.reseed(seed);
        s.policy_gradient(phases).unwrap().1.loss
    }

    fn check_policy_gradient(policy: Policy) {
        let config = SacConfig {
            alpha: 0.3,
            kl_coef: 0.7,
            ..Default::default()
        };
        let mut sac = Sac::new(policy, config, 4).unwrap();
        sac = perturbed(sac, 5);
        let phases: Vec<f64> = (1..=16).map(|k| k as f64 / 16.0).collect();
        let mut s = sac.clone();
        s.reseed(77);
        let (grad, _) = s.policy_gradient(&phases).unwrap();
        let params = sac.policy.params();
        let h = 1e-6;
        let stride = (params.len() / 60).max(1);
        let mut worst: f64 = 0.0;
        for i in (0..params.len()).step_by(stride) {
            let mut up = params.clone();
            up[i] += h;
            let mut dn = params.clone();
            dn[i] -= h;
            let fd = (loss_at(&sac, &up, &phases, 77) - loss_at(&sac, &dn, &phases, 77)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn sinusoid_policy_gradient_matches_finite_differences() {
        check_policy_gradient(sinusoid(1));
    }

    #[test]
    fn neural_policy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NeuralPolicy::random(RobotModel::default().limit_table(), &mut rng).unwrap();
        check_policy_gradient(Policy::Neural(p));
    }
}
