//! Cyclic primitive policies driven by a phase variable `t` in (0, 1].
//!
//! Both parametrisations expose the same tanh-squashed Gaussian over joint
//! targets: the pre-squash mean and log-std come from the policy, a sample
//! `x ~ N(mean, std)` is mapped into the joint range with
//! `lo + (hi - lo) (tanh(x) + 1) / 2`. For the sinusoid, the pre-squash mean is
//! chosen so that the squashed mean is exactly the sine wave.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};
use crate::robot::{mirror_leg, JointVector, JOINTS_PER_LEG, JOINT_COUNT, LEG_COUNT};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Largest sine amplitude a sinusoidal primitive may use (radians).
pub const AMPLITUDE_BOUND: f64 = 0.6;
/// Fraction of each joint range kept free between the sine wave and the limits.
const OFFSET_MARGIN: f64 = 0.02;
pub const NEURAL_HIDDEN: [usize; 2] = [64, 64];

pub type JointLimits = [(f64, f64); JOINT_COUNT];

/// Phase clock: step `k` of a `T`-step cycle emits `t = (k + 1) / T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseClock {
    steps_per_cycle: usize,
    step: usize,
}

impl PhaseClock {
    pub fn new(steps_per_cycle: usize) -> Result<Self> {
        if steps_per_cycle == 0 {
            return Err(Error::InvalidArgument("cycle needs at least one step".into()));
        }
        Ok(Self {
            steps_per_cycle,
            step: 0,
        })
    }

    pub fn steps_per_cycle(&self) -> usize {
        self.steps_per_cycle
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn phase(&self) -> f64 {
        phase_of(self.step, self.steps_per_cycle)
    }

    /// Moves to the next step; returns `true` when the cycle wrapped.
    pub fn advance(&mut self) -> bool {
        self.step += 1;
        if self.step == self.steps_per_cycle {
            self.step = 0;
            true
        } else {
            false
        }
    }
}

pub fn phase_of(step: usize, steps_per_cycle: usize) -> f64 {
    (step + 1) as f64 / steps_per_cycle as f64
}

fn check_phase(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("phase {t} outside (0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub q_des: JointVector,
    /// Exact log-density of `q_des`; only set for stochastic samples.
    pub log_prob: Option<f64>,
}

pub fn squash(x: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * (x.tanh() + 1.0) * 0.5
}

/// Position of `a` in its range mapped to [-1, 1].
pub fn normalize(a: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (a - lo) / (hi - lo) - 1.0
}

pub fn unsquash(a: f64, limits: (f64, f64)) -> f64 {
    normalize(a, limits).atanh()
}

/// `ln(1 - tanh(x)^2)` without cancellation for large `|x|`.
pub fn log_tanh_jacobian(x: f64) -> f64 {
    let ax = x.abs();
    2.0 * (std::f64::consts::LN_2 - ax - (-2.0 * ax).exp().ln_1p())
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Log-density of the squashed sample whose pre-squash value is `x`.
pub fn squashed_log_density(
    x: &[f64],
    mean: &[f64],
    log_std: &[f64],
    limits: &[(f64, f64)],
) -> f64 {
    let mut total = 0.0;
    for j in 0..x.len() {
        let z = (x[j] - mean[j]) * (-log_std[j]).exp();
        let (lo, hi) = limits[j];
        total += -0.5 * z * z - log_std[j] - HALF_LN_2PI
            - log_tanh_jacobian(x[j])
            - ((hi - lo) * 0.5).ln();
    }
    total
}

/// Batched Gaussian head output, shapes `(batch, 18)`.
#[derive(Debug, Clone)]
pub struct HeadBatch {
    pub phases: Vec<f64>,
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    /// False where the raw log-std was clamped, i.e. has zero gradient.
    pub log_std_active: Array2<bool>,
}

/// Sine-wave primitive: `q_j(t) = A_j sin(2 pi t + B_j) + C_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidalPolicy {
    pub amplitude: JointVector,
    pub phase: JointVector,
    pub offset: JointVector,
    pub log_std: JointVector,
    pub limits: JointLimits,
}

fn offset_bounds((lo, hi): (f64, f64)) -> (f64, f64) {
    let margin = OFFSET_MARGIN * (hi - lo);
    (lo + AMPLITUDE_BOUND + margin, hi - AMPLITUDE_BOUND - margin)
}

fn check_limits(limits: &JointLimits) -> Result<()> {
    for &(lo, hi) in limits {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("bad joint limits ({lo}, {hi})")));
        }
    }
    Ok(())
}

impl SinusoidalPolicy {
    pub const PARAMS: usize = 4 * JOINT_COUNT;

    /// Random initialisation around `neutral`: `A ~ U(-0.1, 0.1)`,
    /// `B ~ U(-pi, pi)`, constant exploration log-std.
    pub fn random<R: Rng + ?Sized>(
        limits: JointLimits,
        neutral: &JointVector,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let amp = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
        let ph = Uniform::new_inclusive(-PI, PI).expect("valid range");
        let mut p = Self {
            amplitude: std::array::from_fn(|_| amp.sample(rng)),
            phase: std::array::from_fn(|_| ph.sample(rng)),
            offset: *neutral,
            log_std: [init_log_std; JOINT_COUNT],
            limits,
        };
        p.validate_limits()?;
        p.project();
        Ok(p)
    }

    /// Zero amplitude at `offset`.
    pub fn constant(limits: JointLimits, offset: JointVector, log_std: f64) -> Result<Self> {
        let p = Self {
            amplitude: [0.0; JOINT_COUNT],
            phase: [0.0; JOINT_COUNT],
            offset,
            log_std: [log_std; JOINT_COUNT],
            limits,
        };
        p.validate_limits()?;
        p.check_bounds()?;
        Ok(p)
    }

    fn validate_limits(&self) -> Result<()> {
        check_limits(&self.limits)?;
        for &l in &self.limits {
            let (lo, hi) = offset_bounds(l);
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "joint range ({}, {}) too narrow for amplitude bound {AMPLITUDE_BOUND}",
                    l.0, l.1
                )));
            }
        }
        Ok(())
    }

    /// Checks amplitude, offset and log-std bounds without modifying anything.
    pub fn check_bounds(&self) -> Result<()> {
        for j in 0..JOINT_COUNT {
            let (lo, hi) = offset_bounds(self.limits[j]);
            let vals = [self.amplitude[j], self.phase[j], self.offset[j], self.log_std[j]];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sinusoid parameter"));
            }
            if self.amplitude[j].abs() > AMPLITUDE_BOUND
                || self.offset[j] < lo
                || self.offset[j] > hi
            {
                return Err(Error::InvalidArgument(format!(
                    "joint {j}: amplitude {} / offset {} outside bounds",
                    self.amplitude[j], self.offset[j]
                )));
            }
        }
        Ok(())
    }

    /// Clamps parameters back into their admissible boxes.
    pub fn project(&mut self) {
        for j in 0..JOINT_COUNT {
            let (lo, hi) = offset_bounds(self.limits[j]);
            self.amplitude[j] = self.amplitude[j].clamp(-AMPLITUDE_BOUND, AMPLITUDE_BOUND);
            self.offset[j] = self.offset[j].clamp(lo, hi);
            self.log_std[j] = self.log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// The deterministic sine-wave targets.
    pub fn mean_action(&self, t: f64) -> JointVector {
        let w = 2.0 * PI * t;
        std::array::from_fn(|j| self.amplitude[j] * (w + self.phase[j]).sin() + self.offset[j])
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::PARAMS);
        v.extend_from_slice(&self.amplitude);
        v.extend_from_slice(&self.phase);
        v.extend_from_slice(&self.offset);
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != Self::PARAMS {
            return Err(Error::Shape {
                expected: Self::PARAMS,
                actual: p.len(),
            });
        }
        let n = JOINT_COUNT;
        self.amplitude.copy_from_slice(&p[..n]);
        self.phase.copy_from_slice(&p[n..2 * n]);
        self.offset.copy_from_slice(&p[2 * n..3 * n]);
        self.log_std.copy_from_slice(&p[3 * n..]);
        Ok(())
    }

    /// Reflection across the body x-axis: legs swap with their mirror
    /// partner and the base joint's sine wave changes sign.
    pub fn mirror(&self) -> SinusoidalPolicy {
        let mut out = self.clone();
        for leg in 0..LEG_COUNT {
            let src = mirror_leg(leg) * JOINTS_PER_LEG;
            let dst = leg * JOINTS_PER_LEG;
            for k in 0..JOINTS_PER_LEG {
                let sign = if k == 0 { -1.0 } else { 1.0 };
                out.amplitude[dst + k] = sign * self.amplitude[src + k];
                out.phase[dst + k] = self.phase[src + k];
                out.offset[dst + k] = sign * self.offset[src + k];
                out.log_std[dst + k] = self.log_std[src + k];
                let (lo, hi) = self.limits[src + k];
                out.limits[dst + k] = if k == 0 { (-hi, -lo) } else { (lo, hi) };
            }
        }
        out
    }
}

/// Unstructured primitive: phase -> 64 -> 64 -> (18 means, 18 log-stds).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    pub net: Mlp,
    pub limits: JointLimits,
}

impl NeuralPolicy {
    pub fn random<R: Rng + ?Sized>(limits: JointLimits, rng: &mut R) -> Result<Self> {
        check_limits(&limits)?;
        let sizes = [1, NEURAL_HIDDEN[0], NEURAL_HIDDEN[1], 2 * JOINT_COUNT];
        Ok(Self {
            net: Mlp::new(&sizes, rng)?,
            limits,
        })
    }

    pub fn from_net(net: Mlp, limits: JointLimits) -> Result<Self> {
        check_limits(&limits)?;
        if net.input_dim() != 1 || net.output_dim() != 2 * JOINT_COUNT {
            return Err(Error::Shape {
                expected: 2 * JOINT_COUNT,
                actual: net.output_dim(),
            });
        }
        Ok(Self { net, limits })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Sinusoidal(SinusoidalPolicy),
    Neural(NeuralPolicy),
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Sinusoidal(_) => PolicyKind::Sinusoidal,
            Policy::Neural(_) => PolicyKind::Neural,
        }
    }

    pub fn limits(&self) -> &JointLimits {
        match self {
            Policy::Sinusoidal(p) => &p.limits,
            Policy::Neural(p) => &p.limits,
        }
    }

    /// Pre-squash mean and clamped log-std at phase `t`.
    pub fn gaussian(&self, t: f64) -> Result<(JointVector, JointVector)> {
        check_phase(t)?;
        let head = self.head_batch(&[t])?;
        Ok((
            std::array::from_fn(|j| head.mean[[0, j]]),
            std::array::from_fn(|j| head.log_std[[0, j]]),
        ))
    }

    /// Mean action (deterministic mode) or a squashed Gaussian sample with
    /// its exact log-density (stochastic mode).
    pub fn act<R: Rng + ?Sized>(&self, t: f64, mode: ActionMode, rng: &mut R) -> Result<Action> {
        check_phase(t)?;
        match (mode, self) {
            (ActionMode::Deterministic, Policy::Sinusoidal(p)) => Ok(Action {
                q_des: p.mean_action(t),
                log_prob: None,
            }),
            (ActionMode::Deterministic, Policy::Neural(p)) => {
                let (mean, _) = self.gaussian(t)?;
                Ok(Action {
                    q_des: std::array::from_fn(|j| squash(mean[j], p.limits[j])),
                    log_prob: None,
                })
            }
            (ActionMode::Stochastic, _) => {
                let (mean, log_std) = self.gaussian(t)?;
                let x: JointVector = std::array::from_fn(|j| {
                    let e: f64 = StandardNormal.sample(rng);
                    mean[j] + log_std[j].exp() * e
                });
                let limits = self.limits();
                Ok(Action {
                    q_des: std::array::from_fn(|j| squash(x[j], limits[j])),
                    log_prob: Some(squashed_log_density(&x, &mean, &log_std, limits)),
                })
            }
        }
    }

    /// Log-density of a joint target vector under the stochastic policy.
    pub fn log_prob(&self, t: f64, q_des: &JointVector) -> Result<f64> {
        let (mean, log_std) = self.gaussian(t)?;
        let limits = self.limits();
        let x: JointVector = std::array::from_fn(|j| unsquash(q_des[j], limits[j]));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("action on or outside the joint limits".into()));
        }
        Ok(squashed_log_density(&x, &mean, &log_std, limits))
    }

    /// Gaussian head for a batch of phases (inference only).
    pub fn head_batch(&self, phases: &[f64]) -> Result<HeadBatch> {
        match self {
            Policy::Sinusoidal(p) => Ok(sinusoid_head(p, phases)),
            Policy::Neural(p) => {
                let input = ArrayView2::from_shape((phases.len(), 1), phases)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let out = p.net.predict(input)?;
                Ok(split_neural_output(phases, out))
            }
        }
    }

    /// Gaussian head that keeps what [`Policy::head_backward`] needs.
    pub fn head_batch_train(&mut self, phases: &[f64]) -> Result<HeadBatch> {
        match self {
            Policy::Sinusoidal(p) => Ok(sinusoid_head(p, phases)),
            Policy::Neural(p) => {
                let input = ArrayView2::from_shape((phases.len(), 1), phases)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let out = p.net.forward_train(input)?;
                Ok(split_neural_output(phases, out))
            }
        }
    }

    /// Chains gradients w.r.t. the head outputs into a flat parameter
    /// gradient ordered like [`Policy::params`].
    pub fn head_backward(
        &mut self,
        head: &HeadBatch,
        grad_mean: &Array2<f64>,
        grad_log_std: &Array2<f64>,
    ) -> Result<Vec<f64>> {
        match self {
            Policy::Sinusoidal(p) => Ok(sinusoid_backward(p, head, grad_mean, grad_log_std)),
            Policy::Neural(p) => {
                let b = head.phases.len();
                let mut g = Array2::zeros((b, 2 * JOINT_COUNT));
                for i in 0..b {
                    for j in 0..JOINT_COUNT {
                        g[[i, j]] = grad_mean[[i, j]];
                        if head.log_std_active[[i, j]] {
                            g[[i, JOINT_COUNT + j]] = grad_log_std[[i, j]];
                        }
                    }
                }
                Ok(p.net.backward(g.view())?.flatten())
            }
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Policy::Sinusoidal(p) => p.params(),
            Policy::Neural(p) => p.net.params(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self {
            Policy::Sinusoidal(p) => p.set_params(params),
            Policy::Neural(p) => p.net.set_params(params),
        }
    }

    /// Re-imposes parameter constraints after an optimizer step.
    pub fn project(&mut self) {
        if let Policy::Sinusoidal(p) = self {
            p.project();
        }
    }

    pub fn mirror(&self) -> Result<Policy> {
        match self {
            Policy::Sinusoidal(p) => Ok(Policy::Sinusoidal(p.mirror())),
            Policy::Neural(_) => Err(Error::Unsupported("mirroring a neural policy")),
        }
    }
}

fn sinusoid_head(p: &SinusoidalPolicy, phases: &[f64]) -> HeadBatch {
    let b = phases.len();
    let mut mean = Array2::zeros((b, JOINT_COUNT));
    let mut log_std = Array2::zeros((b, JOINT_COUNT));
    for (i, &t) in phases.iter().enumerate() {
        let q = p.mean_action(t);
        for j in 0..JOINT_COUNT {
            mean[[i, j]] = unsquash(q[j], p.limits[j]);
            log_std[[i, j]] = p.log_std[j].clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
    let active = Array2::from_shape_fn((b, JOINT_COUNT), |(_, j)| {
        (LOG_STD_MIN..=LOG_STD_MAX).contains(&p.log_std[j])
    });
    HeadBatch {
        phases: phases.to_vec(),
        mean,
        log_std,
        log_std_active: active,
    }
}

fn sinusoid_backward(
    p: &SinusoidalPolicy,
    head: &HeadBatch,
    grad_mean: &Array2<f64>,
    grad_log_std: &Array2<f64>,
) -> Vec<f64> {
    let n = JOINT_COUNT;
    let mut g = vec![0.0; SinusoidalPolicy::PARAMS];
    for (i, &t) in head.phases.iter().enumerate() {
        let w = 2.0 * PI * t;
        for j in 0..n {
            let (lo, hi) = p.limits[j];
            let angle = w + p.phase[j];
            let q = p.amplitude[j] * angle.sin() + p.offset[j];
            let u = normalize(q, (lo, hi));
            // d atanh(u(q)) / dq
            let dm_dq = 2.0 / ((hi - lo) * (1.0 - u * u));
            let gq = grad_mean[[i, j]] * dm_dq;
            g[j] += gq * angle.sin();
            g[n + j] += gq * p.amplitude[j] * angle.cos();
            g[2 * n + j] += gq;
            if head.log_std_active[[i, j]] {
                g[3 * n + j] += grad_log_std[[i, j]];
            }
        }
    }
    g
}

fn split_neural_output(phases: &[f64], out: Array2<f64>) -> HeadBatch {
    let b = phases.len();
    let mean = out.slice(ndarray::s![.., ..JOINT_COUNT]).to_owned();
    let raw = out.slice(ndarray::s![.., JOINT_COUNT..]);
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let active = raw.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
    debug_assert_eq!(mean.nrows(), b);
    HeadBatch {
        phases: phases.to_vec(),
        mean,
        log_std,
        log_std_active: active,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Sinusoidal,
    Neural,
}

// ---------------------------------------------------------------------------
// Policy files
//
// Layout (all integers and floats little-endian):
//   magic   8 bytes  "PWPOLICY"
//   version u32      POLICY_FORMAT_VERSION
//   kind    u8       1 = sinusoidal, 2 = neural
//   limits  36 x f64 (min, max) for each of the 18 joints
//   sinusoidal: u32 count (= 72), then A, B, C, log-std (18 x f64 each)
//   neural:     u32 layer-size count, u32 sizes..., u32 parameter count,
//               f64 parameters (per layer: weights row-major (in, out), bias)

pub const POLICY_MAGIC: &[u8; 8] = b"PWPOLICY";
pub const POLICY_FORMAT_VERSION: u32 = 1;

pub fn serialize(policy: &Policy) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(POLICY_MAGIC);
    out.extend_from_slice(&POLICY_FORMAT_VERSION.to_le_bytes());
    out.push(match policy {
        Policy::Sinusoidal(_) => 1,
        Policy::Neural(_) => 2,
    });
    for (lo, hi) in policy.limits() {
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
    }
    if let Policy::Neural(p) = policy {
        let sizes = p.net.sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
    }
    let params = policy.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated policy file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Policy> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != POLICY_MAGIC {
        return Err(Error::Format("not a policy file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != POLICY_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "policy format version {version} unsupported (expected {POLICY_FORMAT_VERSION})"
        )));
    }
    let kind = r.take(1)?[0];
    let mut limits = [(0.0, 0.0); JOINT_COUNT];
    for l in &mut limits {
        *l = (r.f64()?, r.f64()?);
    }
    let policy = match kind {
        1 => {
            let count = r.u32()? as usize;
            if count != SinusoidalPolicy::PARAMS {
                return Err(Error::Format(format!("sinusoid with {count} parameters")));
            }
            let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let mut p = SinusoidalPolicy {
                amplitude: [0.0; JOINT_COUNT],
                phase: [0.0; JOINT_COUNT],
                offset: [0.0; JOINT_COUNT],
                log_std: [0.0; JOINT_COUNT],
                limits,
            };
            p.set_params(&params)?;
            check_limits(&p.limits)?;
            Policy::Sinusoidal(p)
        }
        2 => {
            let n = r.u32()? as usize;
            if !(2..=16).contains(&n) {
                return Err(Error::Format(format!("implausible layer count {n}")));
            }
            let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let count = r.u32()? as usize;
            let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if count != expected {
                return Err(Error::Format(format!(
                    "parameter count {count} does not match layer sizes {sizes:?}"
                )));
            }
            let last = sizes.len() - 2;
            let mut layers = Vec::new();
            for (i, w) in sizes.windows(2).enumerate() {
                let weights = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let bias = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                layers.push(Dense {
                    weights: Array2::from_shape_vec((w[0], w[1]), weights)
                        .map_err(|e| Error::Format(e.to_string()))?,
                    bias: bias.into(),
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                });
            }
            Policy::Neural(NeuralPolicy::from_net(Mlp::from_layers(layers)?, limits)?)
        }
        other => return Err(Error::Format(format!("unknown policy kind tag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after policy",
            bytes.len() - r.pos
        )));
    }
    Ok(policy)
}

// ---------------------------------------------------------------------------
// Primitive library

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimitiveId {
    Forward = 0,
    TurnLeft = 1,
    TurnRight = 2,
    Stand = 3,
}

impl PrimitiveId {
    pub const ALL: [PrimitiveId; 4] = [
        PrimitiveId::Forward,
        PrimitiveId::TurnLeft,
        PrimitiveId::TurnRight,
        PrimitiveId::Stand,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveId::Forward => "forward",
            PrimitiveId::TurnLeft => "turn_left",
            PrimitiveId::TurnRight => "turn_right",
            PrimitiveId::Stand => "stand",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// A primitive is either a learned cyclic policy or "stand still", whose
/// target is always the current joint configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Policy(Policy),
    Stand,
}

impl Primitive {
    pub fn act<R: Rng + ?Sized>(
        &self,
        t: f64,
        current: &JointVector,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<Action> {
        match self {
            Primitive::Policy(p) => p.act(t, mode, rng),
            Primitive::Stand => {
                check_phase(t)?;
                Ok(Action {
                    q_des: *current,
                    log_prob: None,
                })
            }
        }
    }
}

/// The four primitives in fixed index order: forward, turn left, turn right
/// (the mirror of turn left), stand.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveLibrary {
    entries: [Primitive; 4],
}

impl PrimitiveLibrary {
    pub fn new(forward: Policy, turn_left: Policy) -> Result<Self> {
        let turn_right = turn_left.mirror()?;
        Ok(Self {
            entries: [
                Primitive::Policy(forward),
                Primitive::Policy(turn_left),
                Primitive::Policy(turn_right),
                Primitive::Stand,
            ],
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, id: PrimitiveId) -> &Primitive {
        &self.entries[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PrimitiveId, &Primitive)> {
        PrimitiveId::ALL.into_iter().zip(self.entries.iter())
    }
}
