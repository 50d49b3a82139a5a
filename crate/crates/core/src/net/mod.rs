//! Frozen recurrent encoder with a factorized-categorical policy head and an
//! immediate-reward head.
//!
//! The GRU encoder is randomly initialized from a recorded seed and never
//! trained, so only the two heads carry gradients. Heads are two-layer tanh
//! perceptrons with hand-written backward passes.

mod gru;
mod mlp;
mod optim;
mod policy;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

pub use gru::Gru;
pub(crate) use gru::sigmoid;
pub use mlp::{Mlp, MlpTrace};
pub use optim::{clip_norm, Optimizer, OptimizerKind, GRAD_CLIP_NORM};
pub use policy::ActionDistribution;

use crate::rng::{self, streams};
use crate::world::{MultiDiscreteAction, Observation, MASK_CELLS, ONE_HOT_LEN};

/// Encoder input: 256 mask bits followed by the 12-way previous-action one-hot.
pub const OBS_INPUT_DIM: usize = MASK_CELLS + ONE_HOT_LEN;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite values in {tensor}")]
    NonFinite { tensor: &'static str },
    #[error("missing or malformed tensor {0}")]
    Tensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            head_hidden: 64,
        }
    }
}

/// Which trainable head a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Policy,
    Reward,
}

impl Head {
    pub fn tensor_name(self) -> &'static str {
        match self {
            Head::Policy => "policy_head",
            Head::Reward => "reward_head",
        }
    }
}

/// Recurrent latent `z_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState(pub Vec<f64>);

impl LatentState {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// FNV-1a over the bit patterns, for audit logs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// A named row-major tensor, the unit of checkpoint persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub encoder: Gru,
    pub policy: Mlp,
    pub reward: Mlp,
    pub frozen_encoder: bool,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
}

/// Builds the encoder input for an observation.
pub fn observation_input(obs: &Observation) -> Vec<f64> {
    let mut x = vec![0.0; OBS_INPUT_DIM];
    for (v, &c) in x.iter_mut().zip(obs.mask.cells().iter()) {
        *v = c as f64;
    }
    obs.prev_action.write_one_hot(&mut x[MASK_CELLS..]);
    x
}

fn fill_uniform<R: Rng>(rng: &mut R, out: &mut [f64], bound: f64) {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    out.iter_mut().for_each(|v| *v = dist.sample(rng));
}

/// Row-orthonormal `n × n` matrix from Gram–Schmidt on a Gaussian draw.
fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
            for k in 0..n {
                m[i * n + k] -= dot * m[j * n + k];
            }
        }
        let norm = libm::sqrt((0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>());
        for k in 0..n {
            m[i * n + k] /= norm;
        }
    }
    m
}

impl NetParams {
    /// Randomly initialized network: Xavier-uniform encoder inputs,
    /// orthogonal recurrent blocks, small-output policy head and a reward
    /// head whose output layer starts at zero.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let h = config.hidden;
        let mut encoder = Gru::zeros(OBS_INPUT_DIM, h);
        let mut r = rng::stream(seed, streams::INIT_ENCODER);
        fill_uniform(
            &mut r,
            &mut encoder.w_input,
            libm::sqrt(6.0 / (OBS_INPUT_DIM + h) as f64),
        );
        for gate in 0..3 {
            let block = orthogonal(&mut r, h);
            encoder.w_hidden[gate * h * h..(gate + 1) * h * h].copy_from_slice(&block);
        }

        let mut policy = Mlp::zeros(h, config.head_hidden, ONE_HOT_LEN);
        let mut r = rng::stream(seed, streams::INIT_POLICY);
        let b1 = libm::sqrt(6.0 / (h + config.head_hidden) as f64);
        fill_uniform(&mut r, policy.w1_mut(), b1);
        fill_uniform(&mut r, policy.w2_mut(), 0.1 / libm::sqrt(config.head_hidden as f64));

        let reward_in = h + ONE_HOT_LEN;
        let mut reward = Mlp::zeros(reward_in, config.head_hidden, 1);
        let mut r = rng::stream(seed, streams::INIT_REWARD);
        let b1 = libm::sqrt(6.0 / (reward_in + config.head_hidden) as f64);
        fill_uniform(&mut r, reward.w1_mut(), b1);

        Self {
            config,
            encoder,
            policy,
            reward,
            frozen_encoder: true,
            init_seed: seed,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.hidden
    }

    pub fn initial_latent(&self) -> LatentState {
        LatentState::zeros(self.config.hidden)
    }

    /// GRU step on a raw input vector.
    pub fn encode_input(&self, z_prev: &LatentState, input: &[f64]) -> Result<LatentState, NetError> {
        if input.len() != self.encoder.input() {
            return Err(NetError::Dimension {
                what: "encoder input",
                expected: self.encoder.input(),
                got: input.len(),
            });
        }
        if z_prev.0.len() != self.encoder.hidden() {
            return Err(NetError::Dimension {
                what: "latent",
                expected: self.encoder.hidden(),
                got: z_prev.0.len(),
            });
        }
        Ok(LatentState(self.encoder.step(&z_prev.0, input)))
    }

    pub fn encode_step(&self, z_prev: &LatentState, obs: &Observation) -> Result<LatentState, NetError> {
        self.encode_input(z_prev, &observation_input(obs))
    }

    /// Latents along an executed observation history, starting from zeros.
    pub fn encode_history<'a, I>(&self, observations: I) -> Result<Vec<LatentState>, NetError>
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let mut z = self.initial_latent();
        let mut out = Vec::new();
        for obs in observations {
            z = self.encode_step(&z, obs)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), NetError> {
        if z.len() != self.policy.input() {
            return Err(NetError::Dimension {
                what: "latent",
                expected: self.policy.input(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn distribution(&self, z: &[f64]) -> Result<ActionDistribution, NetError> {
        self.check_latent(z)?;
        Ok(ActionDistribution::from_logits(&self.policy.forward(z).out))
    }

    /// Samples an action (each branch independently) and returns its joint
    /// log-probability.
    pub fn act<R: Rng + ?Sized>(
        &self,
        z: &LatentState,
        rng: &mut R,
    ) -> Result<(ActionDistribution, MultiDiscreteAction, f64), NetError> {
        let dist = self.distribution(&z.0)?;
        let a = dist.sample(rng);
        let lp = dist.log_prob(&a);
        Ok((dist, a, lp))
    }

    pub fn act_greedy(&self, z: &LatentState) -> Result<(ActionDistribution, MultiDiscreteAction, f64), NetError> {
        let dist = self.distribution(&z.0)?;
        let a = dist.greedy();
        let lp = dist.log_prob(&a);
        Ok((dist, a, lp))
    }

    pub fn reward_input(z: &[f64], a: &MultiDiscreteAction) -> Vec<f64> {
        let mut x = Vec::with_capacity(z.len() + ONE_HOT_LEN);
        x.extend_from_slice(z);
        x.extend_from_slice(&a.one_hot());
        x
    }

    /// `R_φ(z, a)`.
    pub fn reward_estimate(&self, z: &[f64], a: &MultiDiscreteAction) -> Result<f64, NetError> {
        self.check_latent(z)?;
        Ok(self.reward.forward(&Self::reward_input(z, a)).out[0])
    }

    /// Reward estimates for all 81 joint actions, in joint-index order.
    pub fn reward_estimates(&self, z: &[f64]) -> Result<Vec<f64>, NetError> {
        MultiDiscreteAction::all()
            .map(|a| self.reward_estimate(z, &a))
            .collect()
    }

    pub fn head(&self, head: Head) -> &Mlp {
        match head {
            Head::Policy => &self.policy,
            Head::Reward => &self.reward,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut Mlp {
        match head {
            Head::Policy => &mut self.policy,
            Head::Reward => &mut self.reward,
        }
    }

    /// Applies one optimizer step to a head.
    pub fn apply_gradient(
        &mut self,
        head: Head,
        grad: &mut [f64],
        optimizer: &mut Optimizer,
        lr: f64,
    ) -> Result<(), NetError> {
        let params = self.head_mut(head).params_mut();
        if grad.len() != params.len() {
            return Err(NetError::Dimension {
                what: head.tensor_name(),
                expected: params.len(),
                got: grad.len(),
            });
        }
        optimizer.step(params, grad, lr, head.tensor_name())
    }

    pub fn is_finite(&self) -> bool {
        self.encoder
            .w_input
            .iter()
            .chain(&self.encoder.w_hidden)
            .chain(&self.encoder.bias)
            .chain(self.policy.params())
            .chain(self.reward.params())
            .all(|v| v.is_finite())
    }

    /// All tensors in a fixed order with row-major payloads.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let h = self.config.hidden;
        let e = &self.encoder;
        let mut out = vec![
            Tensor {
                name: "encoder.w_input".into(),
                shape: vec![3 * h, e.input],
                data: e.w_input.clone(),
            },
            Tensor {
                name: "encoder.w_hidden".into(),
                shape: vec![3 * h, h],
                data: e.w_hidden.clone(),
            },
            Tensor {
                name: "encoder.bias".into(),
                shape: vec![3 * h],
                data: e.bias.clone(),
            },
        ];
        for (prefix, m) in [("policy", &self.policy), ("reward", &self.reward)] {
            out.push(Tensor {
                name: alloc::format!("{prefix}.params"),
                shape: vec![m.params().len()],
                data: m.params().to_vec(),
            });
        }
        out
    }

    /// Inverse of [`Self::to_tensors`].
    pub fn from_tensors(
        config: NetConfig,
        frozen_encoder: bool,
        init_seed: u64,
        tensors: &[Tensor],
    ) -> Result<Self, NetError> {
        let mut net = Self {
            config,
            encoder: Gru::zeros(OBS_INPUT_DIM, config.hidden),
            policy: Mlp::zeros(config.hidden, config.head_hidden, ONE_HOT_LEN),
            reward: Mlp::zeros(config.hidden + ONE_HOT_LEN, config.head_hidden, 1),
            frozen_encoder,
            init_seed,
        };
        let reference = net.to_tensors();
        if tensors.len() != reference.len() {
            return Err(NetError::Tensor(alloc::format!(
                "expected {} tensors, found {}",
                reference.len(),
                tensors.len()
            )));
        }
        for (want, got) in reference.iter().zip(tensors) {
            if want.name != got.name || want.shape != got.shape || want.data.len() != got.data.len() {
                return Err(NetError::Tensor(want.name.clone()));
            }
        }
        net.encoder.w_input.copy_from_slice(&tensors[0].data);
        net.encoder.w_hidden.copy_from_slice(&tensors[1].data);
        net.encoder.bias.copy_from_slice(&tensors[2].data);
        net.policy.params_mut().copy_from_slice(&tensors[3].data);
        net.reward.params_mut().copy_from_slice(&tensors[4].data);
        if !net.is_finite() {
            return Err(NetError::NonFinite { tensor: "checkpoint" });
        }
        Ok(net)
    }
}
