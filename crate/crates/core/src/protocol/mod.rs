//! The budgeted experiment protocol: novice pretraining, overseen rollouts
//! with sequential retraining and checkpointing, evaluation and report
//! tables.

mod novice;
mod report;

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use novice::{pretrain_novice, NoviceConfig, NoviceOutcome};
pub use report::{
    intervention_table, mean_std, reward_dump, InterventionRow, InterventionTable, RewardDumpRow,
};

use crate::hitl::{run_episode, HitlError, PassiveOverseer, PolicyMode, ReplayBuffer, ScriptedOverseer, Trajectory};
use crate::learn::{retrain, HyperParams, LearnError, LossReport, Method};
use crate::net::{NetConfig, NetError, NetParams};
use crate::rng::{self, streams};
use crate::world::{RiverWorld, StartSpec, TerminationReason, WorldError, WorldSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Hitl(#[from] HitlError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("invalid experiment configuration: {0}")]
    Config(&'static str),
    #[error("novice reached only {coverage:.3} coverage after {updates} updates; collect more cloning steps")]
    NoviceFailed { updates: usize, coverage: f64 },
    #[error("shared rollouts requested but the shared buffer has {got} of {needed} episodes")]
    MissingSharedBuffer { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub methods: Vec<Method>,
    pub hyper: HyperParams,
    pub net: NetConfig,
    pub novice: NoviceConfig,
    pub num_episodes: usize,
    /// One start per episode; evaluation of the final checkpoint uses all.
    pub starts: Vec<StartSpec>,
    pub seed: u64,
    pub rollout_mode: PolicyMode,
    pub eval_mode: PolicyMode,
    /// Every method consumes the same novice-collected buffer.
    pub shared_rollouts: bool,
    pub stall_window: usize,
    /// Steps between online retrains in live sessions.
    pub online_retrain_interval: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults with starts sampled from `seed`.
    pub fn new(world: WorldSpec, seed: u64) -> Result<Self, ProtocolError> {
        let rw = RiverWorld::new(world.clone())?;
        let num_episodes = 5;
        Ok(Self {
            starts: sample_starts(&rw, num_episodes, seed)?,
            world,
            methods: Method::ALL.to_vec(),
            hyper: HyperParams::default(),
            net: NetConfig::default(),
            novice: NoviceConfig::default(),
            num_episodes,
            seed,
            rollout_mode: PolicyMode::Sampled,
            eval_mode: PolicyMode::Greedy,
            shared_rollouts: true,
            stall_window: crate::hitl::DEFAULT_STALL_WINDOW,
            online_retrain_interval: None,
        })
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.starts.len() != self.num_episodes {
            return Err(ProtocolError::Config("start count must equal num_episodes"));
        }
        if self.methods.is_empty() {
            return Err(ProtocolError::Config("methods must be nonempty"));
        }
        if self.num_episodes == 0 {
            return Err(ProtocolError::Config("num_episodes must be positive"));
        }
        self.hyper.validate()?;
        Ok(())
    }
}

/// Seeded initial conditions in the upstream 40% of the river, with small
/// lateral, altitude and heading perturbations.
pub fn sample_starts(world: &RiverWorld, n: usize, seed: u64) -> Result<Vec<StartSpec>, ProtocolError> {
    let mut rng = rng::stream(seed, streams::STARTS);
    let upper = (world.segment_count() * 2 / 5).max(1);
    let spec = world.spec();
    let lateral = (spec.width / 2.0 * 0.4).min(spec.corridor_half_width);
    let mid = 0.5 * (spec.z_min + spec.z_max);
    let dz = (0.25 * (spec.z_max - spec.z_min)).min(1.0);
    let yaw = spec.yaw_limit_deg.min(20.0);
    (0..n)
        .map(|_| {
            let s = StartSpec {
                segment_index: rng.random_range(0..upper),
                lateral_offset: rng.random_range(-lateral..=lateral),
                z: rng.random_range(mid - dz..=mid + dz),
                yaw_offset: rng.random_range(-yaw..=yaw),
            };
            world.start_pose(&s)?;
            Ok(s)
        })
        .collect()
}

/// Outcome of one evaluation rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub start: StartSpec,
    pub reward: f64,
    pub steps: usize,
    pub termination: TerminationReason,
}

/// Fraction of the river covered in an evaluation episode, counting the
/// start segment.
pub fn coverage_fraction(world: &RiverWorld, e: &EvalEpisode) -> f64 {
    (e.reward + 1.0) / world.segment_count() as f64
}

/// Overseer-free rollouts, one per start.
pub fn evaluate(
    world: &RiverWorld,
    net: &NetParams,
    starts: &[StartSpec],
    seed: u64,
    mode: PolicyMode,
) -> Result<Vec<EvalEpisode>, ProtocolError> {
    starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let tr = run_episode(world, net, &mut PassiveOverseer, *s, i as u32, seed, mode)?;
            Ok(EvalEpisode {
                start: *s,
                reward: tr.totals.episodic_reward,
                steps: tr.totals.steps,
                termination: tr.termination(),
            })
        })
        .collect()
}

/// One HITL rollout per start, collected with fixed parameters under the
/// scripted overseer.
pub fn collect_rollouts(
    world: &RiverWorld,
    net: &NetParams,
    cfg: &ExperimentConfig,
) -> Result<ReplayBuffer, ProtocolError> {
    let mut buffer = ReplayBuffer::new();
    for (ep, start) in cfg.starts.iter().enumerate() {
        let mut overseer = ScriptedOverseer::new(cfg.stall_window);
        buffer.push(run_episode(world, net, &mut overseer, *start, ep as u32, cfg.seed, cfg.rollout_mode)?);
    }
    Ok(buffer)
}

/// A saved checkpoint and the diagnostics that produced it.
#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub id: usize,
    /// Episode index the checkpoint was taken after.
    pub episode: usize,
    pub params: NetParams,
    pub reports: Vec<LossReport>,
    pub hyper: HyperParams,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub method: Method,
    pub checkpoints: Vec<CheckpointRecord>,
    pub buffer: ReplayBuffer,
    /// Reward of each checkpoint on the start of the episode just trained on.
    pub per_checkpoint: Vec<EvalEpisode>,
    /// Final checkpoint on every start.
    pub final_eval: Vec<EvalEpisode>,
}

impl ProtocolRun {
    pub fn final_rewards(&self) -> Vec<f64> {
        self.final_eval.iter().map(|e| e.reward).collect()
    }
}

/// Shuffle seed for the retrain after episode `ep`.
pub fn retrain_seed(seed: u64, ep: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (ep as u64 + 1)
}

/// Sequential retraining over a growing buffer: for each episode, collect
/// (or take from `shared`) its trajectory, retrain on everything so far,
/// save a checkpoint and evaluate it on that episode's start.
pub fn run_protocol(
    world: &RiverWorld,
    novice: &NetParams,
    cfg: &ExperimentConfig,
    method: Method,
    shared: Option<&ReplayBuffer>,
) -> Result<ProtocolRun, ProtocolError> {
    cfg.validate()?;
    if cfg.shared_rollouts {
        let got = shared.map_or(0, ReplayBuffer::len);
        if got < cfg.num_episodes {
            return Err(ProtocolError::MissingSharedBuffer {
                needed: cfg.num_episodes,
                got,
            });
        }
    }
    let mut params = novice.clone();
    let mut buffer = ReplayBuffer::new();
    let mut checkpoints = Vec::with_capacity(cfg.num_episodes);
    let mut per_checkpoint = Vec::with_capacity(cfg.num_episodes);
    for ep in 0..cfg.num_episodes {
        let trajectory: Trajectory = match (cfg.shared_rollouts, shared) {
            (true, Some(s)) => s.trajectories()[ep].clone(),
            _ => {
                let mut overseer = ScriptedOverseer::new(cfg.stall_window);
                run_episode(world, &params, &mut overseer, cfg.starts[ep], ep as u32, cfg.seed, cfg.rollout_mode)?
            }
        };
        buffer.push(trajectory);
        let hyper = HyperParams {
            seed: retrain_seed(cfg.seed, ep),
            ..cfg.hyper
        };
        let out = retrain(method, &buffer, &params, &hyper)?;
        params = out.params;
        per_checkpoint.push(evaluate(world, &params, &cfg.starts[ep..=ep], cfg.seed, cfg.eval_mode)?[0]);
        checkpoints.push(CheckpointRecord {
            id: ep,
            episode: ep,
            params: params.clone(),
            reports: out.reports,
            hyper,
        });
    }
    let final_eval = evaluate(world, &params, &cfg.starts, cfg.seed, cfg.eval_mode)?;
    Ok(ProtocolRun {
        method,
        checkpoints,
        buffer,
        per_checkpoint,
        final_eval,
    })
}
