use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{coverage_fraction, evaluate, sample_starts, ProtocolError};
use crate::hitl::{oracle_action, PolicyMode};
use crate::learn::{reward_regression, weighted_nll, WeightedStep};
use crate::net::{Head, NetConfig, NetParams, Optimizer};
use crate::rng::{self, streams};
use crate::world::{Episode, MultiDiscreteAction, RiverWorld, StartSpec, JOINT_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoviceConfig {
    /// Probability of replacing the oracle action by a uniform joint action.
    pub epsilon: f64,
    /// Demonstration steps collected.
    pub bc_steps: usize,
    /// Coverage fraction from the default start that ends pretraining.
    pub target_coverage: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Minibatch updates between competence checks.
    pub check_every: usize,
    pub lr: f64,
}

impl Default for NoviceConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            bc_steps: 2000,
            target_coverage: 0.3,
            max_epochs: 200,
            batch_size: 32,
            check_every: 4,
            lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoviceOutcome {
    pub params: NetParams,
    /// Minibatch updates until the competence bar was met.
    pub updates: usize,
    /// Greedy coverage fraction from the default start.
    pub coverage: f64,
    pub demo_steps: usize,
}

/// A demonstration step: latent, executed action, true reward.
struct Demo {
    latent: Vec<f64>,
    action: MultiDiscreteAction,
    reward: f64,
}

/// Rollouts of the ε-corrupted oracle from the default start and from
/// sampled starts, until `bc_steps` steps are collected.
fn collect_demos(world: &RiverWorld, net: &NetParams, cfg: &NoviceConfig, seed: u64) -> Result<Vec<Demo>, ProtocolError> {
    let mut rng = rng::stream(seed, streams::CORRUPTION);
    let mut demos = Vec::with_capacity(cfg.bc_steps);
    let mut episode = 0u64;
    while demos.len() < cfg.bc_steps {
        let start = if episode == 0 {
            StartSpec::default()
        } else {
            sample_starts(world, 1, seed ^ episode.wrapping_mul(0x9e37_79b9_7f4a_7c15))?[0]
        };
        let mut ep = Episode::start(world, &start)?;
        let mut z = net.initial_latent();
        while !ep.is_terminated() && demos.len() < cfg.bc_steps {
            z = net.encode_step(&z, &ep.observation)?;
            let action = if rng.random::<f64>() < cfg.epsilon {
                MultiDiscreteAction::from_joint_index(rng.random_range(0..JOINT_ACTIONS))?
            } else {
                oracle_action(world, &ep.pose, &ep.coverage)
            };
            let out = ep.step(world, action)?;
            demos.push(Demo {
                latent: z.0.clone(),
                action,
                reward: out.reward,
            });
        }
        episode += 1;
    }
    Ok(demos)
}

/// Behavior cloning of both heads on corrupted-oracle demonstrations, stopped
/// at the first check whose greedy policy covers `target_coverage` of the
/// river from the default start.
pub fn pretrain_novice(
    world: &RiverWorld,
    net_config: NetConfig,
    cfg: &NoviceConfig,
    seed: u64,
) -> Result<NoviceOutcome, ProtocolError> {
    let mut net = NetParams::init(net_config, seed);
    let demos = collect_demos(world, &net, cfg, seed)?;
    let mut popt = Optimizer::adam(net.policy.params().len());
    let mut ropt = Optimizer::adam(net.reward.params().len());
    let default_start = [StartSpec::default()];
    let mut coverage = 0.0;
    let mut updates = 0;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.shuffle(&mut rng::indexed_stream(seed, streams::SHUFFLE_BC, epoch as u64));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| WeightedStep {
                    latent: &demos[i].latent,
                    action: demos[i].action,
                    weight: 1.0 / chunk.len() as f64,
                })
                .collect();
            let mut g = weighted_nll(&net, &batch).grad;
            net.apply_gradient(Head::Policy, &mut g, &mut popt, cfg.lr)?;
            let samples: Vec<_> = chunk
                .iter()
                .map(|&i| (demos[i].latent.as_slice(), demos[i].action, demos[i].reward))
                .collect();
            let mut g = reward_regression(&net, &samples).grad;
            net.apply_gradient(Head::Reward, &mut g, &mut ropt, cfg.lr)?;
            updates += 1;
            if updates % cfg.check_every.max(1) != 0 {
                continue;
            }
            let eval = evaluate(world, &net, &default_start, seed, PolicyMode::Greedy)?;
            coverage = coverage_fraction(world, &eval[0]);
            if coverage >= cfg.target_coverage {
                return Ok(NoviceOutcome {
                    params: net,
                    updates,
                    coverage,
                    demo_steps: demos.len(),
                });
            }
        }
    }
    Err(ProtocolError::NoviceFailed {
        updates,
        coverage,
    })
}
