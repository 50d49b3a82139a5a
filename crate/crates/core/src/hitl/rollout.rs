use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::net::{ActionDistribution, LatentState, NetError, NetParams};
use crate::rng::{self, streams, Rng};
use crate::world::{Episode, MultiDiscreteAction, Observation, RiverWorld, StartSpec, WorldError};

use super::overseer::terminal_is_unhandled;
use super::{DecisionContext, Overseer, OverseerDecision, ProposalScript, Trajectory, TransitionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Sampled,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HitlError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("overseer failed: {0}")]
    Overseer(String),
    #[error("overseer intervened without an override action")]
    MissingOverride,
    #[error("no proposal is pending")]
    NoProposal,
    #[error("a preference pair references step ({episode}, {t}) which is not an intervention")]
    NotIntervened { episode: u32, t: u32 },
}

/// The agent's proposal at the current step.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub t: u32,
    pub action: MultiDiscreteAction,
    pub distribution: ActionDistribution,
    pub latent: LatentState,
}

/// Step-by-step overseen rollout. [`run_episode`] drives it to completion;
/// the session server drives it one decision at a time.
#[derive(Debug, Clone)]
pub struct EpisodeRunner {
    episode: Episode,
    latent: LatentState,
    observation: Observation,
    rng: Rng,
    mode: PolicyMode,
    trajectory: Trajectory,
    pending: Option<Proposal>,
}

impl EpisodeRunner {
    pub fn new(
        world: &RiverWorld,
        net: &NetParams,
        start: StartSpec,
        episode_id: u32,
        seed: u64,
        mode: PolicyMode,
    ) -> Result<Self, HitlError> {
        let episode = Episode::start(world, &start)?;
        Ok(Self {
            observation: episode.observation,
            episode,
            latent: net.initial_latent(),
            rng: rng::indexed_stream(seed, streams::ROLLOUT, episode_id as u64),
            mode,
            trajectory: Trajectory::new(episode_id, start, seed),
            pending: None,
        })
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    pub fn is_done(&self) -> bool {
        self.episode.is_terminated()
    }

    pub fn pending(&self) -> Option<&Proposal> {
        self.pending.as_ref()
    }

    /// Encodes the current observation and proposes an action. Calling it
    /// again before [`execute`](Self::execute) returns the same proposal.
    pub fn propose(&mut self, net: &NetParams) -> Result<&Proposal, HitlError> {
        self.propose_with(net, None)
    }

    fn propose_with(&mut self, net: &NetParams, forced: Option<MultiDiscreteAction>) -> Result<&Proposal, HitlError> {
        if self.is_done() {
            return Err(HitlError::World(WorldError::Terminated));
        }
        if self.pending.is_none() {
            let z = net.encode_step(&self.latent, &self.observation)?;
            let (distribution, sampled, _) = match self.mode {
                PolicyMode::Sampled => net.act(&z, &mut self.rng)?,
                PolicyMode::Greedy => net.act_greedy(&z)?,
            };
            self.pending = Some(Proposal {
                t: self.episode.t as u32,
                action: forced.unwrap_or(sampled),
                distribution,
                latent: z,
            });
        }
        Ok(self.pending.as_ref().expect("proposal just stored"))
    }

    /// Executes the pending proposal under `decision` and records the step.
    pub fn execute(&mut self, world: &RiverWorld, decision: OverseerDecision) -> Result<&TransitionRecord, HitlError> {
        if !decision.is_valid() {
            return Err(HitlError::MissingOverride);
        }
        let proposal = self.pending.take().ok_or(HitlError::NoProposal)?;
        let m = decision.intervene;
        let a_exec = if m {
            decision.override_action.ok_or(HitlError::MissingOverride)?
        } else {
            proposal.action
        };
        let outcome = self.episode.step(world, a_exec)?;
        let record = TransitionRecord {
            episode_id: self.trajectory.episode_id,
            t: proposal.t,
            observation: self.observation,
            latent_fingerprint: proposal.latent.fingerprint(),
            a_agent: proposal.action,
            a_human: if m { decision.override_action } else { None },
            a_exec,
            m,
            reward: outcome.reward,
            terminated: outcome.terminated,
            termination_reason: outcome.termination_reason,
            excluded_from_training: outcome.terminated
                && terminal_is_unhandled(outcome.termination_reason, m),
        };
        self.latent = proposal.latent;
        self.observation = outcome.observation;
        self.trajectory.push(record);
        Ok(self.trajectory.records.last().expect("record just pushed"))
    }

    fn step_with(
        &mut self,
        world: &RiverWorld,
        net: &NetParams,
        overseer: &mut dyn Overseer,
        forced: Option<MultiDiscreteAction>,
    ) -> Result<(), HitlError> {
        self.propose_with(net, forced)?;
        let p = self.pending.as_ref().expect("proposal pending");
        let ctx = DecisionContext {
            world,
            episode_id: self.trajectory.episode_id,
            t: p.t,
            pose: &self.episode.pose,
            coverage: &self.episode.coverage,
            proposed: p.action,
            distribution: &p.distribution,
            net,
            latent: &p.latent,
        };
        let decision = overseer.decide(&ctx).map_err(HitlError::Overseer)?;
        self.execute(world, decision)?;
        let record = self.trajectory.records.last().expect("record just pushed");
        overseer.observe(record, &self.episode.pose, &self.episode.coverage);
        Ok(())
    }
}

/// Runs one overseen episode to termination.
pub fn run_episode(
    world: &RiverWorld,
    net: &NetParams,
    overseer: &mut dyn Overseer,
    start: StartSpec,
    episode_id: u32,
    seed: u64,
    mode: PolicyMode,
) -> Result<Trajectory, HitlError> {
    overseer.reset();
    let mut runner = EpisodeRunner::new(world, net, start, episode_id, seed, mode)?;
    while !runner.is_done() {
        runner.step_with(world, net, overseer, None)?;
    }
    Ok(runner.into_trajectory())
}

/// Runs an episode with scripted proposals, for replaying a logged session
/// whose proposals came from parameters that changed mid-episode.
pub fn replay_episode(
    world: &RiverWorld,
    net: &NetParams,
    overseer: &mut dyn Overseer,
    proposals: &ProposalScript,
    start: StartSpec,
    episode_id: u32,
    seed: u64,
) -> Result<Trajectory, HitlError> {
    overseer.reset();
    let mut runner = EpisodeRunner::new(world, net, start, episode_id, seed, PolicyMode::Greedy)?;
    let mut i = 0;
    while !runner.is_done() {
        let forced = proposals
            .proposals
            .get(i)
            .copied()
            .ok_or_else(|| HitlError::Overseer(String::from("proposal script exhausted")))?;
        runner.step_with(world, net, overseer, Some(forced))?;
        i += 1;
    }
    Ok(runner.into_trajectory())
}
