//! The intervention protocol: overseen rollouts, transition records, the
//! cumulative replay buffer and statewise preference extraction.

mod overseer;
mod record;
mod rollout;

pub use overseer::{
    is_unsafe, oracle_action, DecisionContext, InterventionReason, Overseer, OverseerDecision,
    PassiveOverseer, ProposalScript, ScriptOverseer, ScriptedOverseer, DEFAULT_STALL_WINDOW,
};
pub use record::{
    extract_preferences, PreferencePair, ReplayBuffer, StepRef, Trajectory, TrajectoryTotals,
    TransitionRecord,
};
pub use rollout::{replay_episode, run_episode, EpisodeRunner, HitlError, PolicyMode, Proposal};

#[cfg(test)]
mod tests;
