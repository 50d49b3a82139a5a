use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::world::{MultiDiscreteAction, Observation, StartSpec, TerminationReason};

/// Identifies a step by `(episode id, time index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub episode: u32,
    pub t: u32,
}

/// One step of an overseen rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode_id: u32,
    pub t: u32,
    /// Observation the agent acted on.
    pub observation: Observation,
    /// Fingerprint of the latent the agent acted from.
    pub latent_fingerprint: u64,
    pub a_agent: MultiDiscreteAction,
    pub a_human: Option<MultiDiscreteAction>,
    pub a_exec: MultiDiscreteAction,
    /// Intervention flag `m_t`.
    pub m: bool,
    pub reward: f64,
    pub terminated: bool,
    pub termination_reason: TerminationReason,
    pub excluded_from_training: bool,
}

impl TransitionRecord {
    pub fn step_ref(&self) -> StepRef {
        StepRef {
            episode: self.episode_id,
            t: self.t,
        }
    }

    /// The executed-action rule and record invariants, checkable from the
    /// record alone.
    pub fn is_consistent(&self) -> bool {
        let exec_ok = if self.m {
            self.a_human == Some(self.a_exec)
        } else {
            self.a_exec == self.a_agent
        };
        let excluded_ok = !self.excluded_from_training
            || (self.terminated
                && self.termination_reason == TerminationReason::CorridorViolation
                && !self.m);
        let term_ok = self.terminated == (self.termination_reason != TerminationReason::None);
        exec_ok && excluded_ok && term_ok
    }

    /// Whether this record yields a preference pair.
    pub fn is_preference(&self) -> bool {
        self.m && !self.excluded_from_training && self.a_human.is_some_and(|h| h != self.a_agent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryTotals {
    pub steps: usize,
    pub interventions: usize,
    pub episodic_reward: f64,
}

impl TrajectoryTotals {
    pub fn intervention_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.interventions as f64 / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u32,
    pub start: StartSpec,
    pub seed: u64,
    pub records: Vec<TransitionRecord>,
    pub totals: TrajectoryTotals,
}

impl Trajectory {
    pub fn new(episode_id: u32, start: StartSpec, seed: u64) -> Self {
        Self {
            episode_id,
            start,
            seed,
            records: Vec::new(),
            totals: TrajectoryTotals::default(),
        }
    }

    /// Totals recomputed from the records.
    pub fn recompute_totals(&self) -> TrajectoryTotals {
        TrajectoryTotals {
            steps: self.records.len(),
            interventions: self.records.iter().filter(|r| r.m).count(),
            episodic_reward: self.records.iter().map(|r| r.reward).sum(),
        }
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.totals.steps += 1;
        if record.m {
            self.totals.interventions += 1;
        }
        self.totals.episodic_reward += record.reward;
        self.records.push(record);
    }

    pub fn termination(&self) -> TerminationReason {
        self.records
            .last()
            .map(|r| r.termination_reason)
            .unwrap_or_default()
    }
}

/// Append-only collection of trajectories in collection order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    trajectories: Vec<Trajectory>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, trajectory: Trajectory) {
        self.trajectories.push(trajectory);
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.records.len()).sum()
    }

    /// The first `n` trajectories as a new buffer.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            trajectories: self.trajectories[..n.min(self.trajectories.len())].to_vec(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.trajectories.iter().flat_map(|t| t.records.iter())
    }

    pub fn record(&self, step: StepRef) -> Option<&TransitionRecord> {
        self.trajectories
            .iter()
            .find(|t| t.episode_id == step.episode)
            .and_then(|t| t.records.get(step.t as usize))
            .filter(|r| r.t == step.t)
    }
}

/// `(s, a_h ≻ a_a)` extracted at an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub step: StepRef,
    pub a_h: MultiDiscreteAction,
    pub a_a: MultiDiscreteAction,
}

/// One pair per intervened record whose override differs from the
/// proposal, skipping records excluded from training; ordered by
/// `(episode, t)` in collection order.
pub fn extract_preferences(buffer: &ReplayBuffer) -> Vec<PreferencePair> {
    buffer
        .records()
        .filter(|r| r.is_preference())
        .map(|r| PreferencePair {
            step: r.step_ref(),
            a_h: r.a_human.expect("preference records carry an override"),
            a_a: r.a_agent,
        })
        .collect()
}
