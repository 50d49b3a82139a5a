use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::net::{ActionDistribution, LatentState, NetParams};
use crate::world::{CoverageState, End, MultiDiscreteAction, Point, Pose, RiverWorld, TerminationReason};

use super::TransitionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionReason {
    #[default]
    None,
    Safety,
    Inefficiency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverseerDecision {
    pub intervene: bool,
    pub override_action: Option<MultiDiscreteAction>,
    #[serde(default)]
    pub reason: InterventionReason,
}

impl OverseerDecision {
    pub const ACCEPT: Self = Self {
        intervene: false,
        override_action: None,
        reason: InterventionReason::None,
    };

    pub fn override_with(action: MultiDiscreteAction, reason: InterventionReason) -> Self {
        Self {
            intervene: true,
            override_action: Some(action),
            reason,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.intervene || self.override_action.is_some()
    }
}

/// Everything an overseer may look at when judging a proposal. The world
/// state is privileged; a remote human sees it through the session server.
pub struct DecisionContext<'a> {
    pub world: &'a RiverWorld,
    pub episode_id: u32,
    pub t: u32,
    pub pose: &'a Pose,
    pub coverage: &'a CoverageState,
    pub proposed: MultiDiscreteAction,
    pub distribution: &'a ActionDistribution,
    pub net: &'a NetParams,
    pub latent: &'a LatentState,
}

/// Decision source in the rollout loop. Calls are synchronous from the
/// loop's point of view.
pub trait Overseer {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<OverseerDecision, String>;

    /// Called after each executed step with the record just written.
    fn observe(&mut self, _record: &TransitionRecord, _pose: &Pose, _coverage: &CoverageState) {}

    /// Called when a new episode starts.
    fn reset(&mut self) {}
}

/// Never intervenes.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassiveOverseer;

impl Overseer for PassiveOverseer {
    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> Result<OverseerDecision, String> {
        Ok(OverseerDecision::ACCEPT)
    }
}

/// Default stall window for the inefficiency rule.
pub const DEFAULT_STALL_WINDOW: usize = 6;

/// Offset and altitude errors, as fractions of their half ranges, below
/// which the oracle does not correct.
const CENTER_BAND: f64 = 0.3;

/// Heading error the oracle tolerates, degrees.
const YAW_BAND_DEG: f64 = 15.0;

/// Whether a move ends the episode by leaving past the downstream end. This
/// is how a start that is not at the source finishes its run, so the
/// overseer does not treat it as unsafe.
fn exits_downstream(world: &RiverWorld, pose: &Pose, action: MultiDiscreteAction, cov: &CoverageState) -> bool {
    let tr = world.transition(pose, cov, action);
    tr.violation && tr.beyond == Some(End::Downstream) && within_extrusion(world, &tr.pose)
}

/// Altitude and lateral bounds hold, ignoring the river ends.
fn within_extrusion(world: &RiverWorld, pose: &Pose) -> bool {
    let spec = world.spec();
    let lateral = world
        .centerline()
        .project(Point::new(pose.x, pose.y))
        .is_some_and(|p| p.offset.abs() <= spec.corridor_half_width);
    lateral && pose.z >= spec.z_min && pose.z <= spec.z_max
}

/// Whether `action` from `pose` counts as unsafe.
pub fn is_unsafe(world: &RiverWorld, pose: &Pose, cov: &CoverageState, action: MultiDiscreteAction) -> bool {
    let tr = world.transition(pose, cov, action);
    tr.violation && !exits_downstream(world, pose, action, cov)
}

/// Cost used to order equally rewarding safe moves: normalized distance to
/// the centerline, heading error and altitude deviation after the move.
fn centering_cost(world: &RiverWorld, pose: &Pose) -> f64 {
    let spec = world.spec();
    let Some(p) = world.locate(pose) else {
        return 0.0;
    };
    let excess = |x: f64, band: f64| (x - band).max(0.0);
    let heading = libm::atan2(p.tangent.y, p.tangent.x).to_degrees();
    let yaw_err = crate::world::wrap_deg(pose.yaw - heading).abs();
    let mid = 0.5 * (spec.z_min + spec.z_max);
    let half = 0.5 * (spec.z_max - spec.z_min);
    excess(p.offset.abs() / spec.corridor_half_width, CENTER_BAND)
        + excess(yaw_err, YAW_BAND_DEG) / spec.yaw_limit_deg
        + excess((pose.z - mid).abs() / half, CENTER_BAND)
}

/// Branches of `a` that are not idle.
fn active_branches(a: MultiDiscreteAction) -> usize {
    (0..crate::world::BRANCHES).filter(|&b| a.branch(b) != 1).count()
}

/// Greedy safe action: maximal one-step coverage gain among safe actions.
/// Ties go to moves that jump over the fewest unvisited segments, then to a
/// downstream finish, then to moves advancing at least half a meter
/// downstream, then to the result with the least offset, heading and
/// altitude error beyond their tolerances, then to the smallest yaw change,
/// then to the moves touching the fewest branches, then to the lowest joint
/// index.
pub fn oracle_action(world: &RiverWorld, pose: &Pose, cov: &CoverageState) -> MultiDiscreteAction {
    let arc0 = world.locate(pose).map(|p| p.arc);
    let seg0 = world.segment_of(pose);
    let mut best: Option<(MultiDiscreteAction, (f64, usize, bool, bool, f64, f64, usize))> = None;
    for a in MultiDiscreteAction::all() {
        let tr = world.transition(pose, cov, a);
        let finish = tr.violation && exits_downstream(world, pose, a, cov);
        if tr.violation && !finish {
            continue;
        }
        let advance = match (arc0, world.locate(&tr.pose)) {
            (Some(s0), Some(p)) => p.arc - s0 >= 0.5,
            _ => false,
        };
        let skipped = match (seg0, tr.segment) {
            (Some(i), Some(j)) => (i.min(j) + 1..i.max(j))
                .filter(|&k| !cov.is_visited(k).unwrap_or(true))
                .count(),
            _ => 0,
        };
        let key = (
            -tr.reward,
            skipped,
            !finish,
            !advance,
            centering_cost(world, &tr.pose),
            a.yaw_deg().abs(),
            active_branches(a),
        );
        let better = match &best {
            None => true,
            Some((_, k)) => key.partial_cmp(k) == Some(core::cmp::Ordering::Less),
        };
        if better {
            best = Some((a, key));
        }
    }
    best.map(|(a, _)| a).unwrap_or(MultiDiscreteAction::NOOP)
}

/// The conservative scripted overseer: intervenes with the oracle action
/// when the proposal would leave the corridor, or when the last `window`
/// steps gained nothing.
#[derive(Debug, Clone)]
pub struct ScriptedOverseer {
    pub window: usize,
    recent_gains: VecDeque<f64>,
}

impl Default for ScriptedOverseer {
    fn default() -> Self {
        Self::new(DEFAULT_STALL_WINDOW)
    }
}

impl ScriptedOverseer {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            recent_gains: VecDeque::new(),
        }
    }

    fn stalled(&self) -> bool {
        self.window > 0
            && self.recent_gains.len() >= self.window
            && self.recent_gains.iter().all(|&g| g == 0.0)
    }

    /// Decision from explicit state, independent of the network.
    pub fn judge(
        &self,
        world: &RiverWorld,
        pose: &Pose,
        cov: &CoverageState,
        proposed: MultiDiscreteAction,
    ) -> OverseerDecision {
        if is_unsafe(world, pose, cov, proposed) {
            return OverseerDecision::override_with(oracle_action(world, pose, cov), InterventionReason::Safety);
        }
        if self.stalled() {
            return OverseerDecision::override_with(
                oracle_action(world, pose, cov),
                InterventionReason::Inefficiency,
            );
        }
        OverseerDecision::ACCEPT
    }

    /// Records a step's coverage gain into the stall window.
    pub fn push_gain(&mut self, gain: f64) {
        self.recent_gains.push_back(gain);
        while self.recent_gains.len() > self.window {
            self.recent_gains.pop_front();
        }
    }
}

impl Overseer for ScriptedOverseer {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<OverseerDecision, String> {
        Ok(self.judge(ctx.world, ctx.pose, ctx.coverage, ctx.proposed))
    }

    fn observe(&mut self, record: &TransitionRecord, _pose: &Pose, _coverage: &CoverageState) {
        self.push_gain(record.reward);
    }

    fn reset(&mut self) {
        self.recent_gains.clear();
    }
}

/// Replays recorded decisions in order, for offline reproduction of a
/// session.
#[derive(Debug, Clone)]
pub struct ScriptOverseer {
    decisions: VecDeque<OverseerDecision>,
}

impl ScriptOverseer {
    pub fn new(decisions: Vec<OverseerDecision>) -> Self {
        Self {
            decisions: decisions.into(),
        }
    }

    /// Decisions implied by a recorded trajectory.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TransitionRecord>) -> Self {
        Self::new(
            records
                .into_iter()
                .map(|r| match (r.m, r.a_human) {
                    (true, Some(a)) => OverseerDecision::override_with(a, InterventionReason::None),
                    _ => OverseerDecision::ACCEPT,
                })
                .collect(),
        )
    }

    pub fn remaining(&self) -> usize {
        self.decisions.len()
    }
}

impl Overseer for ScriptOverseer {
    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> Result<OverseerDecision, String> {
        self.decisions
            .pop_front()
            .ok_or_else(|| String::from("decision script exhausted"))
    }
}

/// Forces the agent's proposal instead of sampling, so a replay can
/// reproduce logged proposals regardless of the network.
#[derive(Debug, Clone)]
pub struct ProposalScript {
    pub proposals: Vec<MultiDiscreteAction>,
}

impl ProposalScript {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TransitionRecord>) -> Self {
        Self {
            proposals: records.into_iter().map(|r| r.a_agent).collect(),
        }
    }
}

pub(crate) fn terminal_is_unhandled(reason: TerminationReason, m: bool) -> bool {
    reason == TerminationReason::CorridorViolation && !m
}
