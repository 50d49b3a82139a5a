//! Desk-scale river-following POMDP.
//!
//! The river is a spline centerline with a fixed width. The legal flight
//! volume is a corridor extruded from the centerline: lateral distance at most
//! `corridor_half_width`, altitude in `[z_min, z_max]`, and arc-length inside
//! the river's ends. The river is cut into arc-length segments; entering an
//! unvisited segment pays 1.

mod action;
mod coverage;
pub mod geometry;
mod render;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use action::{MultiDiscreteAction, BRANCHES, CHOICES, JOINT_ACTIONS, ONE_HOT_LEN};
pub use coverage::CoverageState;
pub use geometry::{Centerline, End, Point, Projection};
pub use render::{WaterMask, CAMERA_FOV_DEG, CAMERA_PITCH_DEG, MASK_CELLS, MASK_SIDE};

/// Version written to and required from world definition files.
pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(&'static str),
    #[error("start outside the corridor: {0}")]
    StartOutsideCorridor(&'static str),
    #[error("segment {segment} out of range (world has {segments})")]
    InvalidSegment { segment: usize, segments: usize },
    #[error("action branches {0:?} out of range")]
    InvalidAction([u8; 4]),
    #[error("joint action index {0} out of range")]
    InvalidJointIndex(usize),
    #[error("episode already terminated")]
    Terminated,
}

/// Serializable world definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub format_version: u32,
    /// Centerline control points `[x, y]` in meters.
    pub spline: Vec<[f64; 2]>,
    /// Full river width; the water spans `width / 2` on each side.
    pub width: f64,
    pub corridor_half_width: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub segment_length: f64,
    pub yaw_limit_deg: f64,
    pub step_limit: usize,
    /// Seed for start-condition sampling.
    pub seed: u64,
}

impl WorldSpec {
    /// 200 m sinusoidal river, 10 m wide.
    pub fn default_river() -> Self {
        let spline = (0..=40)
            .map(|i| {
                let x = i as f64 * 5.0;
                [x, 8.0 * libm::sin(x * core::f64::consts::TAU / 100.0)]
            })
            .collect();
        Self::with_spline(spline, 10.0)
    }

    /// Straight river along +x of the given length.
    pub fn straight(length: f64, width: f64) -> Self {
        Self::with_spline(alloc::vec![[0.0, 0.0], [length, 0.0]], width)
    }

    pub fn with_spline(spline: Vec<[f64; 2]>, width: f64) -> Self {
        Self {
            format_version: WORLD_FORMAT_VERSION,
            spline,
            width,
            corridor_half_width: width / 2.0 + 2.0,
            z_min: 2.0,
            z_max: 10.0,
            segment_length: 1.0,
            yaw_limit_deg: 90.0,
            step_limit: 600,
            seed: 0,
        }
    }
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::default_river()
    }
}

/// One arc-length element of the ground set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub start_arc: f64,
    pub center: Point,
    pub tangent: Point,
}

/// Agent kinematic state. `yaw` is in degrees, normalized to `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Explicit initial condition, relative to a segment center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartSpec {
    pub segment_index: usize,
    pub lateral_offset: f64,
    pub z: f64,
    pub yaw_offset: f64,
}

impl StartSpec {
    pub fn centerline(segment_index: usize) -> Self {
        Self {
            segment_index,
            lateral_offset: 0.0,
            z: 5.0,
            yaw_offset: 0.0,
        }
    }
}

impl Default for StartSpec {
    fn default() -> Self {
        Self::centerline(0)
    }
}

/// What the agent sees at a step: the water mask and its previous action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub mask: WaterMask,
    pub prev_action: MultiDiscreteAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    #[default]
    None,
    CorridorViolation,
    FullTraversal,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub termination_reason: TerminationReason,
    pub segment_entered: Option<usize>,
}

/// Result of applying an action to a pose, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub pose: Pose,
    pub reward: f64,
    pub violation: bool,
    pub segment: Option<usize>,
    /// Where the position projects past a river end, if it does.
    pub beyond: Option<End>,
}

/// Wraps an angle in degrees to `[-180, 180)`.
pub fn wrap_deg(a: f64) -> f64 {
    let w = libm::fmod(a + 180.0, 360.0);
    let w = if w < 0.0 { w + 360.0 } else { w };
    w - 180.0
}

fn heading_deg(t: Point) -> f64 {
    libm::atan2(t.y, t.x).to_degrees()
}

#[derive(Debug, Clone)]
pub struct RiverWorld {
    spec: WorldSpec,
    centerline: Centerline,
    segments: Vec<Segment>,
}

impl RiverWorld {
    pub fn new(spec: WorldSpec) -> Result<Self, WorldError> {
        if spec.format_version != WORLD_FORMAT_VERSION {
            return Err(WorldError::Config("unsupported format_version"));
        }
        if spec.spline.len() < 2 {
            return Err(WorldError::Config("spline needs at least two points"));
        }
        if spec.spline.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WorldError::Config("spline points must be finite"));
        }
        if spec
            .spline
            .windows(2)
            .any(|w| libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]) <= 1e-9)
        {
            return Err(WorldError::Config("consecutive spline points coincide"));
        }
        if !(spec.segment_length > 0.0) {
            return Err(WorldError::Config("segment_length must be positive"));
        }
        if !(spec.width > 0.0) {
            return Err(WorldError::Config("width must be positive"));
        }
        if !(spec.corridor_half_width >= spec.width / 2.0) {
            return Err(WorldError::Config("corridor_half_width must be at least width/2"));
        }
        if !(spec.z_min > 0.0 && spec.z_max > spec.z_min) {
            return Err(WorldError::Config("need 0 < z_min < z_max"));
        }
        if !(spec.yaw_limit_deg > 0.0 && spec.yaw_limit_deg <= 180.0) {
            return Err(WorldError::Config("yaw_limit_deg must be in (0, 180]"));
        }
        if spec.step_limit == 0 {
            return Err(WorldError::Config("step_limit must be positive"));
        }
        let control: Vec<Point> = spec.spline.iter().map(|p| Point::new(p[0], p[1])).collect();
        let centerline = Centerline::new(&control, spec.corridor_half_width);
        let length = centerline.length();
        let count = libm::ceil(length / spec.segment_length) as usize;
        let segments = (0..count)
            .map(|index| {
                let start_arc = index as f64 * spec.segment_length;
                let mid = (start_arc + spec.segment_length / 2.0).min(length);
                let (center, tangent) = centerline.at_arc(mid);
                Segment {
                    index,
                    start_arc,
                    center,
                    tangent,
                }
            })
            .collect();
        Ok(Self {
            spec,
            centerline,
            segments,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn centerline(&self) -> &Centerline {
        &self.centerline
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn width(&self) -> f64 {
        self.spec.width
    }

    pub fn step_limit(&self) -> usize {
        self.spec.step_limit
    }

    fn segment_at_arc(&self, arc: f64) -> usize {
        let i = libm::floor(arc / self.spec.segment_length);
        (i.max(0.0) as usize).min(self.segments.len() - 1)
    }

    /// Whether `pose` lies inside the legal flight volume; returns the
    /// projection when it does.
    pub fn locate(&self, pose: &Pose) -> Option<Projection> {
        if !(pose.z >= self.spec.z_min && pose.z <= self.spec.z_max) {
            return None;
        }
        let proj = self.centerline.project(Point::new(pose.x, pose.y))?;
        if proj.beyond.is_some() || proj.offset.abs() > self.spec.corridor_half_width {
            return None;
        }
        Some(proj)
    }

    /// Segment containing the projected position, when inside the corridor.
    pub fn segment_of(&self, pose: &Pose) -> Option<usize> {
        self.locate(pose).map(|p| self.segment_at_arc(p.arc))
    }

    /// Heading of the river tangent nearest to `pose`, degrees.
    pub fn tangent_heading(&self, pose: &Pose) -> Option<f64> {
        self.centerline
            .project(Point::new(pose.x, pose.y))
            .map(|p| heading_deg(p.tangent))
    }

    /// Pose for an explicit start condition.
    pub fn start_pose(&self, start: &StartSpec) -> Result<Pose, WorldError> {
        let seg = self
            .segments
            .get(start.segment_index)
            .ok_or(WorldError::StartOutsideCorridor("segment index out of range"))?;
        if !(start.lateral_offset.abs() <= self.spec.corridor_half_width) {
            return Err(WorldError::StartOutsideCorridor("lateral offset exceeds corridor"));
        }
        if !(start.z >= self.spec.z_min && start.z <= self.spec.z_max) {
            return Err(WorldError::StartOutsideCorridor("altitude outside corridor"));
        }
        if !(start.yaw_offset.abs() <= self.spec.yaw_limit_deg) {
            return Err(WorldError::StartOutsideCorridor("yaw offset exceeds yaw limit"));
        }
        let normal = Point::new(-seg.tangent.y, seg.tangent.x);
        let pose = Pose {
            x: seg.center.x + normal.x * start.lateral_offset,
            y: seg.center.y + normal.y * start.lateral_offset,
            z: start.z,
            yaw: wrap_deg(heading_deg(seg.tangent) + start.yaw_offset),
        };
        if self.locate(&pose).is_none() {
            return Err(WorldError::StartOutsideCorridor("start pose projects outside the river"));
        }
        Ok(pose)
    }

    /// Initial pose, coverage (start segment visited) and observation.
    pub fn reset(&self, start: &StartSpec) -> Result<(Pose, CoverageState, Observation), WorldError> {
        let pose = self.start_pose(start)?;
        let mut cov = CoverageState::new(self.segments.len());
        let seg = self
            .segment_of(&pose)
            .ok_or(WorldError::StartOutsideCorridor("start pose outside corridor"))?;
        cov.visit(seg)?;
        let obs = Observation {
            mask: self.render_mask(&pose),
            prev_action: MultiDiscreteAction::NOOP,
        };
        Ok((pose, cov, obs))
    }

    /// Kinematics: body-frame translation, then yaw increment, then yaw
    /// clamped to `yaw_limit_deg` around the local tangent. Leaving the
    /// corridor is a violation with zero reward.
    pub fn transition(&self, pose: &Pose, cov: &CoverageState, action: MultiDiscreteAction) -> Transition {
        let yaw = pose.yaw.to_radians();
        let (s, c) = (libm::sin(yaw), libm::cos(yaw));
        let fwd = action.forward_m();
        let lat = action.lateral_m();
        let mut next = Pose {
            x: pose.x + fwd * c - lat * s,
            y: pose.y + fwd * s + lat * c,
            z: pose.z + action.vertical_m(),
            yaw: wrap_deg(pose.yaw + action.yaw_deg()),
        };
        let planar = self.centerline.project(Point::new(next.x, next.y));
        if let Some(p) = planar {
            let tangent = heading_deg(p.tangent);
            let rel = wrap_deg(next.yaw - tangent);
            let limit = self.spec.yaw_limit_deg;
            if rel.abs() > limit {
                next.yaw = wrap_deg(tangent + rel.clamp(-limit, limit));
            }
        }
        let beyond = planar.and_then(|p| p.beyond);
        match self.locate(&next) {
            Some(p) => {
                let segment = self.segment_at_arc(p.arc);
                let reward = cov.marginal_gain(segment).unwrap_or(0.0);
                Transition {
                    pose: next,
                    reward,
                    violation: false,
                    segment: Some(segment),
                    beyond,
                }
            }
            None => Transition {
                pose: next,
                reward: 0.0,
                violation: true,
                segment: None,
                beyond,
            },
        }
    }

    /// One environment step on explicit state.
    pub fn step(
        &self,
        pose: &Pose,
        cov: &CoverageState,
        action: MultiDiscreteAction,
    ) -> (Pose, CoverageState, StepOutcome) {
        let tr = self.transition(pose, cov, action);
        let mut next_cov = cov.clone();
        if let Some(seg) = tr.segment {
            let _ = next_cov.visit(seg);
        }
        let reason = if tr.violation {
            TerminationReason::CorridorViolation
        } else if next_cov.is_complete() {
            TerminationReason::FullTraversal
        } else {
            TerminationReason::None
        };
        let outcome = StepOutcome {
            observation: Observation {
                mask: self.render_mask(&tr.pose),
                prev_action: action,
            },
            reward: tr.reward,
            terminated: reason != TerminationReason::None,
            termination_reason: reason,
            segment_entered: tr.segment,
        };
        (tr.pose, next_cov, outcome)
    }
}

/// A running episode: explicit state plus step counter and termination.
#[derive(Debug, Clone)]
pub struct Episode {
    pub pose: Pose,
    pub coverage: CoverageState,
    pub observation: Observation,
    pub t: usize,
    pub termination: TerminationReason,
}

impl Episode {
    pub fn start(world: &RiverWorld, start: &StartSpec) -> Result<Self, WorldError> {
        let (pose, coverage, observation) = world.reset(start)?;
        Ok(Self {
            pose,
            coverage,
            observation,
            t: 0,
            termination: TerminationReason::None,
        })
    }

    pub fn is_terminated(&self) -> bool {
        self.termination != TerminationReason::None
    }

    /// Advances one step; hitting the world's step limit terminates with
    /// [`TerminationReason::StepLimit`] unless another reason applies.
    pub fn step(
        &mut self,
        world: &RiverWorld,
        action: MultiDiscreteAction,
    ) -> Result<StepOutcome, WorldError> {
        if self.is_terminated() {
            return Err(WorldError::Terminated);
        }
        let (pose, coverage, mut outcome) = world.step(&self.pose, &self.coverage, action);
        self.t += 1;
        if !outcome.terminated && self.t >= world.step_limit() {
            outcome.terminated = true;
            outcome.termination_reason = TerminationReason::StepLimit;
        }
        self.pose = pose;
        self.coverage = coverage;
        self.observation = outcome.observation;
        self.termination = outcome.termination_reason;
        Ok(outcome)
    }
}
