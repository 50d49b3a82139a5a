//! Wire schema. Every frame is one JSON text message:
//!
//! ```json
//! {"format_version": 1, "session_id": "s-…", "seq": 7, "type": "decision",
//!  "payload": {"proposal_seq": 6, "intervene": true, "override": [1, 1, 2, 1]}}
//! ```
//!
//! | field | type | notes |
//! |---|---|---|
//! | `format_version` | u32 | [`SESSION_FORMAT_VERSION`] |
//! | `session_id` | string | empty in a client's first `hello` |
//! | `seq` | u64 | strictly increasing per sender within a session, across reconnects |
//! | `type` | string | one of the [`Body`] variants in snake case |
//! | `payload` | object | the variant's fields |
//!
//! Actions are `[vertical, yaw, forward, lateral]` branch indices in
//! `0..3`, with 1 the zero move. Masks are 256-character bitstrings, row
//! major from the top-left image cell. Joint-action arrays are indexed by joint index
//! (`v·27 + y·9 + f·3 + l`).

use serde::{Deserialize, Serialize};
use spar_core::hitl::TransitionRecord;
use spar_core::learn::{LossReport, Method};
use spar_core::world::{MultiDiscreteAction, Pose, WaterMask, BRANCHES, CHOICES};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMessage {
    pub format_version: u32,
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl SessionMessage {
    pub fn new(session_id: impl Into<String>, seq: u64, body: Body) -> Self {
        Self {
            format_version: SESSION_FORMAT_VERSION,
            session_id: session_id.into(),
            seq,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("in-memory serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Body {
    /// Client opens or resumes a session; the server answers with its own.
    Hello(Hello),
    /// Server: pose, mask, coverage and the trail so far.
    StateUpdate(StateUpdate),
    /// Server: the agent's proposal awaiting a decision.
    ActionProposal(ActionProposal),
    /// Client: accept or override one proposal.
    Decision(Decision),
    /// Server: the executed step.
    StepResult(StepResult),
    /// Client: retrain now.
    RetrainRequest(RetrainRequest),
    RetrainProgress(RetrainProgress),
    CheckpointSaved(CheckpointSaved),
    Error(ErrorInfo),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Hello(_) => "hello",
            Body::StateUpdate(_) => "state_update",
            Body::ActionProposal(_) => "action_proposal",
            Body::Decision(_) => "decision",
            Body::StepResult(_) => "step_result",
            Body::RetrainRequest(_) => "retrain_request",
            Body::RetrainProgress(_) => "retrain_progress",
            Body::CheckpointSaved(_) => "checkpoint_saved",
            Body::Error(_) => "error",
        }
    }
}

/// Client hellos fill `token`; the server fills the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hello {
    pub token: Option<String>,
    pub resumed: bool,
    pub method: Option<Method>,
    pub episodes: usize,
    pub segments: usize,
    pub online_retrain_interval: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrailPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Whether the step that reached this point was an override.
    pub m: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub episode_id: u32,
    pub t: u32,
    pub pose: Pose,
    pub mask: WaterMask,
    pub coverage_count: usize,
    pub segments: usize,
    /// Start pose followed by one point per executed step.
    pub trajectory: Vec<TrailPoint>,
    pub steps: usize,
    pub interventions: usize,
    pub paused: bool,
    /// All episodes finished; the server closes after this.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProposal {
    pub episode_id: u32,
    pub t: u32,
    pub a_agent: MultiDiscreteAction,
    pub branch_probs: [[f64; CHOICES]; BRANCHES],
    /// `R(s_t, a)` for all 81 joint actions.
    pub reward_estimates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `seq` of the proposal being answered.
    pub proposal_seq: u64,
    pub intervene: bool,
    #[serde(rename = "override", default)]
    pub override_action: Option<MultiDiscreteAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub proposal_seq: u64,
    /// Exactly the line written to the session log.
    pub record: TransitionRecord,
    pub coverage_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainRequest {
    /// Defaults to the session's method.
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainTrigger {
    Manual,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainPhase {
    Started,
    Epoch,
    Finished,
    /// The auto-trigger window held no interventions.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainProgress {
    pub trigger: RetrainTrigger,
    pub phase: RetrainPhase,
    pub method: Method,
    pub epochs: usize,
    pub report: Option<LossReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSaved {
    pub checkpoint_id: usize,
    pub episode_id: u32,
    /// Steps executed in that episode when the checkpoint was taken.
    pub t: u32,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    VersionMismatch,
    Unauthorized,
    UnknownSession,
    SessionBusy,
    HelloRequired,
    StaleSequence,
    NoPendingProposal,
    WrongProposal,
    Unsupported,
    RetrainFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: ErrorCode,
    pub message: String,
    /// `seq` of the offending message when it could be read.
    pub in_reply_to: Option<u64>,
}
