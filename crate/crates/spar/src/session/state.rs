use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use spar_core::hitl::{EpisodeRunner, OverseerDecision, PolicyMode, ReplayBuffer};
use spar_core::learn::{retrain, HyperParams, Method};
use spar_core::net::NetParams;
use spar_core::world::{Pose, RiverWorld, StartSpec, WaterMask, BRANCHES, CHOICES};

use super::schema::*;
use crate::formats::{Checkpoint, CheckpointMeta, TrajectoryLog};
use crate::{Error, Result};

pub type ConnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeoutPolicy {
    AutoAccept,
    #[default]
    Pause,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: String,
    pub method: Method,
    pub hyper: HyperParams,
    /// One episode per start.
    pub starts: Vec<StartSpec>,
    pub seed: u64,
    pub mode: PolicyMode,
    pub online_retrain_interval: Option<usize>,
    /// `None` waits forever.
    pub decision_timeout: Option<Duration>,
    pub on_timeout: TimeoutPolicy,
    pub token: Option<String>,
    /// Receives `session.jsonl` and checkpoints when set.
    pub out_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, starts: Vec<StartSpec>, seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            method: Method::SparH,
            hyper: HyperParams {
                seed,
                ..HyperParams::default()
            },
            starts,
            seed,
            mode: PolicyMode::Sampled,
            online_retrain_interval: None,
            decision_timeout: None,
            on_timeout: TimeoutPolicy::default(),
            token: None,
            out_dir: None,
        }
    }
}

/// What the transport must do next.
#[derive(Debug, Clone, PartialEq)]
pub enum Out {
    Send(ConnId, SessionMessage),
    Close(ConnId),
}

/// The session loop as a state machine: the transport feeds it connection
/// events and frames in arrival order and carries out the returned actions.
/// Environment steps, decisions and retrains are therefore serialized.
pub struct Session {
    cfg: SessionConfig,
    world: RiverWorld,
    params: NetParams,
    completed: ReplayBuffer,
    runner: Option<EpisodeRunner>,
    next_episode: usize,
    trail: Vec<TrailPoint>,
    seq: u64,
    last_client_seq: Option<u64>,
    attached: Option<ConnId>,
    pending_seq: Option<u64>,
    proposal_sent: Option<Instant>,
    paused: bool,
    window_steps: usize,
    window_interventions: usize,
    checkpoints: usize,
    retrains: usize,
    /// Pose, mask and coverage when the last episode ended.
    last_view: Option<(Pose, WaterMask, usize)>,
    log: Option<TrajectoryLog<BufWriter<File>>>,
}

impl Session {
    pub fn new(cfg: SessionConfig, world: RiverWorld, params: NetParams) -> Result<Self> {
        if cfg.starts.is_empty() {
            return Err(Error::Session("a session needs at least one start".into()));
        }
        cfg.hyper.validate()?;
        for s in &cfg.starts {
            world.start_pose(s)?;
        }
        let log = match &cfg.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
                let path = dir.join("session.jsonl");
                Some(TrajectoryLog::new(BufWriter::new(File::create(&path).map_err(Error::io(&path))?)))
            }
            None => None,
        };
        Ok(Self {
            cfg,
            world,
            params,
            completed: ReplayBuffer::new(),
            runner: None,
            next_episode: 0,
            trail: Vec::new(),
            seq: 0,
            last_client_seq: None,
            attached: None,
            pending_seq: None,
            proposal_sent: None,
            paused: false,
            window_steps: 0,
            window_interventions: 0,
            checkpoints: 0,
            retrains: 0,
            last_view: None,
            log,
        })
    }

    pub fn id(&self) -> &str {
        &self.cfg.session_id
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    /// Finished episodes.
    pub fn completed(&self) -> &ReplayBuffer {
        &self.completed
    }

    /// Finished episodes plus the one in progress.
    pub fn buffer(&self) -> ReplayBuffer {
        let mut b = self.completed.clone();
        if let Some(r) = self.runner.as_ref().filter(|r| !r.trajectory().records.is_empty()) {
            b.push(r.trajectory().clone());
        }
        b
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    pub fn is_done(&self) -> bool {
        self.runner.is_none() && self.next_episode >= self.cfg.starts.len()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn attached(&self) -> Option<ConnId> {
        self.attached
    }

    /// When [`Session::tick`] next has something to do.
    pub fn next_deadline(&self) -> Option<Instant> {
        match (self.cfg.decision_timeout, self.proposal_sent) {
            (Some(d), Some(sent)) if !self.paused && self.attached.is_some() => Some(sent + d),
            _ => None,
        }
    }

    pub fn disconnect(&mut self, conn: ConnId) -> Vec<Out> {
        if self.attached == Some(conn) {
            self.attached = None;
            self.paused = true;
        }
        Vec::new()
    }

    pub fn tick(&mut self, now: Instant) -> Vec<Out> {
        let mut out = Vec::new();
        if self.next_deadline().is_some_and(|d| now >= d) {
            match self.cfg.on_timeout {
                TimeoutPolicy::AutoAccept => {
                    if let Err(e) = self.execute(OverseerDecision::ACCEPT, &mut out) {
                        self.error(&mut out, ErrorCode::Malformed, e.to_string(), None);
                    }
                }
                TimeoutPolicy::Pause => {
                    self.paused = true;
                    self.push_state(&mut out);
                }
            }
        }
        out
    }

    pub fn message(&mut self, conn: ConnId, text: &str) -> Vec<Out> {
        let mut out = Vec::new();
        let msg = match SessionMessage::from_json(text) {
            Ok(m) => m,
            Err(e) => {
                self.reject(conn, &mut out, ErrorCode::Malformed, format!("unreadable frame: {e}"), None);
                return out;
            }
        };
        if msg.format_version != SESSION_FORMAT_VERSION {
            let m = format!("format_version {}, expected {SESSION_FORMAT_VERSION}", msg.format_version);
            self.reject(conn, &mut out, ErrorCode::VersionMismatch, m, Some(msg.seq));
            return out;
        }
        if let Body::Hello(hello) = &msg.body {
            self.hello(conn, &msg, hello, &mut out);
            return out;
        }
        if self.attached != Some(conn) {
            self.to(conn, &mut out, error_body(ErrorCode::HelloRequired, "send hello first", Some(msg.seq)));
            out.push(Out::Close(conn));
            return out;
        }
        if msg.session_id != self.cfg.session_id {
            let m = format!("unknown session {:?}", msg.session_id);
            self.error(&mut out, ErrorCode::UnknownSession, m, Some(msg.seq));
            return out;
        }
        if self.last_client_seq.is_some_and(|last| msg.seq <= last) {
            let m = format!("seq {} already seen", msg.seq);
            self.error(&mut out, ErrorCode::StaleSequence, m, Some(msg.seq));
            return out;
        }
        self.last_client_seq = Some(msg.seq);
        match msg.body {
            Body::Decision(d) => self.decision(d, msg.seq, &mut out),
            Body::RetrainRequest(r) => {
                let method = r.method.unwrap_or(self.cfg.method);
                self.retrain(method, RetrainTrigger::Manual, &mut out);
            }
            other => {
                let m = format!("{} is sent by the server only", other.kind());
                self.error(&mut out, ErrorCode::Unsupported, m, Some(msg.seq));
            }
        }
        out
    }

    fn hello(&mut self, conn: ConnId, msg: &SessionMessage, hello: &Hello, out: &mut Vec<Out>) {
        let refuse = |code, m: &str| (code, m.to_owned());
        let problem = if self.attached.is_some_and(|c| c != conn) {
            Some(refuse(ErrorCode::SessionBusy, "another operator is connected"))
        } else if self.cfg.token.is_some() && hello.token != self.cfg.token {
            Some(refuse(ErrorCode::Unauthorized, "bad session token"))
        } else if !msg.session_id.is_empty() && msg.session_id != self.cfg.session_id {
            Some(refuse(ErrorCode::UnknownSession, "no such session"))
        } else if self.last_client_seq.is_some_and(|last| msg.seq <= last) {
            Some(refuse(ErrorCode::StaleSequence, "hello seq already seen"))
        } else {
            None
        };
        if let Some((code, m)) = problem {
            self.to(conn, out, error_body(code, &m, Some(msg.seq)));
            out.push(Out::Close(conn));
            return;
        }
        let resumed = self.last_client_seq.is_some();
        self.last_client_seq = Some(msg.seq);
        self.attached = Some(conn);
        self.paused = false;
        let body = Body::Hello(Hello {
            token: None,
            resumed,
            method: Some(self.cfg.method),
            episodes: self.cfg.starts.len(),
            segments: self.world.segment_count(),
            online_retrain_interval: self.cfg.online_retrain_interval,
        });
        self.send(out, body);
        if self.runner.is_none() && !self.is_done() {
            if let Err(e) = self.start_episode() {
                self.error(out, ErrorCode::Malformed, e.to_string(), None);
                return;
            }
        }
        self.push_state(out);
        self.push_proposal(out);
    }

    fn decision(&mut self, d: Decision, seq: u64, out: &mut Vec<Out>) {
        let Some(pending) = self.pending_seq else {
            self.error(out, ErrorCode::NoPendingProposal, "no proposal is pending".into(), Some(seq));
            return;
        };
        if d.proposal_seq != pending {
            let m = format!("decision answers {}, pending proposal is {pending}", d.proposal_seq);
            self.error(out, ErrorCode::WrongProposal, m, Some(seq));
            self.push_proposal(out);
            return;
        }
        let decision = match (d.intervene, d.override_action) {
            (false, _) => OverseerDecision::ACCEPT,
            (true, Some(a)) => OverseerDecision::override_with(a, Default::default()),
            (true, None) => {
                self.error(out, ErrorCode::Malformed, "intervene without override".into(), Some(seq));
                self.push_proposal(out);
                return;
            }
        };
        if let Err(e) = self.execute(decision, out) {
            self.error(out, ErrorCode::Malformed, e.to_string(), Some(seq));
        }
    }

    fn start_episode(&mut self) -> Result<()> {
        let ep = self.next_episode;
        let start = self.cfg.starts[ep];
        let runner = EpisodeRunner::new(&self.world, &self.params, start, ep as u32, self.cfg.seed, self.cfg.mode)?;
        let pose = runner.episode().pose;
        self.trail = vec![TrailPoint {
            x: pose.x,
            y: pose.y,
            z: pose.z,
            m: false,
        }];
        if let Some(log) = &mut self.log {
            log.begin(ep as u32, start, self.cfg.seed).map_err(Error::io("session.jsonl"))?;
        }
        self.runner = Some(runner);
        self.next_episode += 1;
        Ok(())
    }

    /// Executes the pending proposal exactly once, then handles the
    /// auto-retrain window, episode turnover and the next proposal.
    fn execute(&mut self, decision: OverseerDecision, out: &mut Vec<Out>) -> Result<()> {
        let runner = self.runner.as_mut().ok_or_else(|| Error::Session("no episode".into()))?;
        let proposal_seq = self.pending_seq.take().ok_or_else(|| Error::Session("no proposal".into()))?;
        self.proposal_sent = None;
        self.paused = false;
        let record = runner.execute(&self.world, decision)?.clone();
        let pose = runner.episode().pose;
        let coverage_count = runner.episode().coverage.count();
        self.trail.push(TrailPoint {
            x: pose.x,
            y: pose.y,
            z: pose.z,
            m: record.m,
        });
        if let Some(log) = &mut self.log {
            log.step(&record).map_err(Error::io("session.jsonl"))?;
        }
        self.window_steps += 1;
        self.window_interventions += usize::from(record.m);
        self.send(
            out,
            Body::StepResult(StepResult {
                proposal_seq,
                record,
                coverage_count,
            }),
        );
        if self.runner.as_ref().is_some_and(EpisodeRunner::is_done) {
            let runner = self.runner.take().expect("runner present");
            let ep = runner.episode();
            self.last_view = Some((ep.pose, ep.observation.mask, ep.coverage.count()));
            let finished = runner.into_trajectory();
            if let Some(log) = &mut self.log {
                log.end(&finished).map_err(Error::io("session.jsonl"))?;
            }
            self.completed.push(finished);
        }
        if self.cfg.online_retrain_interval.is_some_and(|n| self.window_steps >= n) {
            if self.window_interventions > 0 {
                self.retrain(self.cfg.method, RetrainTrigger::Auto, out);
            } else {
                self.send(
                    out,
                    Body::RetrainProgress(RetrainProgress {
                        trigger: RetrainTrigger::Auto,
                        phase: RetrainPhase::Skipped,
                        method: self.cfg.method,
                        epochs: 0,
                        report: None,
                    }),
                );
            }
            self.window_steps = 0;
            self.window_interventions = 0;
        }
        if self.runner.is_none() && !self.is_done() {
            self.start_episode()?;
        }
        self.push_state(out);
        self.push_proposal(out);
        Ok(())
    }

    fn retrain(&mut self, method: Method, trigger: RetrainTrigger, out: &mut Vec<Out>) {
        let buffer = self.buffer();
        let epochs = self.cfg.hyper.epochs;
        let progress = |phase, report| {
            Body::RetrainProgress(RetrainProgress {
                trigger,
                phase,
                method,
                epochs,
                report,
            })
        };
        self.send(out, progress(RetrainPhase::Started, None));
        let hyper = HyperParams {
            seed: self.cfg.hyper.seed ^ (self.retrains as u64 + 1),
            ..self.cfg.hyper
        };
        let outcome = match retrain(method, &buffer, &self.params, &hyper) {
            Ok(o) => o,
            Err(e) => {
                self.error(out, ErrorCode::RetrainFailed, e.to_string(), None);
                return;
            }
        };
        self.retrains += 1;
        for r in outcome.reports {
            self.send(out, progress(RetrainPhase::Epoch, Some(r)));
        }
        self.params = outcome.params;
        self.send(out, progress(RetrainPhase::Finished, None));
        let (episode_id, t) = match &self.runner {
            Some(r) => (r.trajectory().episode_id, r.trajectory().records.len() as u32),
            None => self
                .completed
                .trajectories()
                .last()
                .map_or((0, 0), |tr| (tr.episode_id, tr.records.len() as u32)),
        };
        let id = self.checkpoints;
        self.checkpoints += 1;
        let mut path = None;
        if let Some(dir) = &self.cfg.out_dir {
            let p = dir.join(format!("session_cp{id}.ckpt"));
            let meta = CheckpointMeta {
                checkpoint_id: Some(id),
                episode: Some(episode_id as usize),
                method: Some(method),
                hyper: Some(hyper),
                creation_seed: self.cfg.seed,
            };
            if let Err(e) = Checkpoint::new(self.params.clone(), meta).save(&p) {
                self.error(out, ErrorCode::RetrainFailed, e.to_string(), None);
            } else {
                path = Some(p.display().to_string());
            }
        }
        self.send(
            out,
            Body::CheckpointSaved(CheckpointSaved {
                checkpoint_id: id,
                episode_id,
                t,
                path,
            }),
        );
    }

    fn push_state(&mut self, out: &mut Vec<Out>) {
        let body = match &self.runner {
            Some(r) => {
                let ep = r.episode();
                Body::StateUpdate(StateUpdate {
                    episode_id: r.trajectory().episode_id,
                    t: ep.t as u32,
                    pose: ep.pose,
                    mask: ep.observation.mask,
                    coverage_count: ep.coverage.count(),
                    segments: self.world.segment_count(),
                    trajectory: self.trail.clone(),
                    steps: r.trajectory().totals.steps,
                    interventions: r.trajectory().totals.interventions,
                    paused: self.paused,
                    done: false,
                })
            }
            None => {
                let last = self.completed.trajectories().last();
                let (pose, mask, coverage_count) = self
                    .last_view
                    .unwrap_or((Pose { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 }, WaterMask::EMPTY, 0));
                Body::StateUpdate(StateUpdate {
                    episode_id: last.map_or(0, |t| t.episode_id),
                    t: last.map_or(0, |t| t.records.len() as u32),
                    pose,
                    mask,
                    coverage_count,
                    segments: self.world.segment_count(),
                    trajectory: self.trail.clone(),
                    steps: last.map_or(0, |t| t.totals.steps),
                    interventions: last.map_or(0, |t| t.totals.interventions),
                    paused: self.paused,
                    done: self.is_done(),
                })
            }
        };
        self.send(out, body);
    }

    /// Sends the pending proposal, computing it first if needed. A re-sent
    /// proposal gets a fresh `seq`, which the decision must then cite.
    fn push_proposal(&mut self, out: &mut Vec<Out>) {
        if self.attached.is_none() {
            return;
        }
        let Some(runner) = self.runner.as_mut() else {
            return;
        };
        let proposal = match runner.propose(&self.params) {
            Ok(p) => p.clone(),
            Err(e) => {
                self.error(out, ErrorCode::Malformed, e.to_string(), None);
                return;
            }
        };
        let mut branch_probs = [[0.0; CHOICES]; BRANCHES];
        for (b, row) in branch_probs.iter_mut().enumerate() {
            *row = proposal.distribution.branch_probs(b);
        }
        let episode_id = runner.trajectory().episode_id;
        let reward_estimates = self.params.reward_estimates(&proposal.latent.0).unwrap_or_default();
        let seq = self.send(
            out,
            Body::ActionProposal(ActionProposal {
                episode_id,
                t: proposal.t,
                a_agent: proposal.action,
                branch_probs,
                reward_estimates,
            }),
        );
        self.pending_seq = seq;
        self.proposal_sent = seq.map(|_| Instant::now());
    }

    fn send(&mut self, out: &mut Vec<Out>, body: Body) -> Option<u64> {
        let conn = self.attached?;
        Some(self.to(conn, out, body))
    }

    fn to(&mut self, conn: ConnId, out: &mut Vec<Out>, body: Body) -> u64 {
        self.seq += 1;
        out.push(Out::Send(conn, SessionMessage::new(self.cfg.session_id.clone(), self.seq, body)));
        self.seq
    }

    fn error(&mut self, out: &mut Vec<Out>, code: ErrorCode, message: String, in_reply_to: Option<u64>) {
        self.send(out, error_body(code, &message, in_reply_to));
    }

    /// Errors on the attached connection re-send the pending proposal; on
    /// any other connection they close it.
    fn reject(&mut self, conn: ConnId, out: &mut Vec<Out>, code: ErrorCode, message: String, seq: Option<u64>) {
        self.to(conn, out, error_body(code, &message, seq));
        if self.attached == Some(conn) {
            self.push_proposal(out);
        } else {
            out.push(Out::Close(conn));
        }
    }
}

fn error_body(code: ErrorCode, message: &str, in_reply_to: Option<u64>) -> Body {
    Body::Error(ErrorInfo {
        code,
        message: message.to_owned(),
        in_reply_to,
    })
}
