use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use spar::session::*;
use spar_core::hitl::{replay_episode, PassiveOverseer, ProposalScript, ScriptOverseer};
use spar_core::learn::{HyperParams, LossReport, Method};
use spar_core::net::{NetConfig, NetParams};
use spar_core::world::{MultiDiscreteAction, Pose, RiverWorld, StartSpec, WaterMask, WorldSpec};

const SMALL: NetConfig = NetConfig {
    hidden: 8,
    head_hidden: 6,
};

fn forward() -> MultiDiscreteAction {
    MultiDiscreteAction::new(1, 1, 2, 1).unwrap()
}

fn world(length: f64) -> RiverWorld {
    RiverWorld::new(WorldSpec::straight(length, 10.0)).unwrap()
}

fn config(episodes: usize) -> SessionConfig {
    let mut cfg = SessionConfig::new("s-test", (0..episodes).map(|_| StartSpec::default()).collect(), 5);
    cfg.hyper = HyperParams {
        epochs: 2,
        seed: 5,
        ..HyperParams::default()
    };
    cfg
}

fn session(cfg: SessionConfig, length: f64) -> Session {
    Session::new(cfg, world(length), NetParams::init(SMALL, 1)).unwrap()
}

fn frame(seq: u64, body: Body) -> String {
    SessionMessage::new("s-test", seq, body).to_json()
}

fn hello(seq: u64) -> String {
    SessionMessage::new("", seq, Body::Hello(Hello::default())).to_json()
}

fn decide(seq: u64, proposal_seq: u64, a: Option<MultiDiscreteAction>) -> String {
    frame(
        seq,
        Body::Decision(Decision {
            proposal_seq,
            intervene: a.is_some(),
            override_action: a,
        }),
    )
}

fn sent(out: &[Out]) -> Vec<&SessionMessage> {
    out.iter()
        .filter_map(|o| match o {
            Out::Send(_, m) => Some(m),
            Out::Close(_) => None,
        })
        .collect()
}

fn proposal(out: &[Out]) -> Option<(u64, ActionProposal)> {
    sent(out).into_iter().rev().find_map(|m| match &m.body {
        Body::ActionProposal(p) => Some((m.seq, p.clone())),
        _ => None,
    })
}

fn errors(out: &[Out]) -> Vec<ErrorCode> {
    sent(out)
        .into_iter()
        .filter_map(|m| match &m.body {
            Body::Error(e) => Some(e.code),
            _ => None,
        })
        .collect()
}

fn step_results(out: &[Out]) -> Vec<StepResult> {
    sent(out)
        .into_iter()
        .filter_map(|m| match &m.body {
            Body::StepResult(s) => Some(s.clone()),
            _ => None,
        })
        .collect()
}

fn progress(out: &[Out]) -> Vec<RetrainPhase> {
    sent(out)
        .into_iter()
        .filter_map(|m| match &m.body {
            Body::RetrainProgress(p) => Some(p.phase),
            _ => None,
        })
        .collect()
}

fn every_body() -> Vec<Body> {
    let w = world(20.0);
    let net = NetParams::init(SMALL, 2);
    let tr = spar_core::hitl::run_episode(&w, &net, &mut PassiveOverseer, StartSpec::default(), 0, 1, Default::default()).unwrap();
    let record = tr.records[0].clone();
    let mut mask = WaterMask::EMPTY;
    mask.set(0, 15, true);
    mask.set(15, 0, true);
    vec![
        Body::Hello(Hello {
            token: Some("k".into()),
            resumed: true,
            method: Some(Method::Iwr),
            episodes: 5,
            segments: 213,
            online_retrain_interval: Some(50),
        }),
        Body::StateUpdate(StateUpdate {
            episode_id: 2,
            t: 9,
            pose: Pose { x: 1.5, y: -0.25, z: 5.0, yaw: 0.1 },
            mask,
            coverage_count: 7,
            segments: 213,
            trajectory: vec![TrailPoint { x: 0.0, y: 0.0, z: 5.0, m: true }],
            steps: 9,
            interventions: 1,
            paused: false,
            done: false,
        }),
        Body::ActionProposal(ActionProposal {
            episode_id: 2,
            t: 9,
            a_agent: forward(),
            branch_probs: [[0.2, 0.3, 0.5]; 4],
            reward_estimates: (0..81).map(|i| i as f64 / 7.0).collect(),
        }),
        Body::Decision(Decision {
            proposal_seq: 4,
            intervene: true,
            override_action: Some(MultiDiscreteAction::NOOP),
        }),
        Body::StepResult(StepResult {
            proposal_seq: 4,
            record,
            coverage_count: 3,
        }),
        Body::RetrainRequest(RetrainRequest { method: None }),
        Body::RetrainProgress(RetrainProgress {
            trigger: RetrainTrigger::Auto,
            phase: RetrainPhase::Epoch,
            method: Method::SparH,
            epochs: 10,
            report: Some(LossReport {
                method: Method::SparH,
                epoch: 3,
                direct: 0.5,
                reward_bt: 0.25,
                rl_surrogate: -1.0 / 3.0,
                intervened: 2,
                non_intervened: 8,
                steps: 10,
                gated: 1,
                pairs: 2,
                reward_margin: 0.1,
                pair_accuracy: 1.0,
            }),
        }),
        Body::CheckpointSaved(CheckpointSaved {
            checkpoint_id: 1,
            episode_id: 0,
            t: 12,
            path: Some("out/session_cp1.ckpt".into()),
        }),
        Body::Error(ErrorInfo {
            code: ErrorCode::WrongProposal,
            message: "x".into(),
            in_reply_to: Some(3),
        }),
    ]
}

#[test]
fn every_message_round_trips_through_json() {
    for (i, body) in every_body().into_iter().enumerate() {
        let msg = SessionMessage::new("s-1", i as u64, body);
        let text = msg.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], msg.body.kind());
        assert_eq!(v["format_version"], SESSION_FORMAT_VERSION);
        assert!(v["payload"].is_object(), "{text}");
        assert_eq!(SessionMessage::from_json(&text).unwrap(), msg);
    }
}

#[test]
fn wire_examples_parse() {
    let d = r#"{"format_version":1,"session_id":"s-1","seq":7,"type":"decision",
        "payload":{"proposal_seq":6,"intervene":true,"override":[1,1,2,1]}}"#;
    let m = SessionMessage::from_json(d).unwrap();
    assert_eq!(
        m.body,
        Body::Decision(Decision {
            proposal_seq: 6,
            intervene: true,
            override_action: Some(forward()),
        })
    );
    let h = r#"{"format_version":1,"session_id":"","seq":0,"type":"hello","payload":{}}"#;
    assert!(matches!(SessionMessage::from_json(h).unwrap().body, Body::Hello(_)));
    let bad = r#"{"format_version":1,"session_id":"","seq":0,"type":"decision","payload":{"override":[3,1,1,1]}}"#;
    assert!(SessionMessage::from_json(bad).is_err());
}

#[test]
fn accept_and_override_execute_once_each() {
    let mut s = session(config(1), 30.0);
    let out = s.message(1, &hello(1));
    let (pseq, p) = proposal(&out).unwrap();
    assert_eq!(p.t, 0);

    let out = s.message(1, &decide(2, pseq, None));
    let r = step_results(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].proposal_seq, pseq);
    assert!(!r[0].record.m);
    assert_eq!(r[0].record.a_exec, p.a_agent);

    let (pseq, p) = proposal(&out).unwrap();
    assert_eq!(p.t, 1);
    let out = s.message(1, &decide(3, pseq, Some(forward())));
    let r = &step_results(&out)[0];
    assert!(r.record.m);
    assert_eq!(r.record.a_exec, forward());
    assert_eq!(r.record.a_human, Some(forward()));
    assert_eq!(r.record.a_agent, p.a_agent);

    // A repeated decision for an executed proposal does nothing.
    let out = s.message(1, &decide(4, pseq, Some(forward())));
    assert!(step_results(&out).is_empty());
    assert_eq!(errors(&out), [ErrorCode::WrongProposal]);
    assert_eq!(s.buffer().steps(), 2);
}

#[test]
fn malformed_and_wrong_decisions_resend_the_proposal() {
    let mut s = session(config(1), 30.0);
    let (first, p) = proposal(&s.message(1, &hello(1))).unwrap();

    let out = s.message(1, "{not json");
    assert_eq!(errors(&out), [ErrorCode::Malformed]);
    let (again, q) = proposal(&out).unwrap();
    assert!(again > first);
    assert_eq!((q.t, q.a_agent), (p.t, p.a_agent));

    let out = s.message(1, &frame(2, Body::Decision(Decision { proposal_seq: again, intervene: true, override_action: None })));
    assert_eq!(errors(&out), [ErrorCode::Malformed]);
    let (third, _) = proposal(&out).unwrap();

    let out = s.message(1, &decide(3, first, None));
    assert_eq!(errors(&out), [ErrorCode::WrongProposal]);
    let (fourth, _) = proposal(&out).unwrap();
    assert!(fourth > third);
    assert_eq!(s.buffer().steps(), 0);

    let out = s.message(1, &decide(4, fourth, None));
    assert_eq!(step_results(&out).len(), 1);
}

#[test]
fn stale_client_seq_is_rejected() {
    let mut s = session(config(1), 30.0);
    let (pseq, _) = proposal(&s.message(1, &hello(5))).unwrap();
    let out = s.message(1, &decide(5, pseq, None));
    assert_eq!(errors(&out), [ErrorCode::StaleSequence]);
    assert!(step_results(&out).is_empty());
    let out = s.message(1, &decide(6, pseq, None));
    assert_eq!(step_results(&out).len(), 1);
}

#[test]
fn version_mismatch_is_reported() {
    let mut s = session(config(1), 30.0);
    s.message(1, &hello(1));
    let text = frame(2, Body::RetrainRequest(RetrainRequest { method: None })).replace("\"format_version\":1", "\"format_version\":2");
    assert_eq!(errors(&s.message(1, &text)), [ErrorCode::VersionMismatch]);
}

#[test]
fn hello_is_required_and_busy_sessions_refuse() {
    let mut s = session(config(1), 30.0);
    let out = s.message(1, &decide(1, 1, None));
    assert_eq!(errors(&out), [ErrorCode::HelloRequired]);
    assert!(out.contains(&Out::Close(1)));

    s.message(1, &hello(1));
    let out = s.message(2, &hello(1));
    assert_eq!(errors(&out), [ErrorCode::SessionBusy]);
    assert!(out.contains(&Out::Close(2)));
    assert_eq!(s.attached(), Some(1));
}

#[test]
fn tokens_are_checked() {
    let mut cfg = config(1);
    cfg.token = Some("secret".into());
    let mut s = session(cfg, 30.0);
    let out = s.message(1, &hello(1));
    assert_eq!(errors(&out), [ErrorCode::Unauthorized]);
    assert!(s.attached().is_none());
    let good = SessionMessage::new(
        "",
        2,
        Body::Hello(Hello {
            token: Some("secret".into()),
            ..Hello::default()
        }),
    );
    assert!(proposal(&s.message(1, &good.to_json())).is_some());
}

#[test]
fn disconnect_pauses_and_hello_resumes() {
    let mut s = session(config(1), 30.0);
    let (pseq, p) = proposal(&s.message(1, &hello(1))).unwrap();
    s.message(1, &decide(2, pseq, None));
    s.disconnect(1);
    assert!(s.is_paused());
    assert!(s.attached().is_none());

    let out = s.message(2, &frame(2, Body::Hello(Hello::default())));
    assert_eq!(errors(&out), [ErrorCode::StaleSequence]);
    let wrong = SessionMessage::new("s-other", 3, Body::Hello(Hello::default())).to_json();
    assert_eq!(errors(&s.message(2, &wrong)), [ErrorCode::UnknownSession]);

    let out = s.message(2, &frame(3, Body::Hello(Hello::default())));
    let Body::Hello(h) = &sent(&out)[0].body else { panic!("{out:?}") };
    assert!(h.resumed);
    assert!(!s.is_paused());
    let (resent, q) = proposal(&out).unwrap();
    assert_eq!(q.t, 1);
    assert_ne!((resent, q.t), (pseq, p.t));
    let out = s.message(2, &decide(4, resent, None));
    assert_eq!(step_results(&out)[0].record.t, 1);
    assert_eq!(s.buffer().steps(), 2);
}

#[test]
fn timeouts_auto_accept_or_pause() {
    let mut cfg = config(1);
    cfg.decision_timeout = Some(Duration::from_millis(10));
    cfg.on_timeout = TimeoutPolicy::AutoAccept;
    let mut s = session(cfg.clone(), 30.0);
    let (_, p) = proposal(&s.message(1, &hello(1))).unwrap();
    assert!(s.tick(Instant::now()).is_empty());
    let out = s.tick(Instant::now() + Duration::from_secs(1));
    let r = step_results(&out);
    assert_eq!(r.len(), 1);
    assert!(!r[0].record.m);
    assert_eq!(r[0].record.a_exec, p.a_agent);

    cfg.on_timeout = TimeoutPolicy::Pause;
    let mut s = session(cfg, 30.0);
    s.message(1, &hello(1));
    let out = s.tick(Instant::now() + Duration::from_secs(1));
    assert!(step_results(&out).is_empty());
    assert!(s.is_paused());
    assert!(s.next_deadline().is_none());
}

/// Drives the session with a fixed operator until it ends, returning every
/// message it sent.
fn drive(s: &mut Session, decide_on: impl Fn(&ActionProposal) -> Option<MultiDiscreteAction>) -> Vec<SessionMessage> {
    let mut log = Vec::new();
    let mut out = s.message(1, &hello(1));
    let mut seq = 2;
    while let Some((pseq, p)) = proposal(&out) {
        log.extend(sent(&out).into_iter().cloned());
        out = s.message(1, &decide(seq, pseq, decide_on(&p)));
        seq += 1;
    }
    log.extend(sent(&out).into_iter().cloned());
    log
}

#[test]
fn auto_retrain_skips_windows_without_interventions() {
    let mut cfg = config(1);
    cfg.online_retrain_interval = Some(3);
    let mut s = session(cfg, 12.0);
    let msgs = drive(&mut s, |_| None);
    assert!(s.is_done());
    let phases: Vec<_> = msgs
        .iter()
        .filter_map(|m| match &m.body {
            Body::RetrainProgress(p) => Some(p.phase),
            _ => None,
        })
        .collect();
    assert!(!phases.is_empty());
    assert!(phases.iter().all(|p| *p == RetrainPhase::Skipped));
    assert_eq!(s.retrains(), 0);
    assert_eq!(s.params(), &NetParams::init(SMALL, 1));
}

#[test]
fn auto_retrain_runs_after_interventions_and_saves_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(1);
    cfg.online_retrain_interval = Some(4);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let mut s = session(cfg, 12.0);
    let msgs = drive(&mut s, |_| Some(forward()));
    let steps = s.completed().steps();
    assert_eq!(s.retrains(), steps / 4);
    let mut phases = Vec::new();
    let mut saved = Vec::new();
    for m in &msgs {
        match &m.body {
            Body::RetrainProgress(p) => phases.push(p.phase),
            Body::CheckpointSaved(c) => saved.push(c.clone()),
            _ => {}
        }
    }
    let mut expected = Vec::new();
    for _ in 0..s.retrains() {
        expected.extend([RetrainPhase::Started, RetrainPhase::Epoch, RetrainPhase::Epoch, RetrainPhase::Finished]);
    }
    assert_eq!(phases, expected);
    assert_eq!(saved.len(), s.retrains());
    let last = spar::formats::Checkpoint::load(std::path::Path::new(saved.last().unwrap().path.as_ref().unwrap())).unwrap();
    assert_eq!(&last.params, s.params());
    assert_eq!(last.meta.method, Some(Method::SparH));
}

#[test]
fn manual_retrain_reports_progress() {
    let mut s = session(config(1), 30.0);
    let (pseq, _) = proposal(&s.message(1, &hello(1))).unwrap();
    s.message(1, &decide(2, pseq, Some(MultiDiscreteAction::NOOP)));
    let out = s.message(
        1,
        &frame(3, Body::RetrainRequest(RetrainRequest { method: Some(Method::HgDagger) })),
    );
    assert_eq!(progress(&out), [RetrainPhase::Started, RetrainPhase::Epoch, RetrainPhase::Epoch, RetrainPhase::Finished]);
    assert_eq!(s.retrains(), 1);
    assert!(proposal(&out).is_none());
}

/// Operator used over the socket: overrides with a forward move unless the
/// agent already hovers or flies straight ahead.
fn operator(p: &ActionProposal) -> Option<MultiDiscreteAction> {
    let a = p.a_agent;
    let calm = a.branch(0) == 1 && a.branch(1) == 1 && a.branch(3) == 1 && a.branch(2) >= 1;
    if calm && p.t % 9 != 8 {
        None
    } else {
        Some(forward())
    }
}

fn moving_rate(flags: &[bool], window: usize) -> Vec<f64> {
    (1..=flags.len())
        .map(|end| {
            let w = &flags[end.saturating_sub(window)..end];
            w.iter().filter(|m| **m).count() as f64 / w.len() as f64
        })
        .collect()
}

#[test]
fn live_session_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let w = world(45.0);
    let net = NetParams::init(SMALL, 1);
    let mut cfg = config(3);
    cfg.online_retrain_interval = Some(25);
    cfg.out_dir = Some(dir.path().to_path_buf());
    cfg.token = Some("t0k".into());
    let s = Session::new(cfg, w.clone(), net.clone()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("ws://{}", listener.local_addr().unwrap());
    let server = thread::spawn(move || serve(listener, s));

    let mut client = SessionClient::connect(&url, None, Some("t0k"), 1).unwrap();
    let mut decisions = Vec::new();
    let mut results = Vec::new();
    let mut dropped = false;
    loop {
        let msg = client.recv().unwrap();
        match msg.body {
            Body::Hello(h) => {
                assert_eq!(h.resumed, dropped);
                assert_eq!(client.session_id(), "s-test");
            }
            Body::ActionProposal(p) => {
                if !dropped && results.len() == 40 {
                    dropped = true;
                    let next = client.next_seq();
                    client.drop_link();
                    let mut rival = SessionClient::connect(&url, Some("s-test"), Some("nope"), next).unwrap();
                    let Body::Error(e) = rival.recv().unwrap().body else { panic!() };
                    assert_eq!(e.code, ErrorCode::Unauthorized);
                    // The server may still be tearing down the dropped link.
                    client = loop {
                        let mut c = SessionClient::connect(&url, Some("s-test"), Some("t0k"), next + 1).unwrap();
                        match c.recv().unwrap().body {
                            Body::Hello(h) => {
                                assert!(h.resumed);
                                break c;
                            }
                            Body::Error(e) if e.code == ErrorCode::SessionBusy => {
                                thread::sleep(Duration::from_millis(20));
                            }
                            other => panic!("{other:?}"),
                        }
                    };
                    continue;
                }
                let d = operator(&p);
                client
                    .send(Body::Decision(Decision {
                        proposal_seq: msg.seq,
                        intervene: d.is_some(),
                        override_action: d,
                    }))
                    .unwrap();
                decisions.push((p.episode_id, p.t, p.a_agent, d));
            }
            Body::StepResult(r) => results.push(r),
            Body::StateUpdate(u) if u.done => break,
            Body::Error(e) => panic!("{e:?}"),
            _ => {}
        }
    }
    client.close();
    let s = server.join().unwrap().unwrap();
    assert!(s.is_done());
    assert!(results.len() >= 100, "{}", results.len());
    assert!(s.retrains() > 0);

    // Every decision was executed exactly once, as decided.
    assert_eq!(decisions.len(), results.len());
    for ((ep, t, agent, d), r) in decisions.iter().zip(&results) {
        let rec = &r.record;
        assert_eq!((rec.episode_id, rec.t, rec.a_agent), (*ep, *t, *agent));
        assert_eq!(rec.m, d.is_some());
        assert_eq!(rec.a_exec, d.unwrap_or(*agent));
    }

    let logged = spar::formats::read_trajectories(&dir.path().join("session.jsonl")).unwrap();
    assert_eq!(&logged, s.completed());
    let records: Vec<_> = logged.records().cloned().collect();
    let live: Vec<_> = results.iter().map(|r| r.record.clone()).collect();
    assert_eq!(records, live);

    let flags: Vec<bool> = records.iter().map(|r| r.m).collect();
    let live_flags: Vec<bool> = results.iter().map(|r| r.record.m).collect();
    assert_eq!(moving_rate(&flags, 50), moving_rate(&live_flags, 50));

    for tr in logged.trajectories() {
        let mut o = ScriptOverseer::from_records(&tr.records);
        let script = ProposalScript::from_records(&tr.records);
        let replay = replay_episode(&w, &net, &mut o, &script, tr.start, tr.episode_id, tr.seed).unwrap();
        assert_eq!(replay.records.len(), tr.records.len());
        for (a, b) in replay.records.iter().zip(&tr.records) {
            assert_eq!(a.reward, b.reward);
            assert_eq!(a.terminated, b.terminated);
            assert_eq!(a.termination_reason, b.termination_reason);
            assert_eq!(a.a_exec, b.a_exec);
        }
    }
}
