use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::net::{NetConfig, NetParams};
use crate::world::{MultiDiscreteAction, RiverWorld, StartSpec, TerminationReason, WorldSpec};

const SMALL: NetConfig = NetConfig {
    hidden: 8,
    head_hidden: 6,
};

fn world() -> RiverWorld {
    RiverWorld::new(WorldSpec::straight(30.0, 10.0)).unwrap()
}

fn act(v: u8, y: u8, f: u8, l: u8) -> MultiDiscreteAction {
    MultiDiscreteAction::new(v, y, f, l).unwrap()
}

fn scripted_run(net: &NetParams, ep: u32, seed: u64) -> Trajectory {
    let mut o = ScriptedOverseer::default();
    run_episode(&world(), net, &mut o, StartSpec::default(), ep, seed, PolicyMode::Sampled).unwrap()
}

#[test]
fn passive_overseer_executes_the_agent() {
    let net = NetParams::init(SMALL, 1);
    let tr = run_episode(&world(), &net, &mut PassiveOverseer, StartSpec::default(), 0, 4, PolicyMode::Sampled).unwrap();
    assert!(!tr.records.is_empty());
    for r in &tr.records {
        assert!(!r.m);
        assert_eq!(r.a_exec, r.a_agent);
        assert!(r.a_human.is_none());
        assert!(r.is_consistent());
    }
}

#[test]
fn override_at_step_three_is_executed_and_logged() {
    let net = NetParams::init(SMALL, 2);
    let w = world();
    let first = run_episode(&w, &net, &mut PassiveOverseer, StartSpec::default(), 0, 5, PolicyMode::Greedy).unwrap();
    assert!(first.records.len() > 3);
    let proposed = first.records[3].a_agent;
    let human = if proposed == MultiDiscreteAction::NOOP {
        act(1, 1, 2, 1)
    } else {
        MultiDiscreteAction::NOOP
    };
    for (h, pair) in [(human, true), (proposed, false)] {
        let mut decisions = vec![OverseerDecision::ACCEPT; 3];
        decisions.push(OverseerDecision::override_with(h, InterventionReason::Safety));
        decisions.extend(vec![OverseerDecision::ACCEPT; 600]);
        let mut o = ScriptOverseer::new(decisions);
        let tr = run_episode(&w, &net, &mut o, StartSpec::default(), 0, 5, PolicyMode::Greedy).unwrap();
        let r = &tr.records[3];
        assert!(r.m);
        assert_eq!(r.a_exec, h);
        assert_eq!(r.a_human, Some(h));
        assert_eq!(r.a_agent, proposed);
        let mut buffer = ReplayBuffer::new();
        buffer.push(tr);
        assert_eq!(extract_preferences(&buffer).len(), usize::from(pair));
    }
}

#[test]
fn unhandled_corridor_exit_is_excluded() {
    let net = NetParams::init(SMALL, 3);
    let tr = run_episode(&world(), &net, &mut PassiveOverseer, StartSpec::default(), 0, 2, PolicyMode::Sampled).unwrap();
    let last = tr.records.last().unwrap();
    assert_eq!(last.termination_reason, TerminationReason::CorridorViolation);
    assert!(last.excluded_from_training);
    assert!(tr.records[..tr.records.len() - 1].iter().all(|r| !r.excluded_from_training));
}

#[test]
fn scripted_overseer_accepts_safe_progress() {
    let w = world();
    let (pose, cov, _) = w.reset(&StartSpec::default()).unwrap();
    let o = ScriptedOverseer::default();
    let forward = act(1, 1, 2, 1);
    assert!(w.transition(&pose, &cov, forward).reward > 0.0);
    assert_eq!(o.judge(&w, &pose, &cov, forward), OverseerDecision::ACCEPT);
}

#[test]
fn scripted_overseer_blocks_corridor_exits() {
    let w = world();
    let edge = w.spec().corridor_half_width - 0.1;
    for (offset, outward) in [(edge, 0u8), (-edge, 2u8), (edge, 2u8), (-edge, 0u8)] {
        let start = StartSpec {
            lateral_offset: offset,
            ..StartSpec::default()
        };
        let (pose, cov, _) = w.reset(&start).unwrap();
        let a = act(1, 1, 1, outward);
        let o = ScriptedOverseer::default();
        let d = o.judge(&w, &pose, &cov, a);
        if is_unsafe(&w, &pose, &cov, a) {
            assert_eq!(d.reason, InterventionReason::Safety);
            let fix = d.override_action.unwrap();
            assert!(!is_unsafe(&w, &pose, &cov, fix));
        } else {
            assert_eq!(d, OverseerDecision::ACCEPT);
        }
    }
}

#[test]
fn six_idle_steps_trigger_an_inefficiency_override() {
    let w = world();
    let (pose, cov, _) = w.reset(&StartSpec::default()).unwrap();
    let mut o = ScriptedOverseer::default();
    for i in 0..DEFAULT_STALL_WINDOW {
        assert_eq!(o.judge(&w, &pose, &cov, MultiDiscreteAction::NOOP), OverseerDecision::ACCEPT, "{i}");
        o.push_gain(0.0);
    }
    let d = o.judge(&w, &pose, &cov, act(1, 1, 2, 1));
    assert!(d.intervene);
    assert_eq!(d.reason, InterventionReason::Inefficiency);
    assert!(d.is_valid());
    o.push_gain(1.0);
    assert_eq!(o.judge(&w, &pose, &cov, MultiDiscreteAction::NOOP), OverseerDecision::ACCEPT);
}

#[test]
fn oracle_prefers_gain_then_straight_flight() {
    let w = world();
    let (pose, cov, _) = w.reset(&StartSpec::default()).unwrap();
    let a = oracle_action(&w, &pose, &cov);
    let gain = w.transition(&pose, &cov, a).reward;
    let best = MultiDiscreteAction::all()
        .filter(|&b| !is_unsafe(&w, &pose, &cov, b))
        .map(|b| w.transition(&pose, &cov, b).reward)
        .fold(f64::MIN, f64::max);
    assert_eq!(gain, best);
    assert_eq!(a.yaw_deg(), 0.0);
}

#[test]
fn oracle_traverses_the_default_river() {
    let w = RiverWorld::new(WorldSpec::default_river()).unwrap();
    let mut ep = crate::world::Episode::start(&w, &StartSpec::default()).unwrap();
    while !ep.is_terminated() {
        let a = oracle_action(&w, &ep.pose, &ep.coverage);
        ep.step(&w, a).unwrap();
    }
    assert_eq!(ep.termination, TerminationReason::CorridorViolation);
    let end = w.centerline().length();
    assert!(w.locate(&ep.pose).is_none_or(|p| p.arc >= end - 1.0));
    // Only a final sliver shorter than any move may be stepped over.
    let missing: Vec<usize> = (0..w.segment_count()).filter(|&i| !ep.coverage.is_visited(i).unwrap()).collect();
    let sliver = end - libm::floor(end);
    assert!(missing.is_empty() || (missing == [w.segment_count() - 1] && sliver < 0.5), "{missing:?}");
}

#[test]
fn records_and_totals_agree() {
    let net = NetParams::init(SMALL, 6);
    for seed in 0..4 {
        let tr = scripted_run(&net, 0, seed);
        assert_eq!(tr.recompute_totals(), tr.totals);
        assert_eq!(tr.totals.steps, tr.records.len());
        assert_eq!(tr.totals.interventions, tr.records.iter().filter(|r| r.m).count());
        let sum: f64 = tr.records.iter().map(|r| r.reward).sum();
        assert_eq!(tr.totals.episodic_reward, sum);
        assert!(tr.records.iter().all(TransitionRecord::is_consistent));
        if tr.totals.steps > 0 {
            let rate = tr.totals.interventions as f64 / tr.totals.steps as f64;
            assert_eq!(tr.totals.intervention_rate(), rate);
        }
    }
}

#[test]
fn extraction_follows_the_preference_rule() {
    let net = NetParams::init(SMALL, 7);
    let mut buffer = ReplayBuffer::new();
    assert!(extract_preferences(&buffer).is_empty());
    for ep in 0..3 {
        buffer.push(scripted_run(&net, ep, 9));
    }
    let pairs = extract_preferences(&buffer);
    let expected = buffer
        .records()
        .filter(|r| r.m && r.a_human != Some(r.a_agent) && !r.excluded_from_training)
        .count();
    assert!(expected > 0);
    assert_eq!(pairs.len(), expected);
    assert_eq!(extract_preferences(&buffer), pairs);
    let steps: Vec<StepRef> = pairs.iter().map(|p| p.step).collect();
    let mut sorted = steps.clone();
    sorted.sort();
    assert_eq!(steps, sorted);
    for p in &pairs {
        let r = buffer.record(p.step).unwrap();
        assert!(r.m);
        assert_ne!(p.a_h, p.a_a);
        assert_eq!(Some(p.a_h), r.a_human);
        assert_eq!(p.a_a, r.a_agent);
    }
}

#[test]
fn rollouts_are_deterministic_and_replayable() {
    let net = NetParams::init(SMALL, 8);
    let w = world();
    let a = scripted_run(&net, 2, 10);
    let b = scripted_run(&net, 2, 10);
    assert_eq!(a, b);
    let mut o = ScriptOverseer::from_records(&a.records);
    let replay = replay_episode(&w, &net, &mut o, &ProposalScript::from_records(&a.records), a.start, 2, 10).unwrap();
    assert_eq!(replay.records.len(), a.records.len());
    for (x, y) in replay.records.iter().zip(&a.records) {
        assert_eq!(x.reward, y.reward);
        assert_eq!(x.a_exec, y.a_exec);
        assert_eq!(x.m, y.m);
    }
}

#[test]
fn buffer_prefix_and_lookup() {
    let net = NetParams::init(SMALL, 9);
    let mut buffer = ReplayBuffer::new();
    for ep in 0..3 {
        buffer.push(scripted_run(&net, ep, 1));
    }
    assert_eq!(buffer.len(), 3);
    assert_eq!(buffer.prefix(2).len(), 2);
    assert_eq!(buffer.prefix(2).trajectories(), &buffer.trajectories()[..2]);
    assert_eq!(buffer.steps(), buffer.trajectories().iter().map(|t| t.records.len()).sum::<usize>());
    let r = buffer.record(StepRef { episode: 1, t: 0 }).unwrap();
    assert_eq!((r.episode_id, r.t), (1, 0));
    assert!(buffer.record(StepRef { episode: 7, t: 0 }).is_none());
}
