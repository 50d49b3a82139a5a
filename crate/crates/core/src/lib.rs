//! Statewise hybrid preference alignment for river-following navigation.
//!
//! This crate is the allocation-only core: the desk-scale river simulator,
//! the frozen-GRU policy/reward network with analytic head gradients, every
//! retraining objective, the intervention rollout loop and the budgeted
//! experiment protocol. It performs no IO; file formats, the CLI and the live
//! session server live in the `spar` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod hitl;
pub mod learn;
pub mod net;
pub mod protocol;
pub mod rng;
pub mod world;

pub use hitl::{
    extract_preferences, run_episode, Overseer, OverseerDecision, PolicyMode, PreferencePair,
    ReplayBuffer, ScriptedOverseer, Trajectory, TransitionRecord,
};
pub use learn::{retrain, HyperParams, LossReport, Method};
pub use net::{NetConfig, NetParams};
pub use world::{MultiDiscreteAction, Observation, Pose, RiverWorld, StartSpec, WorldSpec};
