//! Live overseer sessions over WebSocket. The human operator answers each
//! proposal with a decision; see [`schema`] for the frames.

mod client;
mod schema;
mod server;
mod state;

pub use client::SessionClient;
pub use schema::*;
pub use server::serve;
pub use state::{ConnId, Out, Session, SessionConfig, TimeoutPolicy};
