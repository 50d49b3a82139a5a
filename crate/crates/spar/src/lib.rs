//! IO side of the workspace: versioned file formats for worlds, checkpoints,
//! trajectory and loss logs; run directories with a manifest; the protocol
//! driver behind the CLI; and the live session server.

pub mod formats;
pub mod report;
pub mod run;
pub mod session;

use std::path::PathBuf;

use spar_core::hitl::HitlError;
use spar_core::learn::LearnError;
use spar_core::net::NetError;
use spar_core::protocol::ProtocolError;
use spar_core::world::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Hitl(#[from] HitlError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("session: {0}")]
    Session(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| Self::Json { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
