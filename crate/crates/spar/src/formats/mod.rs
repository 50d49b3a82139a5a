//! On-disk formats. Every file carries a version and loading rejects any
//! version it does not know.

mod checkpoint;
mod losses;
mod trajectory;
mod world;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};
pub use losses::{read_losses, render_losses, write_losses, LossLine, LOSS_SCHEMA_VERSION};
pub use trajectory::{
    parse_trajectories, read_trajectories, render_trajectories, write_trajectories, LogLine,
    TrajectoryLog, TRAJECTORY_SCHEMA_VERSION,
};
pub use world::{load_world, save_world, world_json};

use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    out.push(b'\n');
    out
}

pub(crate) fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(Error::json(path))
}
