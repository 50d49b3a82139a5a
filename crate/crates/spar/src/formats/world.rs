use std::path::Path;

use spar_core::world::{RiverWorld, WorldSpec, WORLD_FORMAT_VERSION};

use super::{from_json, to_json, write};
use crate::{Error, Result};

pub fn world_json(spec: &WorldSpec) -> Vec<u8> {
    to_json(spec)
}

pub fn save_world(spec: &WorldSpec, path: &Path) -> Result<()> {
    write(path, &world_json(spec))
}

/// Loads and validates a world definition.
pub fn load_world(path: &Path) -> Result<RiverWorld> {
    let raw: serde_json::Value = from_json(path)?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(WORLD_FORMAT_VERSION)) {
        return Err(Error::format(
            path,
            format!("world format_version {version:?}, expected {WORLD_FORMAT_VERSION}"),
        ));
    }
    let spec: WorldSpec = serde_json::from_value(raw).map_err(Error::json(path))?;
    Ok(RiverWorld::new(spec)?)
}
