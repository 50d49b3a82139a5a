use std::path::Path;

use serde::{Deserialize, Serialize};
use spar_core::learn::LossReport;

use super::{read, write};
use crate::{Error, Result};

pub const LOSS_SCHEMA_VERSION: u32 = 1;

/// One epoch of one retrain, as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLine {
    pub schema_version: u32,
    pub checkpoint: usize,
    #[serde(flatten)]
    pub report: LossReport,
}

pub fn render_losses(lines: &[LossLine]) -> Vec<u8> {
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, l).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

pub fn write_losses(path: &Path, lines: &[LossLine]) -> Result<()> {
    write(path, &render_losses(lines))
}

pub fn read_losses(path: &Path) -> Result<Vec<LossLine>> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let line: LossLine =
                serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if line.schema_version != LOSS_SCHEMA_VERSION {
                return Err(Error::format(path, format!("line {}: unknown schema_version", i + 1)));
            }
            Ok(line)
        })
        .collect()
}
