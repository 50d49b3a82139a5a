//! Trajectory logs as JSON Lines. Each episode is an `episode` line, one
//! `step` line per transition record and an `end` line with the totals; the
//! observation mask is a 256-character bitstring. Buffers are episodes in
//! collection order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spar_core::hitl::{ReplayBuffer, Trajectory, TrajectoryTotals, TransitionRecord};
use spar_core::world::StartSpec;

use super::{read, write};
use crate::{Error, Result};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Episode {
        schema_version: u32,
        episode_id: u32,
        start: StartSpec,
        seed: u64,
    },
    Step {
        schema_version: u32,
        #[serde(flatten)]
        record: TransitionRecord,
    },
    End {
        schema_version: u32,
        episode_id: u32,
        totals: TrajectoryTotals,
    },
}

impl LogLine {
    fn schema_version(&self) -> u32 {
        match self {
            Self::Episode { schema_version, .. } | Self::Step { schema_version, .. } | Self::End { schema_version, .. } => {
                *schema_version
            }
        }
    }
}

/// Line-at-a-time writer, used by live sessions that log as they go.
pub struct TrajectoryLog<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    fn line(&mut self, line: &LogLine) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn begin(&mut self, episode_id: u32, start: StartSpec, seed: u64) -> std::io::Result<()> {
        self.line(&LogLine::Episode {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            episode_id,
            start,
            seed,
        })
    }

    pub fn step(&mut self, record: &TransitionRecord) -> std::io::Result<()> {
        self.line(&LogLine::Step {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            record: record.clone(),
        })
    }

    pub fn end(&mut self, trajectory: &Trajectory) -> std::io::Result<()> {
        self.line(&LogLine::End {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            episode_id: trajectory.episode_id,
            totals: trajectory.totals,
        })
    }

    pub fn trajectory(&mut self, t: &Trajectory) -> std::io::Result<()> {
        self.begin(t.episode_id, t.start, t.seed)?;
        for r in &t.records {
            self.step(r)?;
        }
        self.end(t)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn render_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Vec<u8> {
    let mut log = TrajectoryLog::new(Vec::new());
    for t in trajectories {
        log.trajectory(t).expect("writing to memory");
    }
    log.into_inner()
}

pub fn write_trajectories<'a>(path: &Path, trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Result<()> {
    write(path, &render_trajectories(trajectories))
}

/// Parses a log. A final episode without its `end` line (a session that
/// stopped mid-episode) is returned with recomputed totals; anywhere else a
/// missing `end` is an error, as is an `end` whose totals disagree with the
/// records.
pub fn parse_trajectories(bytes: &[u8], path: &Path) -> Result<Vec<Trajectory>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    let mut open: Option<Trajectory> = None;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::format(path, format!("line {}: {m}", i + 1));
        let line: LogLine = serde_json::from_str(raw).map_err(|e| at(e.to_string()))?;
        if line.schema_version() != TRAJECTORY_SCHEMA_VERSION {
            return Err(at(format!(
                "schema_version {}, expected {TRAJECTORY_SCHEMA_VERSION}",
                line.schema_version()
            )));
        }
        match line {
            LogLine::Episode {
                episode_id, start, seed, ..
            } => {
                if let Some(t) = &open {
                    return Err(at(format!("episode {} has no end line", t.episode_id)));
                }
                open = Some(Trajectory::new(episode_id, start, seed));
            }
            LogLine::Step { record, .. } => {
                let t = open.as_mut().ok_or_else(|| at("step outside an episode".into()))?;
                if record.episode_id != t.episode_id || record.t as usize != t.records.len() {
                    return Err(at(format!("record ({}, {}) out of order", record.episode_id, record.t)));
                }
                t.push(record);
            }
            LogLine::End {
                episode_id, totals, ..
            } => {
                let t = open.take().ok_or_else(|| at("end outside an episode".into()))?;
                if episode_id != t.episode_id || totals != t.recompute_totals() {
                    return Err(at(format!("stored totals for episode {episode_id} disagree with its records")));
                }
                out.push(t);
            }
        }
    }
    out.extend(open);
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<ReplayBuffer> {
    let mut buffer = ReplayBuffer::new();
    for t in parse_trajectories(&read(path)?, path)? {
        buffer.push(t);
    }
    Ok(buffer)
}
