use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// The visited set `C_t` over the river's arc-length segments.
///
/// Coverage utility is the unit-gain cardinality `F(C) = |C|`, so the marginal
/// gain of a segment is 1 if unvisited and 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageState {
    visited: Vec<bool>,
    count: usize,
}

impl CoverageState {
    pub fn new(segments: usize) -> Self {
        Self {
            visited: vec![false; segments],
            count: 0,
        }
    }

    pub fn from_flags(visited: Vec<bool>) -> Self {
        let count = visited.iter().filter(|&&v| v).count();
        Self { visited, count }
    }

    pub fn len(&self) -> usize {
        self.visited.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visited.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flags(&self) -> &[bool] {
        &self.visited
    }

    pub fn is_visited(&self, segment: usize) -> Result<bool, WorldError> {
        self.visited
            .get(segment)
            .copied()
            .ok_or(WorldError::InvalidSegment {
                segment,
                segments: self.visited.len(),
            })
    }

    /// `Δ_F(v | C)` under unit gains.
    pub fn marginal_gain(&self, segment: usize) -> Result<f64, WorldError> {
        Ok(if self.is_visited(segment)? { 0.0 } else { 1.0 })
    }

    /// Marks `segment` visited and returns the gain it produced.
    pub fn visit(&mut self, segment: usize) -> Result<f64, WorldError> {
        let gain = self.marginal_gain(segment)?;
        if gain > 0.0 {
            self.visited[segment] = true;
            self.count += 1;
        }
        Ok(gain)
    }

    pub fn is_complete(&self) -> bool {
        self.count == self.visited.len()
    }
}
