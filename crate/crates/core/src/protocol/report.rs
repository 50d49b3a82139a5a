use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hitl::{ReplayBuffer, Trajectory};
use crate::net::NetParams;

use super::ProtocolError;

/// Population mean and standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub episode: u32,
    pub steps: usize,
    pub interventions: usize,
    pub rate: f64,
}

impl InterventionRow {
    fn new(episode: u32, steps: usize, interventions: usize) -> Self {
        Self {
            episode,
            steps,
            interventions,
            rate: if steps == 0 {
                0.0
            } else {
                interventions as f64 / steps as f64
            },
        }
    }
}

/// Steps, interventions and intervention rate per episode plus the overall
/// row, whose rate is the step-weighted rate of the episode rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionTable {
    pub rows: Vec<InterventionRow>,
    pub overall: InterventionRow,
}

impl InterventionTable {
    pub fn from_rows(rows: Vec<InterventionRow>) -> Self {
        let steps = rows.iter().map(|r| r.steps).sum();
        let interventions = rows.iter().map(|r| r.interventions).sum();
        Self {
            overall: InterventionRow::new(u32::MAX, steps, interventions),
            rows,
        }
    }

    /// Whether the overall row equals the recomputed column sums and
    /// weighted rate.
    pub fn is_consistent(&self) -> bool {
        let again = Self::from_rows(self.rows.clone());
        again.overall == self.overall
    }
}

/// Table built from the records themselves, not the stored totals.
pub fn intervention_table(buffer: &ReplayBuffer) -> InterventionTable {
    InterventionTable::from_rows(
        buffer
            .trajectories()
            .iter()
            .map(|t| InterventionRow::new(t.episode_id, t.records.len(), t.records.iter().filter(|r| r.m).count()))
            .collect(),
    )
}

/// Reward estimates along a logged episode, with latents from the executed
/// history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardDumpRow {
    pub t: u32,
    pub m: bool,
    /// `R(s_t, a_agent)`.
    pub agent: f64,
    /// `R(s_t, a_exec)`.
    pub executed: f64,
    pub true_reward: f64,
}

pub fn reward_dump(net: &NetParams, trajectory: &Trajectory) -> Result<Vec<RewardDumpRow>, ProtocolError> {
    let latents = net.encode_history(trajectory.records.iter().map(|r| &r.observation))?;
    trajectory
        .records
        .iter()
        .zip(&latents)
        .map(|(r, z)| {
            Ok(RewardDumpRow {
                t: r.t,
                m: r.m,
                agent: net.reward_estimate(&z.0, &r.a_agent)?,
                executed: net.reward_estimate(&z.0, &r.a_exec)?,
                true_reward: r.reward,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_table_overall_row_is_weighted() {
        let rows = [(76, 24, 31.58), (456, 22, 4.82), (158, 28, 17.72), (82, 31, 37.80), (74, 39, 52.70)];
        let t = InterventionTable::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, &(s, n, _))| InterventionRow::new(i as u32, s, n))
                .collect(),
        );
        for (row, &(_, _, pct)) in t.rows.iter().zip(&rows) {
            assert!((row.rate * 100.0 - pct).abs() < 0.005);
        }
        assert_eq!(t.overall.steps, 846);
        assert_eq!(t.overall.interventions, 144);
        assert!((t.overall.rate * 100.0 - 17.02).abs() < 0.005);
        assert!(t.is_consistent());
    }

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - libm::sqrt(2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
