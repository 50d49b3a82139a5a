use core::fmt;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Number of action branches (vertical, yaw, forward, lateral).
pub const BRANCHES: usize = 4;
/// Choices per branch.
pub const CHOICES: usize = 3;
/// Size of the joint action space.
pub const JOINT_ACTIONS: usize = 81;
/// Length of the one-hot action encoding.
pub const ONE_HOT_LEN: usize = BRANCHES * CHOICES;

const VERTICAL_M: [f64; 3] = [-1.0, 0.0, 1.0];
const YAW_DEG: [f64; 3] = [-15.0, 0.0, 15.0];
const FORWARD_M: [f64; 3] = [-1.0, 0.0, 1.0];
const LATERAL_M: [f64; 3] = [-0.5, 0.0, 0.5];

/// One choice per branch; index 1 on every branch is the no-op.
///
/// Lateral motion is positive to the left of the nose axis and yaw is
/// positive counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u8; 4]", into = "[u8; 4]")]
pub struct MultiDiscreteAction {
    branches: [u8; BRANCHES],
}

impl MultiDiscreteAction {
    pub const NOOP: Self = Self { branches: [1; BRANCHES] };

    pub fn new(vertical: u8, yaw: u8, forward: u8, lateral: u8) -> Result<Self, WorldError> {
        Self::from_branches([vertical, yaw, forward, lateral])
    }

    pub fn from_branches(branches: [u8; BRANCHES]) -> Result<Self, WorldError> {
        if branches.iter().any(|&b| b as usize >= CHOICES) {
            return Err(WorldError::InvalidAction(branches));
        }
        Ok(Self { branches })
    }

    /// Inverse of [`Self::joint_index`].
    pub fn from_joint_index(index: usize) -> Result<Self, WorldError> {
        if index >= JOINT_ACTIONS {
            return Err(WorldError::InvalidJointIndex(index));
        }
        Ok(Self {
            branches: [
                (index / 27) as u8,
                (index / 9 % 3) as u8,
                (index / 3 % 3) as u8,
                (index % 3) as u8,
            ],
        })
    }

    /// Row-major index over (vertical, yaw, forward, lateral).
    pub fn joint_index(&self) -> usize {
        self.branches
            .iter()
            .fold(0, |acc, &b| acc * CHOICES + b as usize)
    }

    /// All 81 joint actions in joint-index order.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..JOINT_ACTIONS).map(|i| Self::from_joint_index(i).expect("index in range"))
    }

    pub fn branches(&self) -> [u8; BRANCHES] {
        self.branches
    }

    pub fn branch(&self, b: usize) -> usize {
        self.branches[b] as usize
    }

    pub fn vertical_m(&self) -> f64 {
        VERTICAL_M[self.branch(0)]
    }

    pub fn yaw_deg(&self) -> f64 {
        YAW_DEG[self.branch(1)]
    }

    pub fn forward_m(&self) -> f64 {
        FORWARD_M[self.branch(2)]
    }

    pub fn lateral_m(&self) -> f64 {
        LATERAL_M[self.branch(3)]
    }

    /// Writes the 12-entry one-hot encoding (branch-major) into `out`.
    pub fn write_one_hot(&self, out: &mut [f64]) {
        out[..ONE_HOT_LEN].iter_mut().for_each(|v| *v = 0.0);
        for b in 0..BRANCHES {
            out[b * CHOICES + self.branch(b)] = 1.0;
        }
    }

    pub fn one_hot(&self) -> [f64; ONE_HOT_LEN] {
        let mut out = [0.0; ONE_HOT_LEN];
        self.write_one_hot(&mut out);
        out
    }
}

impl Default for MultiDiscreteAction {
    fn default() -> Self {
        Self::NOOP
    }
}

impl TryFrom<[u8; 4]> for MultiDiscreteAction {
    type Error = WorldError;

    fn try_from(value: [u8; 4]) -> Result<Self, Self::Error> {
        Self::from_branches(value)
    }
}

impl From<MultiDiscreteAction> for [u8; 4] {
    fn from(value: MultiDiscreteAction) -> Self {
        value.branches
    }
}

impl fmt::Display for MultiDiscreteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [v, y, fw, l] = self.branches;
        write!(f, "[{v},{y},{fw},{l}]")
    }
}
