//! Training objectives and the retraining loop.

mod advantage;
mod bt;
mod losses;
mod retrain;

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use advantage::{advantages, AdvantageBatch};
pub use bt::{bt_nll, bt_nll_grad, bt_probability, neg_log_sigmoid};
pub use losses::{
    coach_label, focops_loss, focops_loss_scaled, iwr_takeover_weight, policy_log_prob, reward_regression, spar_d_loss,
    spar_h_loss, spar_p_loss, spar_r_loss, weighted_nll, FocopsLoss, HeadLoss, PairSample, RlSample,
    WeightedStep,
};
pub use retrain::{bind_pairs, pair_margins, retrain, Prepared, RetrainOutcome};

use crate::hitl::StepRef;
use crate::net::NetError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("the replay buffer is empty")]
    EmptyBuffer,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("step ({}, {}) appears both as a preference and as an RL step", .0.episode, .0.t)]
    Overlap(StepRef),
    #[error("preference at step ({}, {}) does not reference an intervention", .0.episode, .0.t)]
    NotIntervened(StepRef),
    #[error("invalid hyperparameter: {0}")]
    HyperParams(&'static str),
    #[error("{expected} advantages expected, got {got}")]
    AdvantageLength { expected: usize, got: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// One hyperparameter record shared by every method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the trust-region term in the hybrid loss.
    pub alpha: f64,
    /// Bradley–Terry inverse temperature for the reference-normalized loss.
    pub beta: f64,
    pub gamma: f64,
    /// KL gate threshold.
    pub eta: f64,
    /// Trust-region greediness.
    pub lambda: f64,
    pub epochs: usize,
    /// Reward-to-go truncation horizon.
    pub horizon: usize,
    /// COACH weak positive label.
    pub zeta: f64,
    pub lr: f64,
    pub eps: f64,
    /// Minibatch size; `None` takes one full-batch step per pass. The
    /// default updates once per sample.
    pub batch_size: Option<usize>,
    /// Seed for minibatch shuffles.
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.99,
            eta: 0.05,
            lambda: 1.5,
            epochs: 10,
            horizon: 32,
            zeta: 0.1,
            lr: 3e-3,
            eps: 1e-8,
            batch_size: Some(1),
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let checks: [(bool, &'static str); 9] = [
            (self.beta > 0.0, "beta must be positive"),
            ((0.0..=1.0).contains(&self.gamma), "gamma must lie in [0, 1]"),
            (self.eta > 0.0, "eta must be positive"),
            (self.lambda > 0.0, "lambda must be positive"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.horizon >= 1, "horizon must be at least 1"),
            (self.eps > 0.0, "eps must be positive"),
            (self.lr >= 0.0 && self.lr.is_finite(), "lr must be finite and non-negative"),
            (self.batch_size != Some(0), "batch_size must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(LearnError::HyperParams(msg)),
            None if !self.alpha.is_finite() || !self.zeta.is_finite() => {
                Err(LearnError::HyperParams("alpha and zeta must be finite"))
            }
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SPAR-P")]
    SparP,
    #[serde(rename = "SPAR-R")]
    SparR,
    #[serde(rename = "SPAR-D")]
    SparD,
    #[serde(rename = "SPAR-H")]
    SparH,
    #[serde(rename = "IWR")]
    Iwr,
    #[serde(rename = "HG-DAgger")]
    HgDagger,
    #[serde(rename = "COACH")]
    Coach,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SparP,
        Method::SparR,
        Method::SparD,
        Method::SparH,
        Method::Iwr,
        Method::HgDagger,
        Method::Coach,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SparP => "SPAR-P",
            Method::SparR => "SPAR-R",
            Method::SparD => "SPAR-D",
            Method::SparH => "SPAR-H",
            Method::Iwr => "IWR",
            Method::HgDagger => "HG-DAgger",
            Method::Coach => "COACH",
        }
    }

    /// Methods that train the reward head.
    pub fn trains_reward(self) -> bool {
        matches!(self, Method::SparR | Method::SparH)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Method::ALL
            .into_iter()
            .find(|m| {
                let n: String = m
                    .name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .map(|c| c.to_ascii_lowercase())
                    .collect();
                n == norm
            })
            .ok_or_else(|| LearnError::UnknownMethod(s.into()))
    }
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub method: Method,
    pub epoch: usize,
    /// Direct policy loss: preference BT, cloning NLL or COACH surrogate.
    pub direct: f64,
    pub reward_bt: f64,
    pub rl_surrogate: f64,
    pub intervened: usize,
    pub non_intervened: usize,
    pub steps: usize,
    /// Steps whose KL exceeded the gate, summed over minibatches.
    pub gated: usize,
    pub pairs: usize,
    /// Mean `R(s, a_h) − R(s, a_a)` over all pairs after the epoch.
    pub reward_margin: f64,
    /// Fraction of pairs with `R(s, a_h) > R(s, a_a)` after the epoch.
    pub pair_accuracy: f64,
}
