use rand::Rng;

use crate::world::{MultiDiscreteAction, BRANCHES, CHOICES, ONE_HOT_LEN};

/// Factorized categorical distribution over the four action branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    logits: [f64; ONE_HOT_LEN],
    log_probs: [f64; ONE_HOT_LEN],
}

impl ActionDistribution {
    /// Per-branch log-softmax of `logits` (branch-major, 4 × 3).
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut l = [0.0; ONE_HOT_LEN];
        l.copy_from_slice(&logits[..ONE_HOT_LEN]);
        let mut log_probs = [0.0; ONE_HOT_LEN];
        for b in 0..BRANCHES {
            let row = &l[b * CHOICES..(b + 1) * CHOICES];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for k in 0..CHOICES {
                log_probs[b * CHOICES + k] = row[k] - lse;
            }
        }
        Self {
            logits: l,
            log_probs,
        }
    }

    pub fn uniform() -> Self {
        Self::from_logits(&[0.0; ONE_HOT_LEN])
    }

    pub fn logits(&self) -> &[f64; ONE_HOT_LEN] {
        &self.logits
    }

    pub fn log_probs(&self) -> &[f64; ONE_HOT_LEN] {
        &self.log_probs
    }

    pub fn branch_probs(&self, branch: usize) -> [f64; CHOICES] {
        let mut p = [0.0; CHOICES];
        for (k, v) in p.iter_mut().enumerate() {
            *v = libm::exp(self.log_probs[branch * CHOICES + k]);
        }
        p
    }

    pub fn probs(&self) -> [f64; ONE_HOT_LEN] {
        let mut p = [0.0; ONE_HOT_LEN];
        for (v, lp) in p.iter_mut().zip(&self.log_probs) {
            *v = libm::exp(*lp);
        }
        p
    }

    /// Joint log-probability: the sum of the four branch log-probabilities.
    pub fn log_prob(&self, a: &MultiDiscreteAction) -> f64 {
        (0..BRANCHES)
            .map(|b| self.log_probs[b * CHOICES + a.branch(b)])
            .sum()
    }

    /// Argmax per branch, ties resolved to the lowest index.
    pub fn greedy(&self) -> MultiDiscreteAction {
        let mut out = [0u8; BRANCHES];
        for (b, o) in out.iter_mut().enumerate() {
            let row = &self.logits[b * CHOICES..(b + 1) * CHOICES];
            let mut best = 0;
            for k in 1..CHOICES {
                if row[k] > row[best] {
                    best = k;
                }
            }
            *o = best as u8;
        }
        MultiDiscreteAction::from_branches(out).expect("valid branch indices")
    }

    /// Samples each branch independently by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MultiDiscreteAction {
        let mut out = [0u8; BRANCHES];
        for (b, o) in out.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let p = self.branch_probs(b);
            let mut acc = 0.0;
            let mut pick = CHOICES - 1;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            *o = pick as u8;
        }
        MultiDiscreteAction::from_branches(out).expect("valid branch indices")
    }

    /// KL per branch, `KL(self_b ‖ other_b)`.
    pub fn branch_kl(&self, other: &Self) -> [f64; BRANCHES] {
        let mut out = [0.0; BRANCHES];
        for (b, o) in out.iter_mut().enumerate() {
            *o = (0..CHOICES)
                .map(|k| {
                    let i = b * CHOICES + k;
                    libm::exp(self.log_probs[i]) * (self.log_probs[i] - other.log_probs[i])
                })
                .sum();
        }
        out
    }

    /// Exact KL over the 81 joint actions; under factorization it is the
    /// sum of the branch KLs.
    pub fn kl(&self, other: &Self) -> f64 {
        self.branch_kl(other).iter().sum()
    }
}
