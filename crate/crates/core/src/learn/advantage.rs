use alloc::vec::Vec;

/// Truncated reward-to-go and its within-episode standardization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdvantageBatch {
    /// `Ĝ_t = Σ_{k<K_t} γ^k r_{t+k}` with `K_t = min(K, T − t)`.
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `returns`.
    pub std: f64,
    /// `(Ĝ_t − Ḡ) / (σ_G + ε)`.
    pub advantages: Vec<f64>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Computes the batch for one episode's time-ordered rewards.
pub fn advantages(rewards: &[f64], gamma: f64, horizon: usize, eps: f64) -> AdvantageBatch {
    let n = rewards.len();
    if n == 0 {
        return AdvantageBatch::default();
    }
    let returns: Vec<f64> = (0..n)
        .map(|t| {
            let kt = horizon.min(n - t);
            let mut g = 0.0;
            let mut disc = 1.0;
            for r in &rewards[t..t + kt] {
                g += disc * r;
                disc *= gamma;
            }
            g
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n as f64;
    let std = libm::sqrt(var);
    let advantages = returns.iter().map(|g| (g - mean) / (std + eps)).collect();
    AdvantageBatch {
        returns,
        mean,
        std,
        advantages,
    }
}
