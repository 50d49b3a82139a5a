use alloc::vec;
use alloc::vec::Vec;

/// Single-layer GRU cell.
///
/// ```text
/// u  = σ(W_u x + U_u h + b_u)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_c x + U_c (r ⊙ h) + b_c)
/// h' = (1 − u) ⊙ h + u ⊙ h̃
/// ```
///
/// Gate blocks are stacked in the order update, reset, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub(crate) input: usize,
    pub(crate) hidden: usize,
    /// `3H × I`, row-major.
    pub(crate) w_input: Vec<f64>,
    /// `3H × H`, row-major.
    pub(crate) w_hidden: Vec<f64>,
    /// `3H`.
    pub(crate) bias: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Gru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w_input: vec![0.0; 3 * hidden * input],
            w_hidden: vec![0.0; 3 * hidden * hidden],
            bias: vec![0.0; 3 * hidden],
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w_input(&self) -> &[f64] {
        &self.w_input
    }

    pub fn w_hidden(&self) -> &[f64] {
        &self.w_hidden
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// One recurrent step. Dimensions are checked by the caller.
    pub fn step(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        let hd = self.hidden;
        // Input projections for all three gates; inputs are mostly 0/1 so
        // skip zero entries.
        let mut pre = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (row, p) in pre.iter_mut().enumerate() {
                *p += self.w_input[row * self.input + i] * xi;
            }
        }
        let recur = |gate: usize, j: usize, v: &[f64]| -> f64 {
            let row = &self.w_hidden[(gate * hd + j) * hd..(gate * hd + j + 1) * hd];
            row.iter().zip(v).map(|(w, a)| w * a).sum()
        };
        let mut update = vec![0.0; hd];
        let mut gated = vec![0.0; hd];
        for j in 0..hd {
            update[j] = sigmoid(pre[j] + recur(0, j, h));
            let reset = sigmoid(pre[hd + j] + recur(1, j, h));
            gated[j] = reset * h[j];
        }
        (0..hd)
            .map(|j| {
                let cand = libm::tanh(pre[2 * hd + j] + recur(2, j, &gated));
                (1.0 - update[j]) * h[j] + update[j] * cand
            })
            .collect()
    }
}
