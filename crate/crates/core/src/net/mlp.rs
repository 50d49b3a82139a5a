use alloc::vec;
use alloc::vec::Vec;

/// Two-layer perceptron `W2 · tanh(W1 x + b1) + b2` over one flat parameter
/// vector laid out as `[W1 (row-major), b1, W2 (row-major), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; Self::param_count(input, hidden, output)],
        }
    }

    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let (b1, _, _) = self.offsets();
        &mut self.params[..b1]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let (_, w2, b2) = self.offsets();
        &mut self.params[w2..b2]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let (_, _, b2) = self.offsets();
        &mut self.params[b2..]
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        debug_assert_eq!(x.len(), self.input);
        let (b1o, w2o, b2o) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[j * self.input..(j + 1) * self.input];
                let pre = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[b1o + j];
                libm::tanh(pre)
            })
            .collect();
        let out = (0..self.output)
            .map(|k| {
                let row = &p[w2o + k * self.hidden..w2o + (k + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + p[b2o + k]
            })
            .collect();
        MlpTrace { hidden, out }
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂out`.
    pub fn backward(&self, x: &[f64], trace: &MlpTrace, dout: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let (b1o, w2o, b2o) = self.offsets();
        let p = &self.params;
        let mut dpre = vec![0.0; self.hidden];
        for (k, &dk) in dout.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            grad[b2o + k] += dk;
            let base = w2o + k * self.hidden;
            for j in 0..self.hidden {
                grad[base + j] += dk * trace.hidden[j];
                dpre[j] += dk * p[base + j];
            }
        }
        for j in 0..self.hidden {
            let h = trace.hidden[j];
            let d = dpre[j] * (1.0 - h * h);
            if d == 0.0 {
                continue;
            }
            grad[b1o + j] += d;
            let row = &mut grad[j * self.input..(j + 1) * self.input];
            for (g, v) in row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }
}
