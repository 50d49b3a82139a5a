//! Bradley–Terry preference likelihood.

use crate::net::sigmoid;

/// `−log σ(x)` computed without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        libm::log1p(libm::exp(-x))
    } else {
        -x + libm::log1p(libm::exp(x))
    }
}

/// `−log σ(β (score_pos − score_neg))`.
pub fn bt_nll(score_pos: f64, score_neg: f64, beta: f64) -> f64 {
    neg_log_sigmoid(beta * (score_pos - score_neg))
}

/// Derivative of [`bt_nll`] with respect to `score_pos`; the derivative
/// with respect to `score_neg` is its negation.
pub fn bt_nll_grad(score_pos: f64, score_neg: f64, beta: f64) -> f64 {
    -beta * sigmoid(-beta * (score_pos - score_neg))
}

/// `σ(β (score_pos − score_neg))`, the modeled preference probability.
pub fn bt_probability(score_pos: f64, score_neg: f64, beta: f64) -> f64 {
    sigmoid(beta * (score_pos - score_neg))
}
