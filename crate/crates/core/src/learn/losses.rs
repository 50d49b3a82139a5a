//! Every training objective with its analytic head gradient.
//!
//! Losses are written against per-sample latents, so they are independent of
//! how the samples were gathered. Each returns the scalar value and the
//! gradient for the one head it trains; the other head receives none.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::bt::{bt_nll, bt_nll_grad};
use super::LearnError;
use crate::hitl::StepRef;
use crate::net::{ActionDistribution, NetParams};
use crate::world::{MultiDiscreteAction, BRANCHES, CHOICES, ONE_HOT_LEN};

/// Scalar loss and gradient for one head's flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl HeadLoss {
    fn zero(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }
}

/// A statewise preference `a_h ≻ a_a` at a latent state.
#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub step: StepRef,
    pub latent: &'a [f64],
    pub preferred: MultiDiscreteAction,
    pub rejected: MultiDiscreteAction,
}

/// An executed step for the trust-region surrogate.
#[derive(Debug, Clone, Copy)]
pub struct RlSample<'a> {
    pub step: StepRef,
    pub latent: &'a [f64],
    pub executed: MultiDiscreteAction,
    pub advantage: f64,
}

/// An action at a state with a scalar weight (behavior cloning, COACH).
#[derive(Debug, Clone, Copy)]
pub struct WeightedStep<'a> {
    pub latent: &'a [f64],
    pub action: MultiDiscreteAction,
    pub weight: f64,
}

/// `∂ log π(a|s) / ∂ logits`: per branch, one-hot minus probabilities.
fn log_prob_grad(dist: &ActionDistribution, a: &MultiDiscreteAction) -> [f64; ONE_HOT_LEN] {
    let mut g = [0.0; ONE_HOT_LEN];
    for b in 0..BRANCHES {
        let p = dist.branch_probs(b);
        for k in 0..CHOICES {
            let hit = if a.branch(b) == k { 1.0 } else { 0.0 };
            g[b * CHOICES + k] = hit - p[k];
        }
    }
    g
}

fn policy_dist(net: &NetParams, latent: &[f64]) -> ActionDistribution {
    ActionDistribution::from_logits(&net.policy.forward(latent).out)
}

/// SPAR-P: `Σ −log σ(log π(a_h|s) − log π(a_a|s))` on the policy head.
pub fn spar_p_loss(net: &NetParams, pairs: &[PairSample<'_>]) -> HeadLoss {
    let mut out = HeadLoss::zero(net.policy.params().len());
    for pair in pairs {
        let trace = net.policy.forward(pair.latent);
        let dist = ActionDistribution::from_logits(&trace.out);
        let pos = dist.log_prob(&pair.preferred);
        let neg = dist.log_prob(&pair.rejected);
        out.value += bt_nll(pos, neg, 1.0);
        let d = bt_nll_grad(pos, neg, 1.0);
        let gp = log_prob_grad(&dist, &pair.preferred);
        let gn = log_prob_grad(&dist, &pair.rejected);
        let dlogits: Vec<f64> = gp.iter().zip(&gn).map(|(p, n)| d * (p - n)).collect();
        net.policy.backward(pair.latent, &trace, &dlogits, &mut out.grad);
    }
    out
}

/// SPAR-R reward pathway: `Σ −log σ(R(s,a_h) − R(s,a_a))` on the reward head.
pub fn spar_r_loss(net: &NetParams, pairs: &[PairSample<'_>]) -> HeadLoss {
    let mut out = HeadLoss::zero(net.reward.params().len());
    for pair in pairs {
        let xh = NetParams::reward_input(pair.latent, &pair.preferred);
        let xa = NetParams::reward_input(pair.latent, &pair.rejected);
        let th = net.reward.forward(&xh);
        let ta = net.reward.forward(&xa);
        let (rh, ra) = (th.out[0], ta.out[0]);
        out.value += bt_nll(rh, ra, 1.0);
        let d = bt_nll_grad(rh, ra, 1.0);
        net.reward.backward(&xh, &th, &[d], &mut out.grad);
        net.reward.backward(&xa, &ta, &[-d], &mut out.grad);
    }
    out
}

/// SPAR-D: BT on reference-normalized log-probabilities,
/// `Δ(s,a) = log π(a|s) − log π_ref(a|s)`.
pub fn spar_d_loss(
    net: &NetParams,
    reference: &NetParams,
    pairs: &[PairSample<'_>],
    beta: f64,
) -> HeadLoss {
    let mut out = HeadLoss::zero(net.policy.params().len());
    for pair in pairs {
        let trace = net.policy.forward(pair.latent);
        let dist = ActionDistribution::from_logits(&trace.out);
        let rdist = policy_dist(reference, pair.latent);
        let pos = dist.log_prob(&pair.preferred) - rdist.log_prob(&pair.preferred);
        let neg = dist.log_prob(&pair.rejected) - rdist.log_prob(&pair.rejected);
        out.value += bt_nll(pos, neg, beta);
        let d = bt_nll_grad(pos, neg, beta);
        let gp = log_prob_grad(&dist, &pair.preferred);
        let gn = log_prob_grad(&dist, &pair.rejected);
        let dlogits: Vec<f64> = gp.iter().zip(&gn).map(|(p, n)| d * (p - n)).collect();
        net.policy.backward(pair.latent, &trace, &dlogits, &mut out.grad);
    }
    out
}

/// Trust-region surrogate with its per-step KL gate.
#[derive(Debug, Clone, PartialEq)]
pub struct FocopsLoss {
    pub loss: HeadLoss,
    /// Steps with `KL_t > η`, which contribute nothing.
    pub gated: usize,
    pub mean_kl: f64,
}

/// `mean_t 1{KL_t ≤ η} (KL_t − ρ_t A_t / λ)` with `KL_t = KL(π_θ ‖ π_θ0)` and
/// `ρ_t = π_θ(a_e|s) / π_θ0(a_e|s)`.
pub fn focops_loss(
    net: &NetParams,
    reference: &NetParams,
    steps: &[RlSample<'_>],
    eta: f64,
    lambda: f64,
) -> FocopsLoss {
    if steps.is_empty() {
        return FocopsLoss {
            loss: HeadLoss::zero(net.policy.params().len()),
            gated: 0,
            mean_kl: 0.0,
        };
    }
    focops_loss_scaled(net, reference, steps, eta, lambda, 1.0 / steps.len() as f64)
}

/// The surrogate with an explicit per-step weight in place of `1/len`.
/// Gated steps are skipped outright, so dropping one leaves the sums
/// bit-identical.
pub fn focops_loss_scaled(
    net: &NetParams,
    reference: &NetParams,
    steps: &[RlSample<'_>],
    eta: f64,
    lambda: f64,
    scale: f64,
) -> FocopsLoss {
    let mut loss = HeadLoss::zero(net.policy.params().len());
    let mut gated = 0;
    let mut kl_sum = 0.0;
    for s in steps {
        let trace = net.policy.forward(s.latent);
        let dist = ActionDistribution::from_logits(&trace.out);
        let rdist = policy_dist(reference, s.latent);
        let branch_kl = dist.branch_kl(&rdist);
        let kl: f64 = branch_kl.iter().sum();
        kl_sum += kl;
        if kl > eta {
            gated += 1;
            continue;
        }
        let ratio = libm::exp(dist.log_prob(&s.executed) - rdist.log_prob(&s.executed));
        loss.value += scale * (kl - ratio * s.advantage / lambda);
        // ∂KL_b/∂logit_{b,k} = p_k (log p_k − log q_k − KL_b)
        // ∂ρ/∂logit = ρ (onehot − p)
        let glp = log_prob_grad(&dist, &s.executed);
        let mut dlogits = [0.0; ONE_HOT_LEN];
        for b in 0..BRANCHES {
            let p = dist.branch_probs(b);
            for k in 0..CHOICES {
                let i = b * CHOICES + k;
                let dkl = p[k] * (dist.log_probs()[i] - rdist.log_probs()[i] - branch_kl[b]);
                let dratio = ratio * glp[i];
                dlogits[i] = scale * (dkl - dratio * s.advantage / lambda);
            }
        }
        net.policy.backward(s.latent, &trace, &dlogits, &mut loss.grad);
    }
    FocopsLoss {
        loss,
        gated,
        mean_kl: if steps.is_empty() { 0.0 } else { kl_sum / steps.len() as f64 },
    }
}

/// SPAR-H policy objective: `L_P + α L_FOCOPS`, with pairs and RL steps drawn
/// from disjoint steps.
pub fn spar_h_loss(
    net: &NetParams,
    reference: &NetParams,
    pairs: &[PairSample<'_>],
    steps: &[RlSample<'_>],
    alpha: f64,
    eta: f64,
    lambda: f64,
) -> Result<(HeadLoss, FocopsLoss), LearnError> {
    let pair_steps: BTreeSet<StepRef> = pairs.iter().map(|p| p.step).collect();
    if let Some(s) = steps.iter().find(|s| pair_steps.contains(&s.step)) {
        return Err(LearnError::Overlap(s.step));
    }
    let mut total = spar_p_loss(net, pairs);
    let focops = focops_loss(net, reference, steps, eta, lambda);
    if alpha != 0.0 && !steps.is_empty() {
        total.value += alpha * focops.loss.value;
        for (g, f) in total.grad.iter_mut().zip(&focops.loss.grad) {
            *g += alpha * f;
        }
    }
    Ok((total, focops))
}

/// `Σ w_t · (−log π(a_t|s_t))`. Negative weights turn descent into ascent,
/// which is how the COACH update is expressed.
pub fn weighted_nll(net: &NetParams, steps: &[WeightedStep<'_>]) -> HeadLoss {
    let mut out = HeadLoss::zero(net.policy.params().len());
    for s in steps {
        if s.weight == 0.0 {
            continue;
        }
        let trace = net.policy.forward(s.latent);
        let dist = ActionDistribution::from_logits(&trace.out);
        out.value += -s.weight * dist.log_prob(&s.action);
        let g = log_prob_grad(&dist, &s.action);
        let dlogits: Vec<f64> = g.iter().map(|v| -s.weight * v).collect();
        net.policy.backward(s.latent, &trace, &dlogits, &mut out.grad);
    }
    out
}

/// IWR takeover weight: non-intervened over intervened count, falling back
/// to 1 when either count is zero.
pub fn iwr_takeover_weight(non_intervened: usize, intervened: usize) -> f64 {
    if intervened == 0 || non_intervened == 0 {
        1.0
    } else {
        non_intervened as f64 / intervened as f64
    }
}

/// COACH feedback label: −1 on overridden steps, ζ on accepted ones.
pub fn coach_label(intervened: bool, zeta: f64) -> f64 {
    if intervened {
        -1.0
    } else {
        zeta
    }
}

/// Mean squared error `mean ½ (R(s,a) − r)²` on the reward head.
pub fn reward_regression(net: &NetParams, samples: &[(&[f64], MultiDiscreteAction, f64)]) -> HeadLoss {
    let mut out = HeadLoss::zero(net.reward.params().len());
    if samples.is_empty() {
        return out;
    }
    let scale = 1.0 / samples.len() as f64;
    for (latent, a, target) in samples {
        let x = NetParams::reward_input(latent, a);
        let trace = net.reward.forward(&x);
        let err = trace.out[0] - target;
        out.value += scale * 0.5 * err * err;
        net.reward.backward(&x, &trace, &[scale * err], &mut out.grad);
    }
    out
}

/// Helper for gradient checks of the policy-side log-likelihood.
pub fn policy_log_prob(net: &NetParams, latent: &[f64], a: &MultiDiscreteAction) -> f64 {
    policy_dist(net, latent).log_prob(a)
}
