//! Retraining over the cumulative buffer.
//!
//! Latents are recomputed from each episode's executed history with the
//! frozen encoder, once per call. Every method then runs `epochs` passes of
//! seeded minibatch updates; shuffles come from per-purpose streams indexed by
//! epoch, so methods that share a pass see identical batches.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::losses::{
    coach_label, focops_loss, iwr_takeover_weight, spar_d_loss, spar_h_loss, spar_r_loss,
    weighted_nll, PairSample, RlSample, WeightedStep,
};
use super::{advantages, HyperParams, LearnError, LossReport, Method};
use crate::hitl::{PreferencePair, ReplayBuffer, StepRef};
use crate::net::{Head, NetParams, Optimizer};
use crate::rng::{self, streams};

/// A preference bound to its position in the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundPair {
    pub pair: PreferencePair,
    pub trajectory: usize,
    pub t: usize,
}

/// Locates each pair's record, rejecting pairs at non-intervened steps.
pub fn bind_pairs(buffer: &ReplayBuffer, pairs: &[PreferencePair]) -> Result<Vec<BoundPair>, LearnError> {
    pairs
        .iter()
        .map(|p| {
            let trajectory = buffer
                .trajectories()
                .iter()
                .position(|tr| tr.episode_id == p.step.episode)
                .ok_or(LearnError::NotIntervened(p.step))?;
            let t = p.step.t as usize;
            let rec = buffer.trajectories()[trajectory]
                .records
                .get(t)
                .ok_or(LearnError::NotIntervened(p.step))?;
            if !rec.m || rec.excluded_from_training {
                return Err(LearnError::NotIntervened(p.step));
            }
            Ok(BoundPair { pair: *p, trajectory, t })
        })
        .collect()
}

/// Buffer contents arranged for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// `latents[trajectory][t]`, recomputed from the executed history.
    pub latents: Vec<Vec<Vec<f64>>>,
    pub pairs: Vec<BoundPair>,
    /// Per trajectory, time indices of trainable non-intervened steps.
    pub rl_steps: Vec<Vec<usize>>,
    /// Trainable intervened steps as `(trajectory, t)`.
    pub intervened: Vec<(usize, usize)>,
    /// Trainable steps of either kind, in collection order.
    pub trainable: Vec<(usize, usize)>,
}

impl Prepared {
    pub fn new(net: &NetParams, buffer: &ReplayBuffer) -> Result<Self, LearnError> {
        let mut latents = Vec::with_capacity(buffer.len());
        let mut rl_steps = Vec::with_capacity(buffer.len());
        let mut intervened = Vec::new();
        let mut trainable = Vec::new();
        for (i, tr) in buffer.trajectories().iter().enumerate() {
            let zs = net.encode_history(tr.records.iter().map(|r| &r.observation))?;
            latents.push(zs.into_iter().map(|z| z.0).collect());
            let mut rl = Vec::new();
            for (t, r) in tr.records.iter().enumerate() {
                if r.excluded_from_training {
                    continue;
                }
                trainable.push((i, t));
                if r.m {
                    intervened.push((i, t));
                } else {
                    rl.push(t);
                }
            }
            rl_steps.push(rl);
        }
        let pairs = bind_pairs(buffer, &crate::hitl::extract_preferences(buffer))?;
        Ok(Self {
            latents,
            pairs,
            rl_steps,
            intervened,
            trainable,
        })
    }

    fn pair_sample(&self, p: &BoundPair) -> PairSample<'_> {
        PairSample {
            step: p.pair.step,
            latent: &self.latents[p.trajectory][p.t],
            preferred: p.pair.a_h,
            rejected: p.pair.a_a,
        }
    }

    pub fn non_intervened(&self) -> usize {
        self.rl_steps.iter().map(Vec::len).sum()
    }
}

/// `R(s, a_h) − R(s, a_a)` for every bound pair.
pub fn pair_margins(net: &NetParams, prep: &Prepared) -> Result<Vec<f64>, LearnError> {
    prep.pairs
        .iter()
        .map(|p| {
            let z = &prep.latents[p.trajectory][p.t];
            Ok(net.reward_estimate(z, &p.pair.a_h)? - net.reward_estimate(z, &p.pair.a_a)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub params: NetParams,
    pub reports: Vec<LossReport>,
}

fn shuffled(n: usize, seed: u64, stream: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::indexed_stream(seed, stream, epoch as u64));
    idx
}

/// `[i·n/k, (i+1)·n/k)` for `i < k`.
fn even_chunk(n: usize, k: usize, i: usize) -> core::ops::Range<usize> {
    (i * n / k)..((i + 1) * n / k)
}

struct Trainer<'a> {
    net: NetParams,
    hp: &'a HyperParams,
    prep: &'a Prepared,
    buffer: &'a ReplayBuffer,
    policy_opt: Optimizer,
    reward_opt: Optimizer,
}

impl Trainer<'_> {
    fn batch(&self, n: usize) -> usize {
        self.hp.batch_size.unwrap_or(n).max(1)
    }

    fn step(&mut self, head: Head, mut grad: Vec<f64>) -> Result<(), LearnError> {
        let opt = match head {
            Head::Policy => &mut self.policy_opt,
            Head::Reward => &mut self.reward_opt,
        };
        self.net.apply_gradient(head, &mut grad, opt, self.hp.lr)?;
        Ok(())
    }

    /// One BT pass over the pairs on the reward head.
    fn reward_pass(&mut self, epoch: usize) -> Result<f64, LearnError> {
        let order = shuffled(self.prep.pairs.len(), self.hp.seed, streams::SHUFFLE_REWARD, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch(order.len())) {
            let batch: Vec<_> = chunk.iter().map(|&i| self.prep.pair_sample(&self.prep.pairs[i])).collect();
            let loss = spar_r_loss(&self.net, &batch);
            total += loss.value;
            self.step(Head::Reward, loss.grad)?;
        }
        Ok(total)
    }

    /// Reward-to-go advantages from the current reward head, flattened over
    /// episodes in collection order.
    fn rl_samples(&self) -> Result<Vec<(StepRef, usize, usize, f64)>, LearnError> {
        let mut out = Vec::new();
        for (i, steps) in self.prep.rl_steps.iter().enumerate() {
            let records = &self.buffer.trajectories()[i].records;
            let rewards = steps
                .iter()
                .map(|&t| self.net.reward_estimate(&self.prep.latents[i][t], &records[t].a_exec))
                .collect::<Result<Vec<_>, _>>()?;
            let batch = advantages(&rewards, self.hp.gamma, self.hp.horizon, self.hp.eps);
            for (k, &t) in steps.iter().enumerate() {
                out.push((records[t].step_ref(), i, t, batch.advantages[k]));
            }
        }
        Ok(out)
    }

    fn rl_sample<'p>(&'p self, s: &(StepRef, usize, usize, f64)) -> RlSample<'p> {
        RlSample {
            step: s.0,
            latent: &self.prep.latents[s.1][s.2],
            executed: self.buffer.trajectories()[s.1].records[s.2].a_exec,
            advantage: s.3,
        }
    }

    /// Preference BT on the policy plus, when `alpha` is nonzero, the gated
    /// trust-region term on non-intervened steps. The number of updates is
    /// set by the pair batches, or by the RL steps when there are no pairs.
    fn hybrid_pass(
        &mut self,
        epoch: usize,
        reference: &NetParams,
        alpha: f64,
        rl: &[(StepRef, usize, usize, f64)],
    ) -> Result<(f64, f64, usize), LearnError> {
        let pair_order = shuffled(self.prep.pairs.len(), self.hp.seed, streams::SHUFFLE_PAIRS, epoch);
        let use_rl = alpha != 0.0 && !rl.is_empty();
        let step_order = if use_rl {
            shuffled(rl.len(), self.hp.seed, streams::SHUFFLE_STEPS, epoch)
        } else {
            Vec::new()
        };
        let bs = self.batch(pair_order.len());
        let nb = if pair_order.is_empty() {
            step_order.len().div_ceil(self.batch(step_order.len()))
        } else {
            pair_order.len().div_ceil(bs)
        };
        let (mut direct, mut surrogate, mut gated) = (0.0, 0.0, 0);
        for b in 0..nb {
            let pr = (b * bs).min(pair_order.len())..((b + 1) * bs).min(pair_order.len());
            let pairs: Vec<_> = pair_order[pr]
                .iter()
                .map(|&i| self.prep.pair_sample(&self.prep.pairs[i]))
                .collect();
            let steps: Vec<_> = step_order[even_chunk(step_order.len(), nb, b)]
                .iter()
                .map(|&i| self.rl_sample(&rl[i]))
                .collect();
            let (loss, focops) = spar_h_loss(
                &self.net,
                reference,
                &pairs,
                &steps,
                alpha,
                self.hp.eta,
                self.hp.lambda,
            )?;
            direct += loss.value - if use_rl { alpha * focops.loss.value } else { 0.0 };
            surrogate += focops.loss.value;
            gated += focops.gated;
            self.step(Head::Policy, loss.grad)?;
        }
        Ok((direct, surrogate, gated))
    }

    /// Trust-region term alone on non-intervened steps.
    fn focops_pass(
        &mut self,
        epoch: usize,
        reference: &NetParams,
        rl: &[(StepRef, usize, usize, f64)],
    ) -> Result<(f64, usize), LearnError> {
        let order = shuffled(rl.len(), self.hp.seed, streams::SHUFFLE_STEPS, epoch);
        let (mut total, mut gated) = (0.0, 0);
        for chunk in order.chunks(self.batch(order.len())) {
            let steps: Vec<_> = chunk.iter().map(|&i| self.rl_sample(&rl[i])).collect();
            let f = focops_loss(&self.net, reference, &steps, self.hp.eta, self.hp.lambda);
            total += f.loss.value;
            gated += f.gated;
            self.step(Head::Policy, f.loss.grad)?;
        }
        Ok((total, gated))
    }

    fn dpo_pass(&mut self, epoch: usize, reference: &NetParams) -> Result<f64, LearnError> {
        let order = shuffled(self.prep.pairs.len(), self.hp.seed, streams::SHUFFLE_PAIRS, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch(order.len())) {
            let batch: Vec<_> = chunk.iter().map(|&i| self.prep.pair_sample(&self.prep.pairs[i])).collect();
            let loss = spar_d_loss(&self.net, reference, &batch, self.hp.beta);
            total += loss.value;
            self.step(Head::Policy, loss.grad)?;
        }
        Ok(total)
    }

    /// Weighted cloning of executed actions over `(trajectory, t)` steps.
    fn cloning_pass(&mut self, epoch: usize, steps: &[(usize, usize)], weight: impl Fn(bool) -> f64) -> Result<f64, LearnError> {
        let order = shuffled(steps.len(), self.hp.seed, streams::SHUFFLE_BC, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch(order.len())) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&k| {
                    let (i, t) = steps[k];
                    let r = &self.buffer.trajectories()[i].records[t];
                    WeightedStep {
                        latent: &self.prep.latents[i][t],
                        action: r.a_exec,
                        weight: weight(r.m),
                    }
                })
                .collect();
            let loss = weighted_nll(&self.net, &batch);
            total += loss.value;
            self.step(Head::Policy, loss.grad)?;
        }
        Ok(total)
    }

    /// Per-step feedback ascent in collection order.
    fn coach_pass(&mut self) -> Result<f64, LearnError> {
        let mut total = 0.0;
        for &(i, t) in &self.prep.trainable {
            let r = &self.buffer.trajectories()[i].records[t];
            let step = WeightedStep {
                latent: &self.prep.latents[i][t],
                action: r.a_agent,
                weight: coach_label(r.m, self.hp.zeta),
            };
            let loss = weighted_nll(&self.net, &[step]);
            total += loss.value;
            self.step(Head::Policy, loss.grad)?;
        }
        Ok(total)
    }
}

/// Runs `hp.epochs` epochs of `method` over the whole buffer and returns
/// the retrained parameters with one report per epoch.
pub fn retrain(
    method: Method,
    buffer: &ReplayBuffer,
    net: &NetParams,
    hp: &HyperParams,
) -> Result<RetrainOutcome, LearnError> {
    hp.validate()?;
    if buffer.steps() == 0 {
        return Err(LearnError::EmptyBuffer);
    }
    let prep = Prepared::new(net, buffer)?;
    let theta0 = net.clone();
    let mut tr = Trainer {
        net: net.clone(),
        hp,
        prep: &prep,
        buffer,
        policy_opt: match method {
            Method::Coach => Optimizer::sgd(net.policy.params().len()),
            _ => Optimizer::adam(net.policy.params().len()),
        },
        reward_opt: Optimizer::adam(net.reward.params().len()),
    };
    let iwr_weight = iwr_takeover_weight(prep.non_intervened(), prep.intervened.len());
    let mut reports = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let (mut direct, mut reward_bt, mut rl_surrogate, mut gated) = (0.0, 0.0, 0.0, 0);
        let intervened;
        let mut non_intervened = 0;
        match method {
            Method::SparP => {
                let (d, _, _) = tr.hybrid_pass(epoch, &theta0, 0.0, &[])?;
                direct = d;
                intervened = prep.pairs.len();
            }
            Method::SparH => {
                reward_bt = tr.reward_pass(epoch)?;
                let rl = tr.rl_samples()?;
                let (d, s, g) = tr.hybrid_pass(epoch, &theta0, hp.alpha, &rl)?;
                (direct, rl_surrogate, gated) = (d, s, g);
                intervened = prep.pairs.len();
                non_intervened = rl.len();
            }
            // Without preferences the reward head carries no feedback, so
            // the policy is left alone.
            Method::SparR if prep.pairs.is_empty() => {
                intervened = 0;
            }
            Method::SparR => {
                reward_bt = tr.reward_pass(epoch)?;
                let rl = tr.rl_samples()?;
                let (s, g) = tr.focops_pass(epoch, &theta0, &rl)?;
                (rl_surrogate, gated) = (s, g);
                intervened = prep.pairs.len();
                non_intervened = rl.len();
            }
            Method::SparD => {
                let reference = tr.net.clone();
                direct = tr.dpo_pass(epoch, &reference)?;
                intervened = prep.pairs.len();
            }
            Method::Iwr => {
                let steps = prep.trainable.clone();
                direct = tr.cloning_pass(epoch, &steps, |m| if m { iwr_weight } else { 1.0 })?;
                intervened = prep.intervened.len();
                non_intervened = prep.non_intervened();
            }
            Method::HgDagger => {
                let steps = prep.intervened.clone();
                direct = tr.cloning_pass(epoch, &steps, |_| 1.0)?;
                intervened = steps.len();
            }
            Method::Coach => {
                direct = tr.coach_pass()?;
                intervened = prep.intervened.len();
                non_intervened = prep.non_intervened();
            }
        }
        let margins = pair_margins(&tr.net, &prep)?;
        let n = margins.len();
        let (reward_margin, pair_accuracy) = if n == 0 {
            (0.0, 0.0)
        } else {
            (
                margins.iter().sum::<f64>() / n as f64,
                margins.iter().filter(|&&m| m > 0.0).count() as f64 / n as f64,
            )
        };
        reports.push(LossReport {
            method,
            epoch,
            direct,
            reward_bt,
            rl_surrogate,
            intervened,
            non_intervened,
            steps: intervened + non_intervened,
            gated,
            pairs: prep.pairs.len(),
            reward_margin,
            pair_accuracy,
        });
    }
    if !tr.net.is_finite() {
        return Err(LearnError::Net(crate::net::NetError::NonFinite { tensor: "retrained parameters" }));
    }
    Ok(RetrainOutcome {
        params: tr.net,
        reports,
    })
}
