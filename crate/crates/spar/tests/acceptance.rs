//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any unexpected failure. Criteria listed in `KNOWN_FAILURES`
//! are reported but tolerated unless `SPAR_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spar::run::{self, run_full, MethodEval, NoviceEval, RunDir};
use spar_core::hitl::{extract_preferences, run_episode, PassiveOverseer, ReplayBuffer, StepRef};
use spar_core::learn::*;
use spar_core::net::{Head, NetConfig, NetParams, Optimizer};
use spar_core::protocol::{intervention_table, ExperimentConfig, InterventionRow, InterventionTable};
use spar_core::world::{CoverageState, Episode, MultiDiscreteAction, RiverWorld, WorldSpec, JOINT_ACTIONS};

const KNOWN_FAILURES: &[&str] = &["protocol"];
const SEEDS: [u64; 3] = [1, 2, 3];
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_POINTS: usize = 100;
const FD_NET: NetConfig = NetConfig {
    hidden: 16,
    head_hidden: 16,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Rng8 = ChaCha8Rng;

fn random_net(rng: &mut Rng8, config: NetConfig) -> NetParams {
    let mut net = NetParams::init(config, rng.random());
    for p in net.policy.params_mut().iter_mut().chain(net.reward.params_mut()) {
        *p += rng.random_range(-0.5..0.5);
    }
    net
}

fn latents(rng: &mut Rng8, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn action(rng: &mut Rng8) -> MultiDiscreteAction {
    MultiDiscreteAction::from_joint_index(rng.random_range(0..JOINT_ACTIONS)).unwrap()
}

fn pair_samples<'a>(rng: &mut Rng8, zs: &'a [Vec<f64>], episode: u32) -> Vec<PairSample<'a>> {
    zs.iter()
        .enumerate()
        .map(|(t, z)| {
            let preferred = action(rng);
            let rejected = loop {
                let a = action(rng);
                if a != preferred {
                    break a;
                }
            };
            PairSample {
                step: StepRef { episode, t: t as u32 },
                latent: z,
                preferred,
                rejected,
            }
        })
        .collect()
}

fn rl_samples<'a>(rng: &mut Rng8, zs: &'a [Vec<f64>], episode: u32) -> Vec<RlSample<'a>> {
    zs.iter()
        .enumerate()
        .map(|(t, z)| RlSample {
            step: StepRef { episode, t: t as u32 },
            latent: z,
            executed: action(rng),
            advantage: rng.random_range(-2.0..2.0),
        })
        .collect()
}

fn kl(net: &NetParams, reference: &NetParams, z: &[f64]) -> f64 {
    net.distribution(z).unwrap().kl(&reference.distribution(z).unwrap())
}

/// Relative error of the analytic head gradient against central
/// differences, as vector norms.
fn fd_error(net: &NetParams, head: Head, f: &dyn Fn(&NetParams) -> HeadLoss) -> f64 {
    let analytic = f(net).grad;
    let mut probe = net.clone();
    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_fd = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let p0 = probe.head(head).params()[i];
        probe.head_mut(head).params_mut()[i] = p0 + FD_STEP;
        let up = f(&probe).value;
        probe.head_mut(head).params_mut()[i] = p0 - FD_STEP;
        let down = f(&probe).value;
        probe.head_mut(head).params_mut()[i] = p0;
        let fd = (up - down) / (2.0 * FD_STEP);
        diff += (a - fd) * (a - fd);
        norm_a += a * a;
        norm_fd += fd * fd;
    }
    let scale = f64::max(norm_a, norm_fd);
    if scale == 0.0 {
        diff.sqrt()
    } else {
        (diff / scale).sqrt()
    }
}

struct GradCheck {
    name: &'static str,
    worst: f64,
    points: usize,
    /// Points redrawn: near the KL gate, or without any intervened step.
    skipped: usize,
}

fn check_loss(name: &'static str, seed: u64, mut point: impl FnMut(&mut Rng8) -> Option<f64>) -> GradCheck {
    let mut rng = Rng8::seed_from_u64(seed);
    let mut g = GradCheck {
        name,
        worst: 0.0,
        points: 0,
        skipped: 0,
    };
    while g.points < FD_POINTS {
        match point(&mut rng) {
            Some(e) => {
                g.worst = g.worst.max(e);
                g.points += 1;
            }
            None => g.skipped += 1,
        }
    }
    g
}

/// Random cloning steps with intervention flags.
fn flagged_steps(rng: &mut Rng8, zs: &[Vec<f64>]) -> Vec<(usize, MultiDiscreteAction, bool)> {
    (0..zs.len()).map(|i| (i, action(rng), rng.random_bool(0.4))).collect()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let d = FD_NET.hidden;
    let mut checks = Vec::new();

    checks.push(check_loss("bradley-terry", 10, |rng| {
        let (a, b, beta) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.2..2.0));
        let fd_a = (bt_nll(a + FD_STEP, b, beta) - bt_nll(a - FD_STEP, b, beta)) / (2.0 * FD_STEP);
        let fd_b = (bt_nll(a, b + FD_STEP, beta) - bt_nll(a, b - FD_STEP, beta)) / (2.0 * FD_STEP);
        let g = bt_nll_grad(a, b, beta);
        Some(((g - fd_a).abs() / g.abs()).max((-g - fd_b).abs() / g.abs()))
    }));
    checks.push(check_loss("spar-p", 11, |rng| {
        let net = random_net(rng, FD_NET);
        let zs = latents(rng, 4, d);
        let ps = pair_samples(rng, &zs, 0);
        Some(fd_error(&net, Head::Policy, &|n| spar_p_loss(n, &ps)))
    }));
    checks.push(check_loss("spar-r", 12, |rng| {
        let net = random_net(rng, FD_NET);
        let zs = latents(rng, 4, d);
        let ps = pair_samples(rng, &zs, 0);
        Some(fd_error(&net, Head::Reward, &|n| spar_r_loss(n, &ps)))
    }));
    checks.push(check_loss("focops", 13, |rng| {
        let net = random_net(rng, FD_NET);
        let mut reference = net.clone();
        for p in reference.policy.params_mut() {
            *p += rng.random_range(-0.15..0.15);
        }
        let zs = latents(rng, 6, d);
        let steps = rl_samples(rng, &zs, 0);
        let (eta, lambda) = (rng.random_range(0.02..0.2), rng.random_range(0.5..3.0));
        if zs.iter().any(|z| (kl(&net, &reference, z) - eta).abs() < 1e-3) {
            return None;
        }
        Some(fd_error(&net, Head::Policy, &|n| focops_loss(n, &reference, &steps, eta, lambda).loss))
    }));
    checks.push(check_loss("spar-h", 14, |rng| {
        let net = random_net(rng, FD_NET);
        let mut reference = net.clone();
        for p in reference.policy.params_mut() {
            *p += rng.random_range(-0.15..0.15);
        }
        let zs = latents(rng, 6, d);
        let ps = pair_samples(rng, &zs[..2], 0);
        let steps = rl_samples(rng, &zs[2..], 1);
        let (alpha, eta) = (rng.random_range(0.0..2.0), rng.random_range(0.02..0.2));
        if zs[2..].iter().any(|z| (kl(&net, &reference, z) - eta).abs() < 1e-3) {
            return None;
        }
        Some(fd_error(&net, Head::Policy, &|n| {
            spar_h_loss(n, &reference, &ps, &steps, alpha, eta, 1.5).unwrap().0
        }))
    }));
    checks.push(check_loss("spar-d", 15, |rng| {
        let net = random_net(rng, FD_NET);
        let reference = random_net(rng, FD_NET);
        let zs = latents(rng, 4, d);
        let ps = pair_samples(rng, &zs, 0);
        let beta = rng.random_range(0.2..3.0);
        Some(fd_error(&net, Head::Policy, &|n| spar_d_loss(n, &reference, &ps, beta)))
    }));
    checks.push(check_loss("iwr", 16, |rng| {
        let net = random_net(rng, FD_NET);
        let zs = latents(rng, 6, d);
        let flagged = flagged_steps(rng, &zs);
        let n_int = flagged.iter().filter(|s| s.2).count();
        let w = iwr_takeover_weight(flagged.len() - n_int, n_int);
        let steps: Vec<_> = flagged
            .iter()
            .map(|&(i, a, m)| WeightedStep {
                latent: &zs[i],
                action: a,
                weight: if m { w } else { 1.0 } / flagged.len() as f64,
            })
            .collect();
        Some(fd_error(&net, Head::Policy, &|n| weighted_nll(n, &steps)))
    }));
    checks.push(check_loss("hg-dagger", 17, |rng| {
        let net = random_net(rng, FD_NET);
        let zs = latents(rng, 6, d);
        let steps: Vec<_> = flagged_steps(rng, &zs)
            .into_iter()
            .filter(|s| s.2)
            .map(|(i, a, _)| WeightedStep {
                latent: &zs[i],
                action: a,
                weight: 1.0,
            })
            .collect();
        if steps.is_empty() {
            return None;
        }
        Some(fd_error(&net, Head::Policy, &|n| weighted_nll(n, &steps)))
    }));
    let mut coach_uphill = 0;
    checks.push(check_loss("coach", 18, |rng| {
        let mut net = random_net(rng, FD_NET);
        let zs = latents(rng, 6, d);
        let zeta = rng.random_range(0.0..0.5);
        let steps: Vec<_> = flagged_steps(rng, &zs)
            .into_iter()
            .map(|(i, a, m)| WeightedStep {
                latent: &zs[i],
                action: a,
                weight: coach_label(m, zeta),
            })
            .collect();
        let err = fd_error(&net, Head::Policy, &|n| weighted_nll(n, &steps));
        // Feedback-weighted log-likelihood must rise after a small step.
        let objective = |n: &NetParams| -> f64 {
            steps.iter().map(|s| s.weight * policy_log_prob(n, s.latent, &s.action)).sum()
        };
        let before = objective(&net);
        let mut g = weighted_nll(&net, &steps).grad;
        let mut opt = Optimizer::sgd(g.len());
        net.apply_gradient(Head::Policy, &mut g, &mut opt, 1e-3).unwrap();
        if objective(&net) > before {
            coach_uphill += 1;
        }
        Some(err)
    }));
    checks.push(check_loss("reward-regression", 19, |rng| {
        let net = random_net(rng, FD_NET);
        let zs = latents(rng, 4, d);
        let samples: Vec<_> = zs.iter().map(|z| (z.as_slice(), action(rng), rng.random_range(0.0..1.0))).collect();
        Some(fd_error(&net, Head::Reward, &|n| reward_regression(n, &samples)))
    }));

    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let all_ok = checks.iter().all(|c| c.worst < FD_TOL && c.points == FD_POINTS);
    let summary: Vec<String> = checks
        .iter()
        .map(|c| {
            let skipped = if c.skipped > 0 { format!(", {} redrawn", c.skipped) } else { String::new() };
            format!("{} {:.1e}{skipped}", c.name, c.worst)
        })
        .collect();
    let pass = all_ok && coach_uphill == FD_POINTS && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "{} losses x {FD_POINTS} points, worst rel err {worst:.2e} < {FD_TOL:e}; coach ascent {coach_uphill}/{FD_POINTS}; {:.1}s < 60s [{}]",
            checks.len(),
            elapsed.as_secs_f64(),
            summary.join("; ")
        ),
    )
}

fn unit_values() -> Verdict {
    let mut rng = Rng8::seed_from_u64(20);
    let mut worst_bt = 0.0f64;
    for _ in 0..100 {
        let s = rng.random_range(-50.0..50.0);
        let beta = rng.random_range(0.01..10.0);
        worst_bt = worst_bt.max((bt_nll(s, s, beta) - LN_2).abs());
    }
    let mut uniform = NetParams::init(FD_NET, 0);
    uniform.policy.params_mut().fill(0.0);
    uniform.reward.params_mut().fill(0.0);
    let zs = latents(&mut rng, 1, FD_NET.hidden);
    let ps = pair_samples(&mut rng, &zs, 0);
    worst_bt = worst_bt.max((spar_p_loss(&uniform, &ps).value - LN_2).abs());
    worst_bt = worst_bt.max((spar_r_loss(&uniform, &ps).value - LN_2).abs());
    let net = random_net(&mut rng, FD_NET);
    worst_bt = worst_bt.max((spar_d_loss(&net, &net, &ps, 1.7).value - LN_2).abs());

    let mut worst_focops = 0.0f64;
    for _ in 0..100 {
        let net = random_net(&mut rng, FD_NET);
        let zs = latents(&mut rng, 1, FD_NET.hidden);
        let step = rl_samples(&mut rng, &zs, 0);
        let lambda = rng.random_range(0.1..5.0);
        let f = focops_loss_scaled(&net, &net, &step, 0.05, lambda, 1.0);
        worst_focops = worst_focops.max((f.loss.value + step[0].advantage / lambda).abs());
    }

    let mut identical = 0;
    let mut trials = 0;
    while trials < 100 {
        let net = random_net(&mut rng, FD_NET);
        let mut reference = net.clone();
        for p in reference.policy.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let zs = latents(&mut rng, 8, FD_NET.hidden);
        let steps = rl_samples(&mut rng, &zs, 0);
        let kls: Vec<f64> = zs.iter().map(|z| kl(&net, &reference, z)).collect();
        let mut sorted = kls.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = rng.random_range(1..7);
        if sorted[cut - 1] == sorted[cut] {
            continue;
        }
        let eta = 0.5 * (sorted[cut - 1] + sorted[cut]);
        let scale = 1.0 / steps.len() as f64;
        let full = focops_loss_scaled(&net, &reference, &steps, eta, 1.5, scale);
        let kept: Vec<_> = steps.iter().zip(&kls).filter(|(_, k)| **k <= eta).map(|(s, _)| *s).collect();
        let reduced = focops_loss_scaled(&net, &reference, &kept, eta, 1.5, scale);
        let bits = |l: &FocopsLoss| {
            std::iter::once(l.loss.value.to_bits())
                .chain(l.loss.grad.iter().map(|g| g.to_bits()))
                .collect::<Vec<_>>()
        };
        if full.gated == steps.len() - cut && bits(&full) == bits(&reduced) {
            identical += 1;
        }
        trials += 1;
    }
    verdict(
        worst_bt <= 1e-12 && worst_focops <= 1e-12 && identical == trials,
        format!(
            "BT at equal scores |L - ln 2| <= {worst_bt:.1e}; FOCOPS at reference |L + A/lambda| <= {worst_focops:.1e}; gated removal bitwise identical {identical}/{trials}"
        ),
    )
}

fn submodularity() -> Verdict {
    let world = RiverWorld::new(WorldSpec::straight(10.0, 10.0)).unwrap();
    let n = world.segment_count();
    let coverage = |mask: u32| -> CoverageState {
        CoverageState::from_flags((0..n).map(|i| mask & (1 << i) != 0).collect())
    };
    let gain = |mask: u32, s: usize| -> f64 {
        let mut c = coverage(mask);
        let before = c.count() as f64;
        c.visit(s).unwrap();
        c.count() as f64 - before
    };
    let mut pairs = 0u64;
    let mut violations = 0u64;
    for b in 0u32..(1 << n) {
        // Every subset a of b, including b itself and the empty set.
        let mut a = b;
        loop {
            pairs += 1;
            if coverage(a).count() > coverage(b).count() {
                violations += 1;
            }
            for s in 0..n {
                if gain(a, s) < gain(b, s) {
                    violations += 1;
                }
            }
            if a == 0 {
                break;
            }
            a = (a - 1) & b;
        }
    }

    let river = RiverWorld::new(WorldSpec::default_river()).unwrap();
    let mut rng = Rng8::seed_from_u64(30);
    let mut mismatched = 0;
    let mut steps = 0;
    let mut rewarded = 0;
    for _ in 0..1000 {
        let start = spar_core::protocol::sample_starts(&river, 1, rng.random()).unwrap()[0];
        let mut ep = Episode::start(&river, &start).unwrap();
        let first = ep.coverage.count();
        let mut total = 0.0;
        while !ep.is_terminated() {
            let a = if rng.random_bool(0.5) {
                MultiDiscreteAction::new(1, 1, 2, 1).unwrap()
            } else {
                action(&mut rng)
            };
            let before = ep.coverage.count();
            let out = ep.step(&river, a).unwrap();
            steps += 1;
            total += out.reward;
            rewarded += usize::from(out.reward > 0.0);
            if out.reward != (ep.coverage.count() - before) as f64 {
                mismatched += 1;
            }
        }
        if total != (ep.coverage.count() - first) as f64 {
            mismatched += 1;
        }
    }
    verdict(
        n == 10 && pairs == 59_049 && violations == 0 && mismatched == 0,
        format!(
            "{pairs} subset pairs x {n} segments, {violations} violations; 1000 rollouts ({steps} steps, {rewarded} rewarded), {mismatched} reward/coverage mismatches"
        ),
    )
}

struct SeedRun {
    seed: u64,
    dir: PathBuf,
    cfg: ExperimentConfig,
    novice: NetParams,
    shared: ReplayBuffer,
}

fn extraction(runs: &[SeedRun]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let expected = r
            .shared
            .trajectories()
            .iter()
            .flat_map(|t| &t.records)
            .filter(|rec| rec.m && rec.a_human.is_some_and(|h| h != rec.a_agent))
            .count();
        let got = extract_preferences(&r.shared).len();
        let table = intervention_table(&r.shared);
        let steps: usize = r.shared.trajectories().iter().map(|t| t.records.len()).sum();
        let interventions = r.shared.trajectories().iter().flat_map(|t| &t.records).filter(|x| x.m).count();
        let overall_ok = table.is_consistent()
            && table.overall.steps == steps
            && table.overall.interventions == interventions
            && table.overall.rate == interventions as f64 / steps as f64;
        ok &= got == expected && overall_ok && r.shared.len() == 5;
        parts.push(format!(
            "seed {}: |D_pref| {got} = {expected}, overall {}/{} ({:.2}%)",
            r.seed,
            table.overall.steps,
            table.overall.interventions,
            100.0 * table.overall.rate
        ));
    }
    let paper = [(76, 24), (456, 22), (158, 28), (82, 31), (74, 39)];
    let table = InterventionTable::from_rows(
        paper
            .iter()
            .enumerate()
            .map(|(i, &(s, n))| InterventionRow {
                episode: i as u32,
                steps: s,
                interventions: n,
                rate: n as f64 / s as f64,
            })
            .collect(),
    );
    let paper_ok = table.overall.steps == 846
        && table.overall.interventions == 144
        && (100.0 * table.overall.rate - 17.02).abs() < 0.005;
    parts.push(format!(
        "paper rows -> {}/{} ({:.2}%)",
        table.overall.steps,
        table.overall.interventions,
        100.0 * table.overall.rate
    ));
    verdict(ok && paper_ok, parts.join("; "))
}

fn alignment(runs: &[SeedRun]) -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let hp = HyperParams {
            seed: r.seed,
            ..r.cfg.hyper
        };
        let out = retrain(Method::SparH, &r.shared, &r.novice, &hp).unwrap();
        let prep = Prepared::new(&out.params, &r.shared).unwrap();
        let margins = pair_margins(&out.params, &prep).unwrap();
        let accuracy = margins.iter().filter(|m| **m > 0.0).count() as f64 / margins.len() as f64;
        let curve: Vec<f64> = out.reports.iter().map(|x| x.reward_margin).collect();
        let monotone = curve.windows(2).all(|w| w[1] >= w[0] - 1e-6);
        ok &= out.reports.len() == 10 && accuracy >= 0.9 && monotone && !margins.is_empty();
        parts.push(format!(
            "seed {}: {}/{} pairs ordered ({:.0}%), margin {:.3} -> {:.3}{}",
            r.seed,
            margins.iter().filter(|m| **m > 0.0).count(),
            margins.len(),
            100.0 * accuracy,
            curve[0],
            curve[curve.len() - 1],
            if monotone { ", non-decreasing" } else { ", NOT monotone" }
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    parts.push(format!("{:.1}s < 300s", elapsed.as_secs_f64()));
    verdict(ok, parts.join("; "))
}

fn protocol(runs: &[SeedRun], elapsed: Duration) -> (Verdict, Vec<String>) {
    let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut per_seed = Vec::new();
    for r in runs {
        let dir = RunDir::open(&r.dir).unwrap();
        let novice: NoviceEval = dir.read_json(run::NOVICE_EVAL_FILE).unwrap();
        by_method
            .entry("novice".into())
            .or_default()
            .push((novice.baseline.mean, novice.baseline.std));
        let mut line = format!("seed {}: novice {:.1}/{:.1}", r.seed, novice.baseline.mean, novice.baseline.std);
        for &m in &r.cfg.methods {
            let eval: MethodEval = dir.read_json(&format!("{}/eval.json", run::method_dir(m))).unwrap();
            by_method
                .entry(m.name().into())
                .or_default()
                .push((eval.final_eval.mean, eval.final_eval.std));
            line += &format!(", {} {:.1}/{:.1}", m.name(), eval.final_eval.mean, eval.final_eval.std);
        }
        per_seed.push(line);
    }
    let avg = |v: &[(f64, f64)]| {
        let n = v.len() as f64;
        (v.iter().map(|x| x.0).sum::<f64>() / n, v.iter().map(|x| x.1).sum::<f64>() / n)
    };
    let (nov_mean, nov_std) = avg(&by_method["novice"]);
    let (h_mean, h_std) = avg(&by_method[Method::SparH.name()]);
    let mut ranked: Vec<(String, f64, f64)> = by_method
        .iter()
        .filter(|(k, _)| *k != "novice")
        .map(|(k, v)| {
            let (m, s) = avg(v);
            (k.clone(), m, s)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)));
    let mut notes = per_seed;
    notes.push(format!(
        "ordering (seed-averaged mean/std): {}",
        ranked
            .iter()
            .map(|(k, m, s)| format!("{k} {m:.1}/{s:.1}"))
            .collect::<Vec<_>>()
            .join(" > ")
    ));
    let pass = h_mean >= 1.1 * nov_mean && h_std <= nov_std && elapsed < Duration::from_secs(1200);
    (
        verdict(
            pass,
            format!(
                "SPAR-H mean {h_mean:.1} vs 1.1 x novice {:.1}; SPAR-H std {h_std:.1} vs novice {nov_std:.1}; {:.0}s < 1200s",
                1.1 * nov_mean,
                elapsed.as_secs_f64()
            ),
        ),
        notes,
    )
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &SeedRun, scratch: &Path) -> Verdict {
    let again = scratch.join("again");
    if let Err(e) = run_full(&again, &first.cfg) {
        return verdict(false, format!("second run failed: {e}"));
    }
    let (a, b) = (tree(&first.dir), tree(&again));
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let missing = b.keys().filter(|k| !a.contains_key(*k)).count();
    let checkpoints = a.keys().filter(|k| k.ends_with(".ckpt")).count();
    let logs = a.keys().filter(|k| k.ends_with(".jsonl")).count();
    let reports = a.keys().filter(|k| k.starts_with("report/")).count();
    verdict(
        differing.is_empty() && missing == 0 && checkpoints > 0,
        format!(
            "seed {}: {} files ({checkpoints} checkpoints, {logs} logs, {reports} report files), {} differ{}",
            first.seed,
            a.len(),
            differing.len() + missing,
            differing.first().map_or(String::new(), |k| format!(" (first: {k})"))
        ),
    )
}

fn param_bits(n: &NetParams) -> Vec<u64> {
    n.to_tensors().iter().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
}

fn degeneracy(run: &SeedRun) -> Verdict {
    let hp = HyperParams {
        alpha: 0.0,
        seed: run.seed,
        ..run.cfg.hyper
    };
    let h = retrain(Method::SparH, &run.shared, &run.novice, &hp).unwrap();
    let p = retrain(Method::SparP, &run.shared, &run.novice, &hp).unwrap();
    let policy_bits = |n: &NetParams| n.policy.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let alpha_ok = policy_bits(&h.params) == policy_bits(&p.params)
        && policy_bits(&h.params) != policy_bits(&run.novice);

    let world = RiverWorld::new(run.cfg.world.clone()).unwrap();
    let mut passive = ReplayBuffer::new();
    for (i, s) in run.cfg.starts.iter().enumerate() {
        let tr = run_episode(&world, &run.novice, &mut PassiveOverseer, *s, i as u32, run.seed, run.cfg.rollout_mode).unwrap();
        passive.push(tr);
    }
    let no_interventions = passive.trajectories().iter().flat_map(|t| &t.records).all(|r| !r.m);
    let novice_bits = param_bits(&run.novice);
    let unchanged: Vec<&str> = [Method::SparP, Method::SparR, Method::SparD, Method::HgDagger]
        .into_iter()
        .filter(|&m| param_bits(&retrain(m, &passive, &run.novice, &run.cfg.hyper).unwrap().params) == novice_bits)
        .map(Method::name)
        .collect();

    let mut rng = Rng8::seed_from_u64(40);
    let mut worst = 0.0f64;
    let mut returns_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let rewards: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        let eps = 1e-8;
        let b = advantages(&rewards, 0.0, rng.random_range(1..64), eps);
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        returns_exact &= b.returns == rewards;
        for (a, r) in b.advantages.iter().zip(&rewards) {
            worst = worst.max((a - (r - mean) / (std + eps)).abs());
        }
    }
    verdict(
        alpha_ok && no_interventions && unchanged.len() == 4 && returns_exact && worst < 1e-12,
        format!(
            "alpha=0 SPAR-H policy head {} SPAR-P; zero-intervention buffer ({} steps) leaves [{}] unchanged; gamma=0 returns {} rewards, advantages within {worst:.1e}",
            if alpha_ok { "bitwise equals" } else { "DIFFERS from" },
            passive.steps(),
            unchanged.join(", "),
            if returns_exact { "equal" } else { "DIFFER from" },
        ),
    )
}

fn main() {
    let strict = std::env::var("SPAR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let report = |name: &'static str, v: Verdict, results: &mut Vec<(&str, Verdict)>| {
        let known = KNOWN_FAILURES.contains(&name) && !v.pass;
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {name}: {}", v.detail);
        results.push((name, v));
    };

    report("gradients", gradients(), &mut results);
    report("unit-values", unit_values(), &mut results);
    report("submodularity", submodularity(), &mut results);

    let started = Instant::now();
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig::new(WorldSpec::default_river(), seed).unwrap();
            let dir = scratch.path().join(format!("seed{seed}"));
            run_full(&dir, &cfg).unwrap_or_else(|e| panic!("protocol run for seed {seed} failed: {e}"));
            let rd = RunDir::open(&dir).unwrap();
            SeedRun {
                seed,
                novice: run::load_novice(&rd).unwrap(),
                shared: run::load_buffer(&rd.path(run::SHARED_BUFFER_FILE)).unwrap(),
                dir,
                cfg,
            }
        })
        .collect();
    let protocol_time = started.elapsed();

    report("extraction", extraction(&runs), &mut results);
    report("alignment", alignment(&runs), &mut results);
    let (v, protocol_notes) = protocol(&runs, protocol_time);
    report("protocol", v, &mut results);
    notes.extend(protocol_notes);
    report("determinism", determinism(&runs[0], scratch.path()), &mut results);
    report("degeneracy", degeneracy(&runs[0]), &mut results);

    for n in &notes {
        println!("  {n}");
    }
    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    let unexpected: Vec<&str> = failed.iter().copied().filter(|n| strict || !KNOWN_FAILURES.contains(n)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} known)",
        results.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
