//! Exogenous-noise factorization of flat dynamics and the bounds it yields.
//!
//! Stochasticity is routed through per-step noise variables uniform over a
//! fixed grid: the deterministic kernel picks, for noise level `γ`, the
//! outcome whose cumulative-probability interval contains `(γ + 0.5) / K`.
//! Averaging per-noise deterministic optimal plans (knowing the noise ahead
//! of time) upper bounds the exponential utility; the same structure also
//! admits a concave program solved by Frank-Wolfe.
//!
//! Everything here fixes the risk parameter at 1.

use super::concave::{maximize_concave, ConcaveProgram, ConcaveSolveResult, EntropyTerm, FrankWolfeOptions};
use super::{LocalPolytopeProgram, PolytopeError};
use crate::model::{FlatMdp, FlatReward};
use crate::numeric::log_sum_exp;
use crate::rng::counter_unit;

/// Deterministic view of a flat MDP through grid noise.
#[derive(Debug, Clone)]
pub struct Determinization {
    pub levels: usize,
    /// Initial state per noise level.
    pub init_state: Vec<usize>,
    /// `next_state[(x * num_actions + a) * levels + γ]`.
    pub next_state: Vec<usize>,
    /// Max absolute error of `mean_γ P_det` against the true probabilities.
    pub reconstruction_error: f64,
}

fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in row.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    row.len() - 1
}

/// Inverse-CDF determinization on a uniform grid of `levels` noise values.
pub fn determinize(flat: &FlatMdp, levels: usize) -> Determinization {
    assert!(levels >= 1, "at least one noise level");
    let n = flat.num_states;
    let na = flat.num_actions;
    let k = levels;
    let mut init_state = vec![0usize; k];
    for (g, slot) in init_state.iter_mut().enumerate() {
        *slot = inverse_cdf(&flat.initial, (g as f64 + 0.5) / k as f64);
    }
    let mut next_state = vec![0usize; n * na * k];
    for x in 0..n {
        for a in 0..na {
            let row = flat.transition_row(x, a);
            for g in 0..k {
                next_state[(x * na + a) * k + g] = inverse_cdf(row, (g as f64 + 0.5) / k as f64);
            }
        }
    }
    // Reconstruction error by direct summation.
    let mut err: f64 = 0.0;
    let mut counts = vec![0.0; n];
    for x in 0..n {
        for a in 0..na {
            counts.iter_mut().for_each(|c| *c = 0.0);
            for g in 0..k {
                counts[next_state[(x * na + a) * k + g]] += 1.0 / k as f64;
            }
            let row = flat.transition_row(x, a);
            for (x2, &p) in row.iter().enumerate() {
                err = err.max((counts[x2] - p).abs());
            }
        }
    }
    counts.iter_mut().for_each(|c| *c = 0.0);
    for &x in &init_state {
        counts[x] += 1.0 / k as f64;
    }
    for (x, &p) in flat.initial.iter().enumerate() {
        err = err.max((counts[x] - p).abs());
    }
    Determinization { levels: k, init_state, next_state, reconstruction_error: err }
}

/// Optimal total reward of the noise-conditioned deterministic problem.
fn deterministic_plan_value(flat: &FlatMdp, det: &Determinization, noise: &[usize]) -> f64 {
    let n = flat.num_states;
    let na = flat.num_actions;
    let horizon = flat.horizon;
    let mut value: Vec<f64> = (0..n).map(|x| flat.state_reward(horizon, x)).collect();
    for t in (1..horizon).rev() {
        let g = noise[t];
        let mut next = vec![0.0; n];
        for (x, slot) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let x2 = det.next_state[(x * na + a) * det.levels + g];
                let v = flat.transition_reward(t, x, a, x2) + value[x2];
                if v > best {
                    best = v;
                }
            }
            *slot = flat.state_reward(t, x) + best;
        }
        value = next;
    }
    value[det.init_state[noise[0]]]
}

/// Monte Carlo hindsight estimate with jackknife standard error.
#[derive(Debug, Clone, Copy)]
pub struct HindsightEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Log-mean-exp of per-sample deterministic optimal rewards (risk 1).
pub fn hindsight_mc(
    flat: &FlatMdp,
    det: &Determinization,
    samples: usize,
    seed: u64,
) -> HindsightEstimate {
    assert!(samples >= 2, "need at least two samples for an error estimate");
    let horizon = flat.horizon;
    let mut values = Vec::with_capacity(samples);
    let mut noise = vec![0usize; horizon];
    for s in 0..samples {
        for (t, slot) in noise.iter_mut().enumerate() {
            let u = counter_unit(seed, s as u64, t as u64, 0);
            *slot = ((u * det.levels as f64) as usize).min(det.levels - 1);
        }
        values.push(deterministic_plan_value(flat, det, &noise));
    }
    let nf = samples as f64;
    let estimate = log_sum_exp(&values) - nf.ln();
    // Jackknife over leave-one-out log-mean-exp values.
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = values.iter().map(|&v| (v - hi).exp()).sum();
    let mut thetas = Vec::with_capacity(samples);
    for &v in &values {
        let rest = (total - (v - hi).exp()).max(1e-300);
        thetas.push(hi + rest.ln() - (nf - 1.0).ln());
    }
    let mean_theta: f64 = thetas.iter().sum::<f64>() / nf;
    let var: f64 =
        thetas.iter().map(|&t| (t - mean_theta).powi(2)).sum::<f64>() * (nf - 1.0) / nf;
    HindsightEstimate { estimate, std_error: var.sqrt(), samples }
}

/// Concave upper bound on the hindsight-determinization value (risk 1).
///
/// The program lives on noise-augmented occupancies with deterministic flow,
/// plus entropy terms on the per-step noise marginals.
pub fn det_ub_concave(
    flat: &FlatMdp,
    det: &Determinization,
    options: FrankWolfeOptions,
) -> Result<ConcaveSolveResult, PolytopeError> {
    let n = flat.num_states;
    let na = flat.num_actions;
    let k = det.levels;
    let horizon = flat.horizon;
    if horizon < 2 {
        return Err(PolytopeError::BadInput("horizon must be at least 2".into()));
    }
    let mut p = LocalPolytopeProgram::new();

    let mut xag = Vec::new();
    for t in 1..horizon {
        xag.push(p.add_block(format!("d_xag_t{t}"), n * na * k));
    }
    let mut st = Vec::new();
    for t in 1..=horizon {
        st.push(p.add_block(format!("d_s_t{t}"), n));
    }
    let g0 = p.add_block("d_g0", k);
    let mut gm = Vec::new();
    for t in 1..horizon {
        gm.push(p.add_block(format!("d_g_t{t}"), k));
    }

    // Noise prior normalization and the initial-state coupling.
    p.add_row("norm_g0", (0..k).map(|g| (g0 + g, 1.0)).collect(), 1.0);
    for v in 0..n {
        let mut coeffs = vec![(st[0] + v, 1.0)];
        for (g, &x) in det.init_state.iter().enumerate() {
            if x == v {
                coeffs.push((g0 + g, -1.0));
            }
        }
        p.add_row(format!("init_v{v}"), coeffs, 0.0);
    }
    for t in 1..horizon {
        // State marginal of the noise-augmented block.
        for x in 0..n {
            let mut coeffs = vec![(st[t - 1] + x, -1.0)];
            for a in 0..na {
                for g in 0..k {
                    coeffs.push((xag[t - 1] + (x * na + a) * k + g, 1.0));
                }
            }
            p.add_row(format!("marg_t{t}_x{x}"), coeffs, 0.0);
        }
        // Deterministic flow.
        for v in 0..n {
            let mut coeffs = vec![(st[t] + v, 1.0)];
            for x in 0..n {
                for a in 0..na {
                    for g in 0..k {
                        if det.next_state[(x * na + a) * k + g] == v {
                            coeffs.push((xag[t - 1] + (x * na + a) * k + g, -1.0));
                        }
                    }
                }
            }
            p.add_row(format!("flow_t{t}_v{v}"), coeffs, 0.0);
        }
        // Noise marginal.
        for g in 0..k {
            let mut coeffs = vec![(gm[t - 1] + g, -1.0)];
            for x in 0..n {
                for a in 0..na {
                    coeffs.push((xag[t - 1] + (x * na + a) * k + g, 1.0));
                }
            }
            p.add_row(format!("gmarg_t{t}_g{g}"), coeffs, 0.0);
        }
    }

    // Objective: rewards, log noise prior, noise entropies.
    let mut linear = vec![0.0; p.num_vars()];
    match &flat.reward {
        FlatReward::PerState(tables) => {
            for (ti, table) in tables.iter().enumerate() {
                for (x, &r) in table.iter().enumerate() {
                    linear[st[ti] + x] += r;
                }
            }
        }
        FlatReward::PerTransition(_) => {
            for t in 1..horizon {
                for x in 0..n {
                    for a in 0..na {
                        for g in 0..k {
                            let x2 = det.next_state[(x * na + a) * k + g];
                            linear[xag[t - 1] + (x * na + a) * k + g] +=
                                flat.transition_reward(t, x, a, x2);
                        }
                    }
                }
            }
        }
    }
    let log_prior = -(k as f64).ln();
    for g in 0..k {
        linear[g0 + g] += log_prior;
    }
    for t in 1..horizon {
        for g in 0..k {
            linear[gm[t - 1] + g] += log_prior;
        }
    }
    let mut entropies = vec![EntropyTerm {
        weight: 1.0,
        assignments: (0..k).map(|g| (g0 + g, g)).collect(),
        num_bins: k,
    }];
    for t in 1..horizon {
        entropies.push(EntropyTerm {
            weight: 1.0,
            assignments: (0..k).map(|g| (gm[t - 1] + g, g)).collect(),
            num_bins: k,
        });
    }

    // Uniform-noise, uniform-action starting point.
    let mut q0 = vec![0.0; p.num_vars()];
    for g in 0..k {
        q0[g0 + g] = 1.0 / k as f64;
    }
    let mut dist = vec![0.0; n];
    for &x in &det.init_state {
        dist[x] += 1.0 / k as f64;
    }
    for (v, &m) in dist.iter().enumerate() {
        q0[st[0] + v] = m;
    }
    for t in 1..horizon {
        let mut next = vec![0.0; n];
        for x in 0..n {
            if dist[x] == 0.0 {
                continue;
            }
            for a in 0..na {
                for g in 0..k {
                    let mass = dist[x] / (na * k) as f64;
                    q0[xag[t - 1] + (x * na + a) * k + g] = mass;
                    next[det.next_state[(x * na + a) * k + g]] += mass;
                }
            }
        }
        for g in 0..k {
            q0[gm[t - 1] + g] = 1.0 / k as f64;
        }
        for (v, &m) in next.iter().enumerate() {
            q0[st[t] + v] = m;
        }
        dist = next;
    }

    let prog = ConcaveProgram { polytope: p, linear, entropies, constant: 0.0 };
    maximize_concave(&prog, q0, options)
}
