//! Belief extraction from messages and evaluation of the planning bound.
//!
//! Beliefs are normalized products of the incoming messages at each factor
//! and variable (with the family's power weighting on the action direction),
//! and are locally consistent at fixed points. The bound combines the factor
//! energies with the planning-weighted factor-wise entropy: per-entity
//! initial entropies, conditional child entropies per dynamics factor, and
//! mutual-information corrections over each factor's parent set.

use super::engine::MessageState;
use super::graph::PlanningFactorGraph;
use super::{UpdateFamily, VbpConfig};
use crate::numeric::{entropy, exp_table, normalize_log};

fn family_power(config: &VbpConfig, eps: f64) -> f64 {
    match config.family {
        UpdateFamily::Smoothed => eps,
        UpdateFamily::MaxEntRescaled { alpha } | UpdateFamily::MaxEntAdditive { alpha } => alpha,
    }
}

fn back_scale(config: &VbpConfig) -> f64 {
    match config.family {
        UpdateFamily::Smoothed => 1.0,
        UpdateFamily::MaxEntRescaled { .. } => config.lambda,
        UpdateFamily::MaxEntAdditive { .. } => 0.0,
    }
}

/// Joint belief of dynamics factor `i` at slice `t` (probabilities, ordered
/// `(cfg * na + a) * card + c`).
pub fn factor_belief(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
    eps: f64,
    t: usize,
    i: usize,
) -> Vec<f64> {
    let ti = t - 1;
    let f = &graph.dyn_factors[i];
    let na = graph.num_actions;
    let card = graph.entities[i];
    let power = family_power(config, eps);
    let bs = back_scale(config);
    let mut table = vec![f64::NEG_INFINITY; f.pidx.size() * na * card];
    for cfg in 0..f.pidx.size() {
        let mf = state.fwd_parent[ti][i][cfg];
        let mb = state.back_parent[ti][i][cfg];
        for a in 0..na {
            let q = state.q_tab[ti][i][cfg * na + a];
            let n = state.from_action[ti][i][a];
            let head = (q + n - mb) / power + mf + bs * mb - bs * q;
            for c in 0..card {
                let lp = f.log_cpt[(cfg * na + a) * card + c];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                table[(cfg * na + a) * card + c] =
                    head + lp + bs * state.back_var[ti + 1][i][c];
            }
        }
    }
    normalize_log(&mut table);
    exp_table(&table)
}

/// Parent-group belief of dynamics factor `i` at slice `t`.
pub fn parent_belief(
    state: &MessageState,
    config: &VbpConfig,
    t: usize,
    i: usize,
) -> Vec<f64> {
    let ti = t - 1;
    let bs = back_scale(config);
    let mut table: Vec<f64> = state.fwd_parent[ti][i]
        .iter()
        .zip(&state.back_parent[ti][i])
        .map(|(&mf, &mb)| mf + bs * mb)
        .collect();
    normalize_log(&mut table);
    exp_table(&table)
}

/// Belief over a reward factor's parent configuration at step `t`.
pub fn reward_belief(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
    t: usize,
    r: usize,
) -> Vec<f64> {
    let ti = t - 1;
    let f = &graph.rew_factors[r];
    let lambda_scale = match config.family {
        UpdateFamily::Smoothed => 1.0,
        UpdateFamily::MaxEntRescaled { .. } => config.lambda,
        UpdateFamily::MaxEntAdditive { .. } => 0.0,
    };
    let mut table = vec![0.0; f.pidx.size()];
    for (cfg, slot) in table.iter_mut().enumerate() {
        let mut v = lambda_scale * state.held_rew[ti][r][cfg];
        for s in 0..f.parents.len() {
            v += state.slot_fwd_rew[ti][r][s][f.pidx.digit(cfg, s)];
        }
        *slot = v;
    }
    normalize_log(&mut table);
    exp_table(&table)
}

/// Single-variable belief at slice `t`.
pub fn variable_belief(
    state: &MessageState,
    config: &VbpConfig,
    t: usize,
    j: usize,
) -> Vec<f64> {
    let ti = t - 1;
    let bs = back_scale(config);
    let mut table: Vec<f64> = state.fwd_var[ti][j]
        .iter()
        .zip(&state.back_var[ti][j])
        .map(|(&mf, &mb)| mf + bs * mb)
        .collect();
    normalize_log(&mut table);
    exp_table(&table)
}

/// Action beliefs per slice.
pub fn action_beliefs(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
    eps: f64,
) -> Vec<Vec<f64>> {
    let power = family_power(config, eps);
    let na = graph.num_actions;
    (0..graph.horizon - 1)
        .map(|ti| {
            let mut table = vec![0.0; na];
            for (a, slot) in table.iter_mut().enumerate() {
                let mut sum = 0.0;
                for i in 0..graph.num_entities() {
                    sum += state.to_action[ti][i][a];
                }
                *slot = sum / power;
            }
            normalize_log(&mut table);
            exp_table(&table)
        })
        .collect()
}

pub fn factor_beliefs(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
    eps: f64,
) -> Vec<Vec<Vec<f64>>> {
    (1..graph.horizon)
        .map(|t| {
            (0..graph.num_entities())
                .map(|i| factor_belief(graph, state, config, eps, t, i))
                .collect()
        })
        .collect()
}

pub fn variable_beliefs(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
) -> Vec<Vec<Vec<f64>>> {
    (1..=graph.horizon)
        .map(|t| {
            (0..graph.num_entities())
                .map(|j| variable_belief(state, config, t, j))
                .collect()
        })
        .collect()
}

/// Planning-weighted factor-wise bound at the current beliefs.
///
/// With positive risk this is the energy plus the planning entropy
/// approximation, scaled by the inverse risk parameter; in the additive
/// family it reduces to the expected additive reward under the beliefs.
/// Support violations (belief mass where a factor is zero) yield `-inf`.
pub fn evaluate_bound(
    graph: &PlanningFactorGraph,
    state: &MessageState,
    config: &VbpConfig,
    eps: f64,
) -> f64 {
    let additive = matches!(config.family, UpdateFamily::MaxEntAdditive { .. });

    // Expected reward term, common to all families.
    let mut reward_term = 0.0;
    for t in 1..=graph.horizon {
        for r in graph.rewards_at(t) {
            let belief = reward_belief(graph, state, config, t, r);
            let table = &graph.rew_factors[r].table;
            reward_term += belief.iter().zip(table).map(|(&b, &v)| b * v).sum::<f64>();
        }
    }
    if additive {
        return reward_term;
    }

    let lambda = config.lambda;
    let na = graph.num_actions;
    let mut log_terms = 0.0;

    // Initial slice: energy plus entropy per entity.
    for j in 0..graph.num_entities() {
        let belief = variable_belief(state, config, 1, j);
        for (v, &b) in belief.iter().enumerate() {
            if b > 1e-300 {
                let p = graph.initial[j][v];
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                log_terms += b * p.ln();
            }
        }
        log_terms += entropy(&belief);
    }

    for t in 1..graph.horizon {
        // Dynamics factors: energy and conditional child entropy.
        for i in 0..graph.num_entities() {
            let f = &graph.dyn_factors[i];
            let card = graph.entities[i];
            let joint = factor_belief(graph, state, config, eps, t, i);
            let mut cond_marg = vec![0.0; f.pidx.size() * na];
            for (idx, &b) in joint.iter().enumerate() {
                if b > 1e-300 {
                    let lp = f.log_cpt[idx];
                    if lp == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    log_terms += b * lp;
                }
                cond_marg[idx / card] += b;
            }
            log_terms += entropy(&joint) - entropy(&cond_marg);
        }
        // Mutual-information corrections over every factor's parent set.
        let var_beliefs: Vec<Vec<f64>> = (0..graph.num_entities())
            .map(|j| variable_belief(state, config, t, j))
            .collect();
        for i in 0..graph.num_entities() {
            let f = &graph.dyn_factors[i];
            if f.parents.len() <= 1 {
                continue;
            }
            let group = parent_belief(state, config, t, i);
            let mut correction = entropy(&group);
            for &k in &f.parents {
                correction -= entropy(&var_beliefs[k]);
            }
            log_terms += correction;
        }
        for r in graph.rewards_at(t) {
            let f = &graph.rew_factors[r];
            if f.parents.len() <= 1 {
                continue;
            }
            let group = reward_belief(graph, state, config, t, r);
            let mut correction = entropy(&group);
            for &k in &f.parents {
                correction -= entropy(&var_beliefs[k]);
            }
            log_terms += correction;
        }
    }

    log_terms / lambda + reward_term
}
