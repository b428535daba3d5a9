//! Value belief propagation on factored MDPs.
//!
//! Three update families share one engine:
//!
//! - [`UpdateFamily::Smoothed`]: planning-weighted updates smoothed by `ε`
//!   toward plain sum-product; `ε = 1` is exactly loopy BP, small `ε`
//!   approaches pure planning weighting. Requires positive risk.
//! - [`UpdateFamily::MaxEntRescaled`]: the same fixed points expressed in
//!   power-rescaled messages with a policy-entropy temperature `alpha`
//!   (smoothing `alpha · lambda`, constrained to at most 1).
//! - [`UpdateFamily::MaxEntAdditive`]: the additive-reward limit taken
//!   analytically; backward messages become soft Bellman values with
//!   temperature `alpha`.
//!
//! On a single-entity (chain) model the smoothed family at small `ε`
//! reproduces the exact backward value tables and converges in one
//! backward-forward pass.

mod bound;
mod engine;
mod graph;

pub use bound::{
    action_beliefs, evaluate_bound, factor_belief, factor_beliefs, parent_belief, reward_belief,
    variable_belief, variable_beliefs,
};
pub use engine::{MessageState, TraceRow, VbpEngine, VbpResult};
pub use graph::{build_graph, DynFactorNode, PlanningFactorGraph, RewardFactorNode};

use thiserror::Error;

use crate::model::FactoredMdp;
use crate::numeric::argmax;

/// Which fixed-point update family the engine runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateFamily {
    Smoothed,
    MaxEntRescaled { alpha: f64 },
    MaxEntAdditive { alpha: f64 },
}

/// Smoothing schedule per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsSchedule {
    /// `max(floor, 1 / iter)`.
    InverseIter { floor: f64 },
    Constant(f64),
    /// `max(floor, 1 / ceil(iter / every))`: anneal one notch every `every`
    /// outer iterations.
    AnnealEvery { every: usize, floor: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct VbpConfig {
    pub lambda: f64,
    pub family: UpdateFamily,
    pub eps_schedule: EpsSchedule,
    /// Log-space damping in `[0, 1)`.
    pub damping: f64,
    pub max_outer_iters: usize,
    /// Max absolute log-message residual per slice.
    pub inner_tol: f64,
    pub inner_cap: usize,
    pub message_floor: f64,
    /// Record per-outer-iteration residual and bound.
    pub trace: bool,
}

impl Default for VbpConfig {
    fn default() -> Self {
        VbpConfig {
            lambda: 0.3,
            family: UpdateFamily::Smoothed,
            eps_schedule: EpsSchedule::InverseIter { floor: 0.01 },
            damping: 0.5,
            max_outer_iters: 2000,
            inner_tol: 1e-8,
            inner_cap: 200,
            message_floor: -700.0,
            trace: false,
        }
    }
}

impl VbpConfig {
    /// Competition-style preset: light damping, slow annealing, huge budget.
    pub fn ippc_preset() -> Self {
        VbpConfig {
            damping: 0.1,
            eps_schedule: EpsSchedule::AnnealEvery { every: 300, floor: 0.01 },
            max_outer_iters: 150_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), VbpError> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(VbpError::BadConfig("damping must lie in [0, 1)".into()));
        }
        let floor = match self.eps_schedule {
            EpsSchedule::InverseIter { floor } => floor,
            EpsSchedule::Constant(e) => e,
            EpsSchedule::AnnealEvery { floor, .. } => floor,
        };
        match self.family {
            UpdateFamily::Smoothed => {
                if self.lambda <= 0.0 {
                    return Err(VbpError::BadConfig(
                        "smoothed updates need a positive risk parameter; use the additive \
                         MaxEnt family for the additive limit"
                            .into(),
                    ));
                }
                if floor <= 0.0 {
                    return Err(VbpError::BadConfig("smoothing must stay positive".into()));
                }
            }
            UpdateFamily::MaxEntRescaled { alpha } => {
                if self.lambda <= 0.0 {
                    return Err(VbpError::BadConfig(
                        "rescaled MaxEnt updates need a positive risk parameter".into(),
                    ));
                }
                if alpha <= 0.0 {
                    return Err(VbpError::BadConfig("alpha must be positive".into()));
                }
                if alpha * self.lambda > 1.0 + 1e-12 {
                    return Err(VbpError::BadConfig(
                        "alpha * lambda must not exceed 1".into(),
                    ));
                }
            }
            UpdateFamily::MaxEntAdditive { alpha } => {
                if alpha <= 0.0 {
                    return Err(VbpError::BadConfig("alpha must be positive".into()));
                }
                if self.lambda != 0.0 {
                    return Err(VbpError::BadConfig(
                        "the additive family takes the risk limit analytically; set lambda to 0"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VbpError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Builds the graph and runs a sweep in one call.
pub fn sweep(mdp: &FactoredMdp, config: VbpConfig) -> Result<VbpResult, VbpError> {
    let graph = build_graph(mdp);
    let mut engine = VbpEngine::new(&graph, config)?;
    Ok(engine.run())
}

/// Sweep with one of the MaxEnt families selected.
pub fn maxent_sweep(mdp: &FactoredMdp, config: VbpConfig) -> Result<VbpResult, VbpError> {
    match config.family {
        UpdateFamily::MaxEntRescaled { .. } | UpdateFamily::MaxEntAdditive { .. } => {
            sweep(mdp, config)
        }
        UpdateFamily::Smoothed => Err(VbpError::BadConfig(
            "maxent_sweep expects a MaxEnt update family".into(),
        )),
    }
}

/// Greedy action at slice `t ∈ 1..=T-1`; ties go to the lowest index.
pub fn extract_action(result: &VbpResult, t: usize) -> usize {
    argmax(&result.action_beliefs[t - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactoredMdp;
    use crate::oracle::{plan_value_iteration, RiskParams, Witness};
    use crate::randgen::{random_factored_binary, random_flat};
    use crate::rng::Rng;

    fn chain_config(lambda: f64) -> VbpConfig {
        // A chain needs no damping and converges in one pass at tiny eps.
        VbpConfig {
            lambda,
            eps_schedule: EpsSchedule::Constant(1e-6),
            damping: 0.0,
            max_outer_iters: 4,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_uniform_except_held_messages() {
        let mut rng = Rng::new(5);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let graph = build_graph(&m);
        let config = VbpConfig { lambda: 1.0, ..Default::default() };
        let state = MessageState::init(&graph, &config);
        for ti in 0..2 {
            for i in 0..2 {
                assert!(state.q_tab[ti][i].iter().all(|&v| v == 0.0));
                assert!(state.to_action[ti][i].iter().all(|&v| v == 0.0));
            }
        }
        // Held initial forward messages are the log initial distributions.
        for j in 0..2 {
            for (v, &p) in m.initial[j].iter().enumerate() {
                assert!((state.fwd_var[0][j][v] - p.ln()).abs() < 1e-12);
            }
        }
        // Held reward messages carry lambda-scaled tables.
        let t_last = m.horizon - 1;
        for (cfg, &r) in m.rewards[0].table.iter().enumerate() {
            assert_eq!(state.held_rew[t_last][0][cfg], 1.0 * r);
        }
    }

    #[test]
    fn held_messages_never_change() {
        let mut rng = Rng::new(6);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let graph = build_graph(&m);
        let config = VbpConfig { lambda: 1.0, max_outer_iters: 5, ..Default::default() };
        let mut engine = VbpEngine::new(&graph, config).unwrap();
        let init_fwd = engine.state.fwd_var[0].clone();
        let init_held = engine.state.held_rew.clone();
        let _ = engine.run();
        assert_eq!(engine.state.fwd_var[0], init_fwd);
        assert_eq!(engine.state.held_rew, init_held);
    }

    #[test]
    fn chain_backward_messages_match_exact_value_tables() {
        let mut rng = Rng::new(7);
        let flat = random_flat(&mut rng, 4, 2, 4);
        let m = FactoredMdp::from_flat(&flat).unwrap();
        let graph = build_graph(&m);
        let mut engine = VbpEngine::new(&graph, chain_config(1.0)).unwrap();
        let result = engine.run();
        let oracle = plan_value_iteration(&flat, RiskParams::new(1.0).unwrap());
        let tables = oracle.backward.unwrap();
        for t in 1..=flat.horizon {
            for x in 0..flat.num_states {
                let got = engine.state.back_var[t - 1][0][x];
                let want = tables[t - 1][x];
                assert!(
                    (got - want).abs() < 1e-6,
                    "t={t} x={x}: message {got} vs value {want}"
                );
            }
        }
        assert!((result.bound - oracle.value).abs() < 1e-6);
    }

    #[test]
    fn chain_bound_and_action_match_oracle_for_both_lambdas() {
        let mut rng = Rng::new(8);
        for trial in 0..10 {
            let flat = random_flat(&mut rng, 3, 2, 4);
            let m = FactoredMdp::from_flat(&flat).unwrap();
            for lambda in [0.3, 1.0] {
                let result = sweep(&m, chain_config(lambda)).unwrap();
                let risk = RiskParams::new(lambda).unwrap();
                let oracle = plan_value_iteration(&flat, risk);
                assert!(
                    (result.bound - oracle.value).abs() < 1e-6,
                    "trial {trial} lambda {lambda}: {} vs {}",
                    result.bound,
                    oracle.value
                );
                // The action belief is the optimal posterior's first-action
                // marginal: initial states weighted by exp(backward value).
                let policy = match &oracle.witness {
                    Witness::Policy(p) => p.clone(),
                    _ => unreachable!(),
                };
                let back = oracle.backward.as_ref().unwrap();
                let mut marginal = vec![0.0; flat.num_actions];
                for (x, &p) in flat.initial.iter().enumerate() {
                    let w = p * back[0][x].exp();
                    for (a, slot) in marginal.iter_mut().enumerate() {
                        *slot += w * policy.prob(1, x, a);
                    }
                }
                let best = crate::numeric::argmax(&marginal);
                // Skip near-ties; the smoothed engine cannot separate them.
                let mut sorted = marginal.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sorted[0] - sorted[1] > 1e-3 {
                    assert_eq!(extract_action(&result, 1), best, "trial {trial}");
                }
            }
        }
    }

    #[test]
    fn zero_rewards_give_zero_bound_and_uniform_actions() {
        let mut rng = Rng::new(9);
        let mut m = random_factored_binary(&mut rng, 3, 2, 3);
        for rf in m.rewards.iter_mut() {
            for v in rf.table.iter_mut() {
                *v = 0.0;
            }
        }
        let config = VbpConfig { lambda: 1.0, max_outer_iters: 50, ..Default::default() };
        let result = sweep(&m, config).unwrap();
        assert!(result.bound.abs() < 1e-9, "bound {}", result.bound);
        for beliefs in &result.action_beliefs {
            for &b in beliefs {
                assert!((b - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn converged_state_is_a_fixed_point_under_undamped_updates() {
        let mut rng = Rng::new(10);
        let m = random_factored_binary(&mut rng, 3, 2, 4);
        let config = VbpConfig { lambda: 1.0, max_outer_iters: 500, ..Default::default() };
        let graph = build_graph(&m);
        let mut engine = VbpEngine::new(&graph, config).unwrap();
        let result = engine.run();
        assert!(result.converged, "engine should converge on this instance");
        engine.config.damping = 0.0;
        let mut residual: f64 = 0.0;
        for t in (1..=m.horizon).rev() {
            residual = residual.max(engine.update_timeslice(t, result.final_eps));
        }
        assert!(
            residual <= engine.config.inner_tol * 10.0,
            "undamped residual {residual} after convergence"
        );
    }

    #[test]
    fn damping_zero_twice_on_fixed_point_gives_zero_residual() {
        let mut rng = Rng::new(11);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let config = VbpConfig {
            lambda: 1.0,
            damping: 0.0,
            max_outer_iters: 800,
            eps_schedule: EpsSchedule::Constant(0.5),
            ..Default::default()
        };
        let graph = build_graph(&m);
        let mut engine = VbpEngine::new(&graph, config).unwrap();
        let result = engine.run();
        assert!(result.converged);
        let r1 = {
            let mut worst: f64 = 0.0;
            for t in 1..=m.horizon {
                worst = worst.max(engine.update_timeslice(t, 0.5));
            }
            worst
        };
        let r2 = {
            let mut worst: f64 = 0.0;
            for t in 1..=m.horizon {
                worst = worst.max(engine.update_timeslice(t, 0.5));
            }
            worst
        };
        assert!(r1 < 1e-7, "first refresh residual {r1}");
        assert!(r2 < 1e-9, "second refresh residual {r2}");
    }

    #[test]
    fn maxent_additive_chain_matches_soft_value_iteration() {
        let mut rng = Rng::new(12);
        let flat = random_flat(&mut rng, 4, 2, 4);
        let m = FactoredMdp::from_flat(&flat).unwrap();
        let alpha = 1.0;
        let config = VbpConfig {
            lambda: 0.0,
            family: UpdateFamily::MaxEntAdditive { alpha },
            eps_schedule: EpsSchedule::Constant(1.0),
            damping: 0.0,
            max_outer_iters: 4,
            ..Default::default()
        };
        let graph = build_graph(&m);
        let mut engine = VbpEngine::new(&graph, config).unwrap();
        let _ = engine.run();

        // Independent soft value iteration with temperature alpha.
        let n = flat.num_states;
        let na = flat.num_actions;
        let mut soft = vec![vec![0.0; n]; flat.horizon];
        for x in 0..n {
            soft[flat.horizon - 1][x] = flat.state_reward(flat.horizon, x);
        }
        for t in (1..flat.horizon).rev() {
            for x in 0..n {
                let qs: Vec<f64> = (0..na)
                    .map(|a| {
                        flat.transition_row(x, a)
                            .iter()
                            .enumerate()
                            .map(|(x2, &p)| p * soft[t][x2])
                            .sum::<f64>()
                    })
                    .collect();
                let m = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = alpha * qs.iter().map(|&q| ((q - m) / alpha).exp()).sum::<f64>().ln();
                soft[t - 1][x] = flat.state_reward(t, x) + m + lse;
            }
        }
        for t in 1..=flat.horizon {
            for x in 0..n {
                let got = engine.state.back_var[t - 1][0][x];
                assert!(
                    (got - soft[t - 1][x]).abs() < 1e-6,
                    "t={t} x={x}: {got} vs {}",
                    soft[t - 1][x]
                );
            }
        }
    }

    #[test]
    fn large_alpha_flattens_action_beliefs() {
        let mut rng = Rng::new(13);
        let flat = random_flat(&mut rng, 3, 2, 3);
        let m = FactoredMdp::from_flat(&flat).unwrap();
        let config = VbpConfig {
            lambda: 0.0,
            family: UpdateFamily::MaxEntAdditive { alpha: 1e4 },
            eps_schedule: EpsSchedule::Constant(1.0),
            damping: 0.0,
            max_outer_iters: 4,
            ..Default::default()
        };
        let result = sweep(&m, config).unwrap();
        for beliefs in &result.action_beliefs {
            for &b in beliefs {
                assert!((b - 0.5).abs() < 1e-3, "belief {b}");
            }
        }
    }

    #[test]
    fn rescaled_family_matches_smoothed_at_matching_temperatures() {
        // alpha * lambda plays the role of the smoothing, so both engines
        // should reach the same fixed point.
        let mut rng = Rng::new(14);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let lambda = 0.5;
        let alpha = 0.4;
        let smoothed = sweep(
            &m,
            VbpConfig {
                lambda,
                eps_schedule: EpsSchedule::Constant(alpha * lambda),
                damping: 0.0,
                max_outer_iters: 400,
                ..Default::default()
            },
        )
        .unwrap();
        let rescaled = sweep(
            &m,
            VbpConfig {
                lambda,
                family: UpdateFamily::MaxEntRescaled { alpha },
                eps_schedule: EpsSchedule::Constant(alpha * lambda),
                damping: 0.0,
                max_outer_iters: 400,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (smoothed.bound - rescaled.bound).abs() < 1e-6,
            "{} vs {}",
            smoothed.bound,
            rescaled.bound
        );
        for (a, b) in smoothed.action_beliefs.iter().zip(&rescaled.action_beliefs) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn beliefs_are_normalized_and_locally_consistent() {
        let mut rng = Rng::new(15);
        let m = random_factored_binary(&mut rng, 3, 2, 4);
        let config = VbpConfig { lambda: 1.0, max_outer_iters: 500, ..Default::default() };
        let result = sweep(&m, config).unwrap();
        assert!(result.converged);
        let slack = 1e-6;
        for ti in 0..m.horizon - 1 {
            for i in 0..3 {
                let joint = &result.factor_beliefs[ti][i];
                let total: f64 = joint.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                // Parent marginals agree with the variable beliefs.
                let d = &m.dynamics[i];
                let pidx = m.parent_indexer(&d.parents);
                let na = 2;
                let card = 2;
                for (slot, &k) in d.parents.iter().enumerate() {
                    for v in 0..2 {
                        let mut marg = 0.0;
                        for cfg in 0..pidx.size() {
                            if pidx.digit(cfg, slot) == v {
                                for a in 0..na {
                                    for c in 0..card {
                                        marg += joint[(cfg * na + a) * card + c];
                                    }
                                }
                            }
                        }
                        let vb = result.variable_beliefs[ti][k][v];
                        assert!(
                            (marg - vb).abs() < slack,
                            "t={} factor {i} parent {k}: {marg} vs {vb}",
                            ti + 1
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let mut c = VbpConfig { lambda: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = VbpConfig {
            lambda: 2.0,
            family: UpdateFamily::MaxEntRescaled { alpha: 0.6 },
            ..Default::default()
        };
        assert!(c.validate().is_err(), "alpha * lambda > 1 must be rejected");
        c = VbpConfig { damping: 1.0, lambda: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(VbpConfig::ippc_preset().validate().is_ok());
    }

    #[test]
    fn oracle_witness_smoke_for_expected_shapes() {
        let mut rng = Rng::new(16);
        let flat = random_flat(&mut rng, 3, 2, 3);
        match plan_value_iteration(&flat, RiskParams::additive()).witness {
            Witness::Policy(_) => {}
            _ => panic!("planning returns a policy"),
        }
    }
}
