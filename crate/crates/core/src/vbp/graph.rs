//! Time-unrolled factor graph of a factored MDP.
//!
//! Per time step there is one variable node per entity and (except at the
//! last step) one action node; each entity contributes a transition factor
//! linking its parents and the action at step `t` to its own variable at
//! `t + 1`, and each reward factor links its parent variables at every step
//! it is active.

use crate::model::{FactoredMdp, StateIndexer};

#[derive(Debug, Clone)]
pub struct DynFactorNode {
    pub entity: usize,
    pub parents: Vec<usize>,
    pub pidx: StateIndexer,
    /// `log_cpt[(cfg * num_actions + a) * card + child]`.
    pub log_cpt: Vec<f64>,
    /// Linear copy used by expectation-style updates.
    pub cpt: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RewardFactorNode {
    pub parents: Vec<usize>,
    pub pidx: StateIndexer,
    pub table: Vec<f64>,
    /// `active[t - 1]` for `t ∈ 1..=T`.
    pub active: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PlanningFactorGraph {
    pub horizon: usize,
    pub num_actions: usize,
    pub entities: Vec<usize>,
    /// Per-entity initial distributions (linear and floored-log form).
    pub initial: Vec<Vec<f64>>,
    pub log_initial: Vec<Vec<f64>>,
    pub dyn_factors: Vec<DynFactorNode>,
    pub rew_factors: Vec<RewardFactorNode>,
    /// For entity `j`: dynamics factors reading `j`, with the parent slot.
    pub dyn_reading: Vec<Vec<(usize, usize)>>,
    /// For entity `j`: reward factors reading `j`, with the parent slot.
    pub rew_reading: Vec<Vec<(usize, usize)>>,
    pub message_floor: f64,
}

/// Builds the unrolled factor graph of a valid factored MDP.
pub fn build_graph(mdp: &FactoredMdp) -> PlanningFactorGraph {
    debug_assert!(mdp.validate().is_empty(), "graph construction expects a valid model");
    let floor = -700.0;
    let log_initial = mdp
        .initial
        .iter()
        .map(|row| row.iter().map(|&p| if p > 0.0 { p.ln().max(floor) } else { floor }).collect())
        .collect();
    let dyn_factors = mdp
        .dynamics
        .iter()
        .map(|d| DynFactorNode {
            entity: d.entity,
            parents: d.parents.clone(),
            pidx: mdp.parent_indexer(&d.parents),
            log_cpt: d
                .cpt
                .iter()
                .map(|&p| if p > 0.0 { p.ln().max(floor) } else { f64::NEG_INFINITY })
                .collect(),
            cpt: d.cpt.clone(),
        })
        .collect::<Vec<_>>();
    let rew_factors = mdp
        .rewards
        .iter()
        .map(|r| RewardFactorNode {
            parents: r.parents.clone(),
            pidx: mdp.parent_indexer(&r.parents),
            table: r.table.clone(),
            active: (1..=mdp.horizon).map(|t| r.active_steps.is_active(t)).collect(),
        })
        .collect::<Vec<_>>();

    let mut dyn_reading = vec![Vec::new(); mdp.num_entities()];
    for (i, d) in dyn_factors.iter().enumerate() {
        for (slot, &j) in d.parents.iter().enumerate() {
            dyn_reading[j].push((i, slot));
        }
    }
    let mut rew_reading = vec![Vec::new(); mdp.num_entities()];
    for (r, rf) in rew_factors.iter().enumerate() {
        for (slot, &j) in rf.parents.iter().enumerate() {
            rew_reading[j].push((r, slot));
        }
    }

    PlanningFactorGraph {
        horizon: mdp.horizon,
        num_actions: mdp.num_actions,
        entities: mdp.entities.clone(),
        initial: mdp.initial.clone(),
        log_initial,
        dyn_factors,
        rew_factors,
        dyn_reading,
        rew_reading,
        message_floor: floor,
    }
}

impl PlanningFactorGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_node_count(&self) -> usize {
        self.num_entities() * self.horizon
    }

    pub fn action_node_count(&self) -> usize {
        self.horizon - 1
    }

    pub fn dynamics_factor_count(&self) -> usize {
        self.num_entities() * (self.horizon - 1)
    }

    pub fn reward_factor_count(&self) -> usize {
        self.rew_factors
            .iter()
            .map(|r| r.active.iter().filter(|&&a| a).count())
            .sum()
    }

    /// Degree of a dynamics factor node: parents plus the action and child.
    pub fn dynamics_factor_degree(&self, i: usize) -> usize {
        self.dyn_factors[i].parents.len() + 2
    }

    pub fn reward_factor_degree(&self, r: usize) -> usize {
        self.rew_factors[r].parents.len()
    }

    /// Reward factors active at step `t ∈ 1..=T`.
    pub fn rewards_at(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.rew_factors
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.active[t - 1])
            .map(|(r, _)| r)
    }
}
