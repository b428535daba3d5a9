//! Linear and concave programs over the local polytope of a (factored) MDP,
//! plus determinization bounds for flat MDPs.
//!
//! The additive-limit program maximizes expected reward over pseudo-marginal
//! blocks tied by initial-state pinning, per-entity flow through the
//! transition factors, and single-variable consistency between overlapping
//! blocks. For positive risk the objective gains conditional-entropy terms
//! and is maximized by Frank-Wolfe over the same polytope.

mod concave;
mod determinize;
mod simplex;

pub use concave::{
    build_concave_planning, debug_reduced_space, maximize_concave, solve_concave,
    ConcaveProgram, ConcaveSolveResult, EntropyTerm, FrankWolfeOptions,
};
pub use determinize::{
    det_ub_concave, determinize, hindsight_mc, Determinization, HindsightEstimate,
};
pub use simplex::{
    solve_lp, solve_lp_with, DenseSimplex, LpSolver, SimplexOptions, SolveReport, SolveStatus,
};

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{FactoredMdp, FlatMdp, FlatReward};
use crate::numeric::argmax;

#[derive(Debug, Error)]
pub enum PolytopeError {
    #[error("program is infeasible ({0}); this signals a construction bug")]
    Infeasible(String),
    #[error("solver hit its iteration limit")]
    IterationLimit,
    #[error("{0}")]
    BadInput(String),
}

/// Named contiguous variable block.
#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// One equality row `Σ coeff · q = rhs`.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub label: String,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Equality-form program over nonnegative variables, maximization objective.
#[derive(Debug, Clone, Default)]
pub struct LocalPolytopeProgram {
    pub blocks: Vec<Block>,
    pub objective: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
}

impl LocalPolytopeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a block and returns its variable offset.
    pub fn add_block(&mut self, name: impl Into<String>, len: usize) -> usize {
        let offset = self.objective.len();
        self.blocks.push(Block { name: name.into(), offset, len });
        self.objective.resize(offset + len, 0.0);
        offset
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, label: impl Into<String>, coeffs: Vec<(usize, f64)>, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars()));
        self.rows.push(ConstraintRow { label: label.into(), coeffs, rhs });
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Textual listing (variables, objective, constraints) for debugging or
    /// feeding an external solver.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vars {}", self.num_vars());
        for b in &self.blocks {
            let _ = writeln!(out, "block {} offset {} len {}", b.name, b.offset, b.len);
        }
        out.push_str("max ");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                if !first {
                    out.push_str(" + ");
                }
                let _ = write!(out, "{c}*v{j}");
                first = false;
            }
        }
        if first {
            out.push('0');
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "s.t. {}: ", row.label);
            for (k, &(j, a)) in row.coeffs.iter().enumerate() {
                if k > 0 {
                    out.push_str(" + ");
                }
                let _ = write!(out, "{a}*v{j}");
            }
            let _ = writeln!(out, " = {}", row.rhs);
        }
        out
    }
}

/// Additive-limit LP of a flat MDP over state-action occupancies.
pub fn build_flat_lp(flat: &FlatMdp) -> LocalPolytopeProgram {
    let n = flat.num_states;
    let na = flat.num_actions;
    let horizon = flat.horizon;
    let mut p = LocalPolytopeProgram::new();

    let mut sa = Vec::with_capacity(horizon.saturating_sub(1));
    for t in 1..horizon {
        sa.push(p.add_block(format!("q_sa_t{t}"), n * na));
    }
    let mut s = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        s.push(p.add_block(format!("q_s_t{t}"), n));
    }

    // Objective.
    match &flat.reward {
        FlatReward::PerState(tables) => {
            for (ti, table) in tables.iter().enumerate() {
                for (x, &r) in table.iter().enumerate() {
                    p.objective[s[ti] + x] += r;
                }
            }
        }
        FlatReward::PerTransition(_) => {
            for t in 1..horizon {
                for x in 0..n {
                    for a in 0..na {
                        let row = flat.transition_row(x, a);
                        let mut c = 0.0;
                        for (x2, &prob) in row.iter().enumerate() {
                            c += prob * flat.transition_reward(t, x, a, x2);
                        }
                        p.objective[sa[t - 1] + x * na + a] += c;
                    }
                }
            }
        }
    }

    // Initial pinning.
    for x in 0..n {
        p.add_row(format!("init_x{x}"), vec![(s[0] + x, 1.0)], flat.initial[x]);
    }
    // Marginalization ties.
    for t in 1..horizon {
        for x in 0..n {
            let mut coeffs: Vec<(usize, f64)> =
                (0..na).map(|a| (sa[t - 1] + x * na + a, 1.0)).collect();
            coeffs.push((s[t - 1] + x, -1.0));
            p.add_row(format!("marg_t{t}_x{x}"), coeffs, 0.0);
        }
    }
    // Flow conservation.
    for t in 1..horizon {
        for x2 in 0..n {
            let mut coeffs = vec![(s[t] + x2, 1.0)];
            for x in 0..n {
                for a in 0..na {
                    let prob = flat.transition_row(x, a)[x2];
                    if prob != 0.0 {
                        coeffs.push((sa[t - 1] + x * na + a, -prob));
                    }
                }
            }
            p.add_row(format!("flow_t{t}_x{x2}"), coeffs, 0.0);
        }
    }
    p
}

/// Additive-limit LP of a factored MDP over pseudo-marginal blocks only.
pub fn build_factored_lp(mdp: &FactoredMdp) -> LocalPolytopeProgram {
    let horizon = mdp.horizon;
    let na = mdp.num_actions;
    let mut p = LocalPolytopeProgram::new();

    // Factor blocks q(parents, action) per dynamics factor and stage.
    let mut fa = vec![Vec::new(); mdp.dynamics.len()];
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pcfg = mdp.parent_indexer(&d.parents).size();
        for t in 1..horizon {
            fa[i].push(p.add_block(format!("q_f{i}_t{t}"), pcfg * na));
        }
    }
    // Per-entity state blocks.
    let mut ent = vec![Vec::new(); mdp.num_entities()];
    for (j, e) in mdp.entities.iter().enumerate() {
        for t in 1..=horizon {
            ent[j].push(p.add_block(format!("q_e{j}_t{t}"), *e));
        }
    }
    // Action blocks.
    let mut act = Vec::new();
    for t in 1..horizon {
        act.push(p.add_block(format!("q_a_t{t}"), na));
    }
    // Reward blocks at active steps.
    let mut rew = vec![Vec::new(); mdp.rewards.len()];
    for (r, rf) in mdp.rewards.iter().enumerate() {
        let pcfg = mdp.parent_indexer(&rf.parents).size();
        for t in rf.active_steps.steps(horizon) {
            let off = p.add_block(format!("q_r{r}_t{t}"), pcfg);
            for (cfg, &val) in rf.table.iter().enumerate() {
                p.objective[off + cfg] += val;
            }
            rew[r].push((t, off));
        }
    }

    // Initial pinning per entity.
    for (j, init) in mdp.initial.iter().enumerate() {
        for (v, &prob) in init.iter().enumerate() {
            p.add_row(format!("init_e{j}_v{v}"), vec![(ent[j][0] + v, 1.0)], prob);
        }
    }
    // Transition flow per entity.
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pidx = mdp.parent_indexer(&d.parents);
        let card = mdp.entities[i];
        for t in 1..horizon {
            for v in 0..card {
                let mut coeffs = vec![(ent[i][t] + v, 1.0)];
                for cfg in 0..pidx.size() {
                    for a in 0..na {
                        let prob = d.cpt[(cfg * na + a) * card + v];
                        if prob != 0.0 {
                            coeffs.push((fa[i][t - 1] + cfg * na + a, -prob));
                        }
                    }
                }
                p.add_row(format!("flow_e{i}_t{t}_v{v}"), coeffs, 0.0);
            }
        }
    }
    // Local consistency: factor blocks against entity and action blocks.
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pidx = mdp.parent_indexer(&d.parents);
        for t in 1..horizon {
            for (pos, &k) in d.parents.iter().enumerate() {
                for v in 0..mdp.entities[k] {
                    let mut coeffs = Vec::new();
                    for cfg in 0..pidx.size() {
                        if pidx.digit(cfg, pos) == v {
                            for a in 0..na {
                                coeffs.push((fa[i][t - 1] + cfg * na + a, 1.0));
                            }
                        }
                    }
                    coeffs.push((ent[k][t - 1] + v, -1.0));
                    p.add_row(format!("cons_f{i}_t{t}_e{k}_v{v}"), coeffs, 0.0);
                }
            }
            for a in 0..na {
                let mut coeffs: Vec<(usize, f64)> = (0..pidx.size())
                    .map(|cfg| (fa[i][t - 1] + cfg * na + a, 1.0))
                    .collect();
                coeffs.push((act[t - 1] + a, -1.0));
                p.add_row(format!("cons_f{i}_t{t}_a{a}"), coeffs, 0.0);
            }
        }
    }
    // Reward-block consistency.
    for (r, rf) in mdp.rewards.iter().enumerate() {
        let pidx = mdp.parent_indexer(&rf.parents);
        for &(t, off) in &rew[r] {
            for (pos, &k) in rf.parents.iter().enumerate() {
                for v in 0..mdp.entities[k] {
                    let mut coeffs = Vec::new();
                    for cfg in 0..pidx.size() {
                        if pidx.digit(cfg, pos) == v {
                            coeffs.push((off + cfg, 1.0));
                        }
                    }
                    coeffs.push((ent[k][t - 1] + v, -1.0));
                    p.add_row(format!("cons_r{r}_t{t}_e{k}_v{v}"), coeffs, 0.0);
                }
            }
        }
    }
    p
}

/// Per-candidate first-action LP objectives and the argmax choice.
///
/// For each candidate the first-stage action block is pinned to that action
/// and the program re-solved.
pub fn lp_action_select(
    mdp: &FactoredMdp,
    options: SimplexOptions,
) -> Result<(usize, Vec<f64>), PolytopeError> {
    if mdp.horizon < 2 {
        return Err(PolytopeError::BadInput("horizon must be at least 2".into()));
    }
    let base = build_factored_lp(mdp);
    let act1 = base
        .block("q_a_t1")
        .ok_or_else(|| PolytopeError::BadInput("missing first action block".into()))?
        .offset;
    let mut objectives = Vec::with_capacity(mdp.num_actions);
    for a in 0..mdp.num_actions {
        let mut pinned = base.clone();
        pinned.add_row(format!("pin_a1_{a}"), vec![(act1 + a, 1.0)], 1.0);
        let report = solve_lp_with(&pinned, options)?;
        match report.status {
            SolveStatus::Optimal => objectives.push(report.objective),
            SolveStatus::Infeasible => {
                return Err(PolytopeError::Infeasible(format!("first action {a} pinned")))
            }
            SolveStatus::IterationLimit => return Err(PolytopeError::IterationLimit),
        }
    }
    // Ties within solver precision go to the lowest action index.
    let best = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie_tol = options.tol.max(1e-9);
    let chosen = objectives
        .iter()
        .position(|&v| v >= best - tie_tol)
        .unwrap_or_else(|| argmax(&objectives));
    Ok((chosen, objectives))
}
