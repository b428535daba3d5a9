//! Message-passing engine.
//!
//! All messages live in log space. The smoothed family implements the
//! planning-weighted updates with smoothing `ε` toward plain sum-product
//! (`ε = 1` reproduces loopy BP exactly); the rescaled MaxEnt family carries
//! the risk parameter as a power rescaling so the additive limit stays
//! well-defined; the additive family is that limit taken analytically, whose
//! backward messages are soft Bellman values with temperature `alpha`.
//!
//! A sweep alternates backward and forward passes over time slices in an
//! outer loop, iterating each slice to an inner tolerance. Messages are
//! damped in log space. Held-constant messages (step-one forward messages
//! and reward tables) are written once at initialization.

use super::graph::PlanningFactorGraph;
use super::{EpsSchedule, UpdateFamily, VbpConfig, VbpError};
use crate::numeric::LogSumAcc;

/// Complete set of messages; indices are `[t - 1]` over time slices.
#[derive(Debug, Clone)]
pub struct MessageState {
    /// Child backward folded through the CPT: `[t-1][i][cfg * na + a]`.
    pub q_tab: Vec<Vec<Vec<f64>>>,
    /// Factor-to-parent-group backward: `[t-1][i][cfg]`.
    pub back_parent: Vec<Vec<Vec<f64>>>,
    /// Factor-to-action: `[t-1][i][a]`.
    pub to_action: Vec<Vec<Vec<f64>>>,
    /// Action-to-factor (product of the other factors): `[t-1][i][a]`.
    pub from_action: Vec<Vec<Vec<f64>>>,
    /// Parent-group forward into the factor: `[t-1][i][cfg]`.
    pub fwd_parent: Vec<Vec<Vec<f64>>>,
    /// Variable-to-factor forward, dynamics factors: `[t-1][i][slot][v]`.
    pub slot_fwd_dyn: Vec<Vec<Vec<Vec<f64>>>>,
    /// Factor-to-variable backward, dynamics factors: `[t-1][i][slot][v]`.
    pub slot_back_dyn: Vec<Vec<Vec<Vec<f64>>>>,
    /// Same two families for reward factors (empty when inactive at `t`).
    pub slot_fwd_rew: Vec<Vec<Vec<Vec<f64>>>>,
    pub slot_back_rew: Vec<Vec<Vec<Vec<f64>>>>,
    /// Variable forward messages: `[t-1][j][v]`; `t = 1` is held constant.
    pub fwd_var: Vec<Vec<Vec<f64>>>,
    /// Aggregated variable backward messages: `[t-1][j][v]`.
    pub back_var: Vec<Vec<Vec<f64>>>,
    /// Held reward messages in the family's message scale: `[t-1][r][cfg]`.
    pub held_rew: Vec<Vec<Vec<f64>>>,
    /// Count of non-finite or out-of-range entries clamped to the floor.
    pub clamp_events: u64,
}

impl MessageState {
    /// Uniform (all-zero log) messages apart from the held-constant ones.
    pub fn init(graph: &PlanningFactorGraph, config: &VbpConfig) -> Self {
        let t_slices = graph.horizon; // slice T carries only reward factors
        let stages = graph.horizon - 1;
        let ne = graph.num_entities();
        let na = graph.num_actions;

        let per_factor = |len: fn(&PlanningFactorGraph, usize) -> usize| -> Vec<Vec<Vec<f64>>> {
            (0..stages)
                .map(|_| (0..ne).map(|i| vec![0.0; len(graph, i)]).collect())
                .collect()
        };
        let q_tab = per_factor(|g, i| g.dyn_factors[i].pidx.size() * g.num_actions);
        let back_parent = per_factor(|g, i| g.dyn_factors[i].pidx.size());
        let fwd_parent = per_factor(|g, i| g.dyn_factors[i].pidx.size());
        let to_action = (0..stages)
            .map(|_| (0..ne).map(|_| vec![0.0; na]).collect())
            .collect();
        let from_action = (0..stages)
            .map(|_| (0..ne).map(|_| vec![0.0; na]).collect())
            .collect();

        let slot_fwd_dyn: Vec<Vec<Vec<Vec<f64>>>> = (0..stages)
            .map(|_| {
                (0..ne)
                    .map(|i| {
                        graph.dyn_factors[i]
                            .parents
                            .iter()
                            .map(|&j| vec![0.0; graph.entities[j]])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let slot_back_dyn = slot_fwd_dyn.clone();

        let slot_fwd_rew: Vec<Vec<Vec<Vec<f64>>>> = (0..t_slices)
            .map(|ti| {
                graph
                    .rew_factors
                    .iter()
                    .map(|r| {
                        if r.active[ti] {
                            r.parents.iter().map(|&j| vec![0.0; graph.entities[j]]).collect()
                        } else {
                            Vec::new()
                        }
                    })
                    .collect()
            })
            .collect();
        let slot_back_rew = slot_fwd_rew.clone();

        let mut fwd_var: Vec<Vec<Vec<f64>>> = (0..t_slices)
            .map(|_| (0..ne).map(|j| vec![0.0; graph.entities[j]]).collect())
            .collect();
        fwd_var[0] = graph.log_initial.clone();
        let back_var: Vec<Vec<Vec<f64>>> = (0..t_slices)
            .map(|_| (0..ne).map(|j| vec![0.0; graph.entities[j]]).collect())
            .collect();

        // Reward tables enter as held backward messages; the smoothed family
        // folds the risk parameter in, the rescaled families keep raw values.
        let reward_scale = match config.family {
            UpdateFamily::Smoothed => config.lambda,
            UpdateFamily::MaxEntRescaled { .. } | UpdateFamily::MaxEntAdditive { .. } => 1.0,
        };
        let held_rew: Vec<Vec<Vec<f64>>> = (0..t_slices)
            .map(|ti| {
                graph
                    .rew_factors
                    .iter()
                    .map(|r| {
                        if r.active[ti] {
                            r.table.iter().map(|&v| reward_scale * v).collect()
                        } else {
                            Vec::new()
                        }
                    })
                    .collect()
            })
            .collect();

        MessageState {
            q_tab,
            back_parent,
            to_action,
            from_action,
            fwd_parent,
            slot_fwd_dyn,
            slot_back_dyn,
            slot_fwd_rew,
            slot_back_rew,
            fwd_var,
            back_var,
            held_rew,
            clamp_events: 0,
        }
    }
}

/// Per-outer-iteration diagnostics row.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub eps: f64,
    pub residual: f64,
    pub bound: f64,
}

/// Result of a sweep: bound, beliefs, and convergence metadata.
#[derive(Debug, Clone)]
pub struct VbpResult {
    pub bound: f64,
    /// `[t-1][a]` probabilities.
    pub action_beliefs: Vec<Vec<f64>>,
    /// Joint dynamics-factor beliefs `[t-1][i][(cfg*na+a)*card+c]`.
    pub factor_beliefs: Vec<Vec<Vec<f64>>>,
    /// Single-variable beliefs `[t-1][j][v]`.
    pub variable_beliefs: Vec<Vec<Vec<f64>>>,
    pub converged: bool,
    pub outer_iters: usize,
    pub final_residual: f64,
    pub final_eps: f64,
    pub clamp_events: u64,
    pub trace: Vec<TraceRow>,
}

/// Single-owner message-passing engine over a shared graph.
pub struct VbpEngine<'a> {
    pub graph: &'a PlanningFactorGraph,
    pub config: VbpConfig,
    pub state: MessageState,
}

impl<'a> VbpEngine<'a> {
    pub fn new(graph: &'a PlanningFactorGraph, config: VbpConfig) -> Result<Self, VbpError> {
        config.validate()?;
        let state = MessageState::init(graph, &config);
        Ok(VbpEngine { graph, config, state })
    }

    fn clamp(&mut self, v: f64) -> f64 {
        let floor = self.config.message_floor;
        if v.is_nan() {
            self.state.clamp_events += 1;
            return floor;
        }
        if v < floor {
            if v.is_infinite() {
                self.state.clamp_events += 1;
            }
            return floor;
        }
        if v > -floor {
            self.state.clamp_events += 1;
            return -floor;
        }
        v
    }

    /// Damped write; returns the undamped change `|computed - old|`.
    fn store(&mut self, t: usize, kind: Slot, idx: (usize, usize, usize), computed: f64) -> f64 {
        let clamped = self.clamp(computed);
        let d = self.config.damping;
        let slot = match kind {
            Slot::Q => &mut self.state.q_tab[t][idx.0][idx.2],
            Slot::BackParent => &mut self.state.back_parent[t][idx.0][idx.2],
            Slot::ToAction => &mut self.state.to_action[t][idx.0][idx.2],
            Slot::FromAction => &mut self.state.from_action[t][idx.0][idx.2],
            Slot::FwdParent => &mut self.state.fwd_parent[t][idx.0][idx.2],
            Slot::SlotFwdDyn => &mut self.state.slot_fwd_dyn[t][idx.0][idx.1][idx.2],
            Slot::SlotBackDyn => &mut self.state.slot_back_dyn[t][idx.0][idx.1][idx.2],
            Slot::SlotFwdRew => &mut self.state.slot_fwd_rew[t][idx.0][idx.1][idx.2],
            Slot::SlotBackRew => &mut self.state.slot_back_rew[t][idx.0][idx.1][idx.2],
            Slot::FwdVar => &mut self.state.fwd_var[t][idx.0][idx.2],
            Slot::BackVar => &mut self.state.back_var[t][idx.0][idx.2],
        };
        let old = *slot;
        let residual = (clamped - old).abs();
        *slot = d * old + (1.0 - d) * clamped;
        residual
    }

    /// Normalized damped write of a whole message vector.
    ///
    /// Message loops inside a slice (variables shared by several factors)
    /// accumulate scale if left free, so the variable-side families are
    /// rescaled to unit mass before damping; beliefs and the anchored
    /// backward scales are unaffected.
    fn store_vec(
        &mut self,
        t: usize,
        kind: Slot,
        f: usize,
        slot: usize,
        computed: &mut [f64],
    ) -> f64 {
        for v in computed.iter_mut() {
            *v = self.clamp(*v);
        }
        let z = crate::numeric::log_sum_exp(computed);
        if z.is_finite() {
            for v in computed.iter_mut() {
                *v = self.clamp(*v - z);
            }
        }
        let mut residual: f64 = 0.0;
        for (k, &v) in computed.iter().enumerate() {
            residual = residual.max(self.store(t, kind, (f, slot, k), v));
        }
        residual
    }

    /// One pass over every message family touching slice `t ∈ 1..=T`, in
    /// dependency order. Slice `T` has no dynamics factors, only reward
    /// messages. Returns the largest undamped change.
    pub fn update_timeslice(&mut self, t: usize, eps: f64) -> f64 {
        let horizon = self.graph.horizon;
        assert!(t >= 1 && t <= horizon);
        let mut residual: f64 = 0.0;
        let ti = t - 1;
        let family = self.config.family;
        let lambda = self.config.lambda;
        let ne = self.graph.num_entities();
        let na = self.graph.num_actions;

        // The exponent used by the power-mean aggregations.
        let power = match family {
            UpdateFamily::Smoothed => eps,
            UpdateFamily::MaxEntRescaled { alpha } | UpdateFamily::MaxEntAdditive { alpha } => {
                alpha
            }
        };
        // Scale of backward-type messages inside forward formulas.
        let back_scale = match family {
            UpdateFamily::Smoothed => 1.0,
            UpdateFamily::MaxEntRescaled { .. } => lambda,
            UpdateFamily::MaxEntAdditive { .. } => 0.0,
        };

        if t < horizon {
            // Q tables from the child backward messages.
            for i in 0..ne {
                let f = &self.graph.dyn_factors[i];
                let card = self.graph.entities[i];
                let pcfg = f.pidx.size();
                for cfg in 0..pcfg {
                    for a in 0..na {
                        let base = (cfg * na + a) * card;
                        let computed = match family {
                            UpdateFamily::MaxEntAdditive { .. } => {
                                // Expected backward value through the CPT.
                                let mut acc = 0.0;
                                for c in 0..card {
                                    acc += f.cpt[base + c] * self.state.back_var[ti + 1][i][c];
                                }
                                acc
                            }
                            UpdateFamily::Smoothed => {
                                let mut acc = LogSumAcc::new();
                                for c in 0..card {
                                    let lp = f.log_cpt[base + c];
                                    if lp != f64::NEG_INFINITY {
                                        acc.add(lp + self.state.back_var[ti + 1][i][c]);
                                    }
                                }
                                acc.value()
                            }
                            UpdateFamily::MaxEntRescaled { .. } => {
                                let mut acc = LogSumAcc::new();
                                for c in 0..card {
                                    let lp = f.log_cpt[base + c];
                                    if lp != f64::NEG_INFINITY {
                                        acc.add(lp + lambda * self.state.back_var[ti + 1][i][c]);
                                    }
                                }
                                acc.value() / lambda
                            }
                        };
                        residual = residual.max(self.store(ti, Slot::Q, (i, 0, cfg * na + a), computed));
                    }
                }
            }
            // Factor-to-parent-group backward (power mean over actions).
            for i in 0..ne {
                let pcfg = self.graph.dyn_factors[i].pidx.size();
                for cfg in 0..pcfg {
                    let mut acc = LogSumAcc::new();
                    for a in 0..na {
                        let v = self.state.q_tab[ti][i][cfg * na + a]
                            + self.state.from_action[ti][i][a];
                        acc.add(v / power);
                    }
                    let computed = power * acc.value();
                    residual =
                        residual.max(self.store(ti, Slot::BackParent, (i, 0, cfg), computed));
                }
            }
            // Factor-to-action.
            for i in 0..ne {
                let pcfg = self.graph.dyn_factors[i].pidx.size();
                let mut vec = vec![0.0; na];
                for (a, slot) in vec.iter_mut().enumerate() {
                    let mut acc = LogSumAcc::new();
                    for cfg in 0..pcfg {
                        let q = self.state.q_tab[ti][i][cfg * na + a];
                        let mb = self.state.back_parent[ti][i][cfg];
                        let mf = self.state.fwd_parent[ti][i][cfg];
                        acc.add((q - mb) / power + mf + back_scale * mb);
                    }
                    *slot = power * acc.value();
                }
                residual = residual.max(self.store_vec(ti, Slot::ToAction, i, 0, &mut vec));
            }
            // Action-to-factor (product of the other factors' action messages).
            for i in 0..ne {
                for a in 0..na {
                    let mut sum = 0.0;
                    for k in 0..ne {
                        if k != i {
                            sum += self.state.to_action[ti][k][a];
                        }
                    }
                    residual = residual.max(self.store(ti, Slot::FromAction, (i, 0, a), sum));
                }
            }
            // Forward message to the child variable at t + 1.
            for i in 0..ne {
                let f = &self.graph.dyn_factors[i];
                let card = self.graph.entities[i];
                let pcfg = f.pidx.size();
                let mut vec = vec![0.0; card];
                for (c, slot) in vec.iter_mut().enumerate() {
                    let mut acc = LogSumAcc::new();
                    for cfg in 0..pcfg {
                        for a in 0..na {
                            let lp = f.log_cpt[(cfg * na + a) * card + c];
                            if lp == f64::NEG_INFINITY {
                                continue;
                            }
                            let q = self.state.q_tab[ti][i][cfg * na + a];
                            let mb = self.state.back_parent[ti][i][cfg];
                            let mf = self.state.fwd_parent[ti][i][cfg];
                            let n = self.state.from_action[ti][i][a];
                            acc.add(
                                (q + n - mb) / power + mf + back_scale * mb + lp - back_scale * q,
                            );
                        }
                    }
                    *slot = acc.value();
                }
                residual = residual.max(self.store_vec(ti + 1, Slot::FwdVar, i, 0, &mut vec));
            }
            // Parent-group forward messages (products of per-slot messages).
            for i in 0..ne {
                let f = &self.graph.dyn_factors[i];
                let pcfg = f.pidx.size();
                for cfg in 0..pcfg {
                    let mut sum = 0.0;
                    for slot in 0..f.parents.len() {
                        sum += self.state.slot_fwd_dyn[ti][i][slot][f.pidx.digit(cfg, slot)];
                    }
                    residual = residual.max(self.store(ti, Slot::FwdParent, (i, 0, cfg), sum));
                }
            }
        }

        // Variable-to-factor forward messages for every factor at the slice.
        let graph = self.graph;
        let rewards_here: Vec<usize> = graph.rewards_at(t).collect();
        let dyn_here = t < horizon;
        for j in 0..ne {
            let card = graph.entities[j];
            // Readers of entity j at this slice.
            let dyn_readers: &[(usize, usize)] =
                if dyn_here { &graph.dyn_reading[j] } else { &[] };
            let rew_readers: Vec<(usize, usize)> = graph.rew_reading[j]
                .iter()
                .copied()
                .filter(|&(r, _)| rewards_here.contains(&r))
                .collect();
            for &(fi, slot) in dyn_readers {
                let mut vec = vec![0.0; card];
                for (v, out) in vec.iter_mut().enumerate() {
                    let mut sum = self.state.fwd_var[ti][j][v];
                    for &(gi, gslot) in dyn_readers {
                        if gi != fi {
                            sum += back_scale * self.state.slot_back_dyn[ti][gi][gslot][v];
                        }
                    }
                    for &(gr, gslot) in &rew_readers {
                        sum += back_scale * self.state.slot_back_rew[ti][gr][gslot][v];
                    }
                    *out = sum;
                }
                residual = residual.max(self.store_vec(ti, Slot::SlotFwdDyn, fi, slot, &mut vec));
            }
            for &(fr, slot) in &rew_readers {
                let mut vec = vec![0.0; card];
                for (v, out) in vec.iter_mut().enumerate() {
                    let mut sum = self.state.fwd_var[ti][j][v];
                    for &(gi, gslot) in dyn_readers {
                        sum += back_scale * self.state.slot_back_dyn[ti][gi][gslot][v];
                    }
                    for &(gr, gslot) in &rew_readers {
                        if gr != fr {
                            sum += back_scale * self.state.slot_back_rew[ti][gr][gslot][v];
                        }
                    }
                    *out = sum;
                }
                residual = residual.max(self.store_vec(ti, Slot::SlotFwdRew, fr, slot, &mut vec));
            }
        }

        // Factor-to-variable backward messages.
        if dyn_here {
            for i in 0..ne {
                let parents = &graph.dyn_factors[i].parents;
                for (slot, &j) in parents.iter().enumerate() {
                    for v in 0..graph.entities[j] {
                        let computed = self.slot_back_value(
                            ti,
                            FactorRef::Dyn(i),
                            slot,
                            v,
                            family,
                            lambda,
                        );
                        residual = residual
                            .max(self.store(ti, Slot::SlotBackDyn, (i, slot, v), computed));
                    }
                }
            }
        }
        for &r in &rewards_here {
            let parents = &graph.rew_factors[r].parents;
            for (slot, &j) in parents.iter().enumerate() {
                for v in 0..graph.entities[j] {
                    let computed =
                        self.slot_back_value(ti, FactorRef::Rew(r), slot, v, family, lambda);
                    residual =
                        residual.max(self.store(ti, Slot::SlotBackRew, (r, slot, v), computed));
                }
            }
        }

        // Aggregated backward message per variable.
        for j in 0..ne {
            let card = graph.entities[j];
            for v in 0..card {
                let mut sum = 0.0;
                if dyn_here {
                    for &(gi, gslot) in &graph.dyn_reading[j] {
                        sum += self.state.slot_back_dyn[ti][gi][gslot][v];
                    }
                }
                for &(gr, gslot) in graph.rew_reading[j].iter() {
                    if rewards_here.contains(&gr) {
                        sum += self.state.slot_back_rew[ti][gr][gslot][v];
                    }
                }
                residual = residual.max(self.store(ti, Slot::BackVar, (j, 0, v), sum));
            }
        }

        residual
    }

    /// Backward message from a factor to one of its parents, marginalizing
    /// the other parents under their forward messages.
    fn slot_back_value(
        &self,
        ti: usize,
        factor: FactorRef,
        slot: usize,
        v: usize,
        family: UpdateFamily,
        lambda: f64,
    ) -> f64 {
        let (pidx, nslots) = match factor {
            FactorRef::Dyn(i) => {
                let f = &self.graph.dyn_factors[i];
                (&f.pidx, f.parents.len())
            }
            FactorRef::Rew(r) => {
                let f = &self.graph.rew_factors[r];
                (&f.pidx, f.parents.len())
            }
        };
        let body = |state: &MessageState, cfg: usize| -> f64 {
            match factor {
                FactorRef::Dyn(i) => state.back_parent[ti][i][cfg],
                FactorRef::Rew(r) => state.held_rew[ti][r][cfg],
            }
        };
        let fwd = |state: &MessageState, s: usize, digit: usize| -> f64 {
            match factor {
                FactorRef::Dyn(i) => state.slot_fwd_dyn[ti][i][s][digit],
                FactorRef::Rew(r) => state.slot_fwd_rew[ti][r][s][digit],
            }
        };
        match family {
            UpdateFamily::Smoothed => {
                let mut acc = LogSumAcc::new();
                for cfg in 0..pidx.size() {
                    if pidx.digit(cfg, slot) != v {
                        continue;
                    }
                    let mut term = body(&self.state, cfg);
                    for s in 0..nslots {
                        if s != slot {
                            term += fwd(&self.state, s, pidx.digit(cfg, s));
                        }
                    }
                    acc.add(term);
                }
                acc.value()
            }
            UpdateFamily::MaxEntRescaled { .. } => {
                let mut acc = LogSumAcc::new();
                for cfg in 0..pidx.size() {
                    if pidx.digit(cfg, slot) != v {
                        continue;
                    }
                    let mut term = lambda * body(&self.state, cfg);
                    for s in 0..nslots {
                        if s != slot {
                            term += fwd(&self.state, s, pidx.digit(cfg, s));
                        }
                    }
                    acc.add(term);
                }
                acc.value() / lambda
            }
            UpdateFamily::MaxEntAdditive { .. } => {
                // Expected backward value under the normalized forward weights
                // of the other parents.
                let mut max_logw = f64::NEG_INFINITY;
                for cfg in 0..pidx.size() {
                    if pidx.digit(cfg, slot) != v {
                        continue;
                    }
                    let mut logw = 0.0;
                    for s in 0..nslots {
                        if s != slot {
                            logw += fwd(&self.state, s, pidx.digit(cfg, s));
                        }
                    }
                    max_logw = max_logw.max(logw);
                }
                if max_logw == f64::NEG_INFINITY {
                    return 0.0;
                }
                let mut wsum = 0.0;
                let mut acc = 0.0;
                for cfg in 0..pidx.size() {
                    if pidx.digit(cfg, slot) != v {
                        continue;
                    }
                    let mut logw = 0.0;
                    for s in 0..nslots {
                        if s != slot {
                            logw += fwd(&self.state, s, pidx.digit(cfg, s));
                        }
                    }
                    let w = (logw - max_logw).exp();
                    wsum += w;
                    acc += w * body(&self.state, cfg);
                }
                acc / wsum
            }
        }
    }

    /// Iterates one slice until the undamped residual falls below the inner
    /// tolerance; returns (first residual, last residual, iterations).
    pub fn solve_timeslice(&mut self, t: usize, eps: f64) -> (f64, f64, usize) {
        let mut first = f64::INFINITY;
        let mut last;
        let mut iters = 0;
        loop {
            let r = self.update_timeslice(t, eps);
            iters += 1;
            if iters == 1 {
                first = r;
            }
            last = r;
            if r < self.config.inner_tol || iters >= self.config.inner_cap {
                break;
            }
        }
        (first, last, iters)
    }

    fn eps_at(&self, iter: usize) -> f64 {
        match self.config.eps_schedule {
            EpsSchedule::Constant(e) => e,
            EpsSchedule::InverseIter { floor } => (1.0 / iter as f64).max(floor),
            EpsSchedule::AnnealEvery { every, floor } => {
                let stage = 1 + (iter - 1) / every.max(1);
                (1.0 / stage as f64).max(floor)
            }
        }
    }

    fn eps_floor(&self) -> f64 {
        match self.config.eps_schedule {
            EpsSchedule::Constant(e) => e,
            EpsSchedule::InverseIter { floor } => floor,
            EpsSchedule::AnnealEvery { floor, .. } => floor,
        }
    }

    /// Alternating backward/forward outer loop with inner per-slice solves.
    pub fn run(&mut self) -> VbpResult {
        let horizon = self.graph.horizon;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut outer_iters = 0;
        let mut final_residual = f64::INFINITY;
        let mut final_eps = self.eps_floor();
        for iter in 1..=self.config.max_outer_iters {
            let eps = self.eps_at(iter);
            let mut outer_res: f64 = 0.0;
            for t in (1..=horizon).rev() {
                let (first, _, _) = self.solve_timeslice(t, eps);
                outer_res = outer_res.max(first);
            }
            for t in 1..=horizon {
                let (first, _, _) = self.solve_timeslice(t, eps);
                outer_res = outer_res.max(first);
            }
            outer_iters = iter;
            final_residual = outer_res;
            final_eps = eps;
            if self.config.trace {
                trace.push(TraceRow {
                    iter,
                    eps,
                    residual: outer_res,
                    bound: super::bound::evaluate_bound(self.graph, &self.state, &self.config, eps),
                });
            }
            if outer_res < self.config.inner_tol && eps <= self.eps_floor() {
                converged = true;
                break;
            }
        }
        let eps = final_eps;
        let bound = super::bound::evaluate_bound(self.graph, &self.state, &self.config, eps);
        let action_beliefs = super::bound::action_beliefs(self.graph, &self.state, &self.config, eps);
        let factor_beliefs = super::bound::factor_beliefs(self.graph, &self.state, &self.config, eps);
        let variable_beliefs =
            super::bound::variable_beliefs(self.graph, &self.state, &self.config);
        VbpResult {
            bound,
            action_beliefs,
            factor_beliefs,
            variable_beliefs,
            converged,
            outer_iters,
            final_residual,
            final_eps: eps,
            clamp_events: self.state.clamp_events,
            trace,
        }
    }
}

#[derive(Clone, Copy)]
enum FactorRef {
    Dyn(usize),
    Rew(usize),
}

#[derive(Clone, Copy)]
enum Slot {
    Q,
    BackParent,
    ToAction,
    FromAction,
    FwdParent,
    SlotFwdDyn,
    SlotBackDyn,
    SlotFwdRew,
    SlotBackRew,
    FwdVar,
    BackVar,
}
