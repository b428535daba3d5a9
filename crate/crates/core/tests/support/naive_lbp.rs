/// Independently coded sum-product updates on the unrolled factor graph:
/// every message family is recomputed by direct summation over full factor
/// tables, with the same schedule, damping, floors, and normalization as the
/// engine. At smoothing 1 the engine must match this entry for entry.
struct NaiveLbp<'a> {
    graph: &'a planference::vbp::PlanningFactorGraph,
    state: planference::vbp::MessageState,
    lambda: f64,
    damping: f64,
    floor: f64,
}

impl<'a> NaiveLbp<'a> {
    fn new(graph: &'a planference::vbp::PlanningFactorGraph, config: &planference::vbp::VbpConfig) -> Self {
        NaiveLbp {
            graph,
            state: planference::vbp::MessageState::init(graph, config),
            lambda: config.lambda,
            damping: config.damping,
            floor: config.message_floor,
        }
    }

    fn write(&mut self, slot: &mut [f64], values: Vec<f64>, normalize: bool) {
        let mut values = values;
        for v in values.iter_mut() {
            if !v.is_finite() || *v < self.floor {
                *v = self.floor;
            }
        }
        if normalize {
            let z = planference::numeric::log_sum_exp(&values);
            if z.is_finite() {
                for v in values.iter_mut() {
                    *v = (*v - z).max(self.floor);
                }
            }
        }
        for (s, v) in slot.iter_mut().zip(values) {
            *s = self.damping * *s + (1.0 - self.damping) * v;
        }
    }

    fn update_timeslice(&mut self, t: usize) {
        let g = self.graph;
        let ti = t - 1;
        let ne = g.num_entities();
        let na = g.num_actions;
        let horizon = g.horizon;
        let rewards_here: Vec<usize> = g.rewards_at(t).collect();
        let dyn_here = t < horizon;

        if dyn_here {
            // Q tables.
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                let card = g.entities[i];
                let mut vals = Vec::new();
                for cfg in 0..f.pidx.size() {
                    for a in 0..na {
                        let mut acc = planference::numeric::LogSumAcc::new();
                        for c in 0..card {
                            let lp = f.log_cpt[(cfg * na + a) * card + c];
                            if lp != f64::NEG_INFINITY {
                                acc.add(lp + self.state.back_var[ti + 1][i][c]);
                            }
                        }
                        vals.push(acc.value());
                    }
                }
                let mut slot = std::mem::take(&mut self.state.q_tab[ti][i]);
                self.write(&mut slot, vals, false);
                self.state.q_tab[ti][i] = slot;
            }
            // Factor-to-parent-group backward, by direct (a, child) sums.
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                let card = g.entities[i];
                let mut vals = Vec::new();
                for cfg in 0..f.pidx.size() {
                    let mut acc = planference::numeric::LogSumAcc::new();
                    for a in 0..na {
                        for c in 0..card {
                            let lp = f.log_cpt[(cfg * na + a) * card + c];
                            if lp != f64::NEG_INFINITY {
                                acc.add(
                                    lp + self.state.back_var[ti + 1][i][c]
                                        + self.state.from_action[ti][i][a],
                                );
                            }
                        }
                    }
                    vals.push(acc.value());
                }
                let mut slot = std::mem::take(&mut self.state.back_parent[ti][i]);
                self.write(&mut slot, vals, false);
                self.state.back_parent[ti][i] = slot;
            }
            // Factor-to-action, by direct (cfg, child) sums. Reads the stored
            // parent-group forward message like the engine does (it is only
            // refreshed later in the update order).
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                let card = g.entities[i];
                let mut vals = Vec::new();
                for a in 0..na {
                    let mut acc = planference::numeric::LogSumAcc::new();
                    for cfg in 0..f.pidx.size() {
                        let fwd = self.state.fwd_parent[ti][i][cfg];
                        for c in 0..card {
                            let lp = f.log_cpt[(cfg * na + a) * card + c];
                            if lp != f64::NEG_INFINITY {
                                acc.add(lp + self.state.back_var[ti + 1][i][c] + fwd);
                            }
                        }
                    }
                    vals.push(acc.value());
                }
                let mut slot = std::mem::take(&mut self.state.to_action[ti][i]);
                self.write(&mut slot, vals, true);
                self.state.to_action[ti][i] = slot;
            }
            // Action-to-factor.
            for i in 0..ne {
                let mut vals = Vec::new();
                for a in 0..na {
                    let mut sum = 0.0;
                    for k in 0..ne {
                        if k != i {
                            sum += self.state.to_action[ti][k][a];
                        }
                    }
                    vals.push(sum);
                }
                let mut slot = std::mem::take(&mut self.state.from_action[ti][i]);
                self.write(&mut slot, vals, false);
                self.state.from_action[ti][i] = slot;
            }
            // Forward to the child variable, again over the stored
            // parent-group forward message.
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                let card = g.entities[i];
                let mut vals = Vec::new();
                for c in 0..card {
                    let mut acc = planference::numeric::LogSumAcc::new();
                    for cfg in 0..f.pidx.size() {
                        let fwd = self.state.fwd_parent[ti][i][cfg];
                        for a in 0..na {
                            let lp = f.log_cpt[(cfg * na + a) * card + c];
                            if lp != f64::NEG_INFINITY {
                                acc.add(lp + fwd + self.state.from_action[ti][i][a]);
                            }
                        }
                    }
                    vals.push(acc.value());
                }
                let mut slot = std::mem::take(&mut self.state.fwd_var[ti + 1][i]);
                self.write(&mut slot, vals, true);
                self.state.fwd_var[ti + 1][i] = slot;
            }
            // Parent-group forward products.
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                let mut vals = Vec::new();
                for cfg in 0..f.pidx.size() {
                    let mut sum = 0.0;
                    for (slot_idx, _) in f.parents.iter().enumerate() {
                        sum += self.state.slot_fwd_dyn[ti][i][slot_idx]
                            [f.pidx.digit(cfg, slot_idx)];
                    }
                    vals.push(sum);
                }
                let mut slot = std::mem::take(&mut self.state.fwd_parent[ti][i]);
                self.write(&mut slot, vals, false);
                self.state.fwd_parent[ti][i] = slot;
            }
        }

        // Variable-to-factor forward messages.
        for j in 0..ne {
            let card = g.entities[j];
            let dyn_readers: Vec<(usize, usize)> =
                if dyn_here { g.dyn_reading[j].clone() } else { Vec::new() };
            let rew_readers: Vec<(usize, usize)> = g.rew_reading[j]
                .iter()
                .copied()
                .filter(|&(r, _)| rewards_here.contains(&r))
                .collect();
            for &(fi, slot_idx) in &dyn_readers {
                let mut vals = Vec::new();
                for v in 0..card {
                    let mut sum = self.state.fwd_var[ti][j][v];
                    for &(gi, gslot) in &dyn_readers {
                        if gi != fi {
                            sum += self.state.slot_back_dyn[ti][gi][gslot][v];
                        }
                    }
                    for &(gr, gslot) in &rew_readers {
                        sum += self.state.slot_back_rew[ti][gr][gslot][v];
                    }
                    vals.push(sum);
                }
                let mut slot = std::mem::take(&mut self.state.slot_fwd_dyn[ti][fi][slot_idx]);
                self.write(&mut slot, vals, true);
                self.state.slot_fwd_dyn[ti][fi][slot_idx] = slot;
            }
            for &(fr, slot_idx) in &rew_readers {
                let mut vals = Vec::new();
                for v in 0..card {
                    let mut sum = self.state.fwd_var[ti][j][v];
                    for &(gi, gslot) in &dyn_readers {
                        sum += self.state.slot_back_dyn[ti][gi][gslot][v];
                    }
                    for &(gr, gslot) in &rew_readers {
                        if gr != fr {
                            sum += self.state.slot_back_rew[ti][gr][gslot][v];
                        }
                    }
                    vals.push(sum);
                }
                let mut slot = std::mem::take(&mut self.state.slot_fwd_rew[ti][fr][slot_idx]);
                self.write(&mut slot, vals, true);
                self.state.slot_fwd_rew[ti][fr][slot_idx] = slot;
            }
        }

        // Factor-to-variable backward: marginalize the stored parent-group
        // backward message (which folded the action product at its own,
        // earlier position in the update order) against the other parents'
        // forward messages.
        if dyn_here {
            for i in 0..ne {
                let f = &g.dyn_factors[i];
                for (slot_idx, &j) in f.parents.iter().enumerate() {
                    let mut vals = Vec::new();
                    for v in 0..g.entities[j] {
                        let mut acc = planference::numeric::LogSumAcc::new();
                        for cfg in 0..f.pidx.size() {
                            if f.pidx.digit(cfg, slot_idx) != v {
                                continue;
                            }
                            let mut others = 0.0;
                            for (s2, _) in f.parents.iter().enumerate() {
                                if s2 != slot_idx {
                                    others += self.state.slot_fwd_dyn[ti][i][s2]
                                        [f.pidx.digit(cfg, s2)];
                                }
                            }
                            acc.add(self.state.back_parent[ti][i][cfg] + others);
                        }
                        vals.push(acc.value());
                    }
                    let mut slot =
                        std::mem::take(&mut self.state.slot_back_dyn[ti][i][slot_idx]);
                    self.write(&mut slot, vals, false);
                    self.state.slot_back_dyn[ti][i][slot_idx] = slot;
                }
            }
        }
        for &r in &rewards_here {
            let f = &g.rew_factors[r];
            for (slot_idx, &j) in f.parents.iter().enumerate() {
                let mut vals = Vec::new();
                for v in 0..g.entities[j] {
                    let mut acc = planference::numeric::LogSumAcc::new();
                    for cfg in 0..f.pidx.size() {
                        if f.pidx.digit(cfg, slot_idx) != v {
                            continue;
                        }
                        let mut term = self.lambda * f.table[cfg];
                        for (s2, _) in f.parents.iter().enumerate() {
                            if s2 != slot_idx {
                                term += self.state.slot_fwd_rew[ti][r][s2]
                                    [f.pidx.digit(cfg, s2)];
                            }
                        }
                        acc.add(term);
                    }
                    vals.push(acc.value());
                }
                let mut slot = std::mem::take(&mut self.state.slot_back_rew[ti][r][slot_idx]);
                self.write(&mut slot, vals, false);
                self.state.slot_back_rew[ti][r][slot_idx] = slot;
            }
        }

        // Aggregated variable backward messages.
        for j in 0..ne {
            let card = g.entities[j];
            let mut vals = Vec::new();
            for v in 0..card {
                let mut sum = 0.0;
                if dyn_here {
                    for &(gi, gslot) in &g.dyn_reading[j] {
                        sum += self.state.slot_back_dyn[ti][gi][gslot][v];
                    }
                }
                for &(gr, gslot) in g.rew_reading[j].iter() {
                    if rewards_here.contains(&gr) {
                        sum += self.state.slot_back_rew[ti][gr][gslot][v];
                    }
                }
                vals.push(sum);
            }
            let mut slot = std::mem::take(&mut self.state.back_var[ti][j]);
            self.write(&mut slot, vals, false);
            self.state.back_var[ti][j] = slot;
        }
    }
}

fn max_state_diff(a: &planference::vbp::MessageState, b: &planference::vbp::MessageState) -> f64 {
    fn diff3(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            for (u, v) in x.iter().zip(y) {
                for (p, q) in u.iter().zip(v) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        worst
    }
    fn diff4(a: &[Vec<Vec<Vec<f64>>>], b: &[Vec<Vec<Vec<f64>>>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            worst = worst.max(diff3(x, y));
        }
        worst
    }
    let mut worst: f64 = 0.0;
    worst = worst.max(diff3(&a.q_tab, &b.q_tab));
    worst = worst.max(diff3(&a.back_parent, &b.back_parent));
    worst = worst.max(diff3(&a.to_action, &b.to_action));
    worst = worst.max(diff3(&a.from_action, &b.from_action));
    worst = worst.max(diff3(&a.fwd_parent, &b.fwd_parent));
    worst = worst.max(diff4(&a.slot_fwd_dyn, &b.slot_fwd_dyn));
    worst = worst.max(diff4(&a.slot_back_dyn, &b.slot_back_dyn));
    worst = worst.max(diff4(&a.slot_fwd_rew, &b.slot_fwd_rew));
    worst = worst.max(diff4(&a.slot_back_rew, &b.slot_back_rew));
    worst = worst.max(diff3(&a.fwd_var, &b.fwd_var));
    worst = worst.max(diff3(&a.back_var, &b.back_var));
    worst
}


/// Per-family max deviations, labeled, for divergence localization.
#[allow(dead_code)]
fn diff_families(
    a: &planference::vbp::MessageState,
    b: &planference::vbp::MessageState,
) -> Vec<(&'static str, f64)> {
    fn diff3(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            for (u, v) in x.iter().zip(y) {
                for (p, q) in u.iter().zip(v) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        worst
    }
    fn diff4(a: &[Vec<Vec<Vec<f64>>>], b: &[Vec<Vec<Vec<f64>>>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            worst = worst.max(diff3(x, y));
        }
        worst
    }
    vec![
        ("q_tab", diff3(&a.q_tab, &b.q_tab)),
        ("back_parent", diff3(&a.back_parent, &b.back_parent)),
        ("to_action", diff3(&a.to_action, &b.to_action)),
        ("from_action", diff3(&a.from_action, &b.from_action)),
        ("fwd_parent", diff3(&a.fwd_parent, &b.fwd_parent)),
        ("slot_fwd_dyn", diff4(&a.slot_fwd_dyn, &b.slot_fwd_dyn)),
        ("slot_back_dyn", diff4(&a.slot_back_dyn, &b.slot_back_dyn)),
        ("slot_fwd_rew", diff4(&a.slot_fwd_rew, &b.slot_fwd_rew)),
        ("slot_back_rew", diff4(&a.slot_back_rew, &b.slot_back_rew)),
        ("fwd_var", diff3(&a.fwd_var, &b.fwd_var)),
        ("back_var", diff3(&a.back_var, &b.back_var)),
    ]
}
