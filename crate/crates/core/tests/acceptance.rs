//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria 7(b) and 8 contain sub-clauses pinned to reference values that a
//! faithfully deterministic implementation measurably does not reproduce
//! (see the failure messages for the analysis); they are asserted as stated
//! rather than weakened, so those two tests are expected to stay red.

use planference::domains::{build_reactivity_env, generate_synthetic, SyntheticSpec};
use planference::harness::{
    aggregate, simulate, ConformantAdapter, EpisodeConfig, ExactPlanningAdapter, MapAdapter,
    SweepConfig,
};
use planference::mdpio::{parse_mdp, serialize_mdp, MethodId, ResultRow};
use planference::model::{FactoredMdp, FlatMdp};
use planference::numeric::{argmax, LogSumAcc};
use planference::oracle::{
    brute_force_policy_search, first_action_values, map_viterbi, marginal, marginal_uniform,
    mmap_enumerate, plan_value_iteration, RiskParams,
};
use planference::polytope::{
    build_factored_lp, build_flat_lp, det_ub_concave, determinize, hindsight_mc, solve_concave,
    solve_lp, FrankWolfeOptions, SolveStatus,
};
use planference::randgen::{random_deterministic_flat, random_flat, random_flat_grid};
use planference::rng::Rng;
use planference::vbp::{
    self, build_graph, EpsSchedule, MessageState, PlanningFactorGraph, UpdateFamily, VbpConfig,
    VbpEngine,
};

fn pass(criterion: &str, detail: String) {
    println!("[PASS] {criterion}: {detail}");
}

fn fail(criterion: &str, detail: String) -> ! {
    println!("[FAIL] {criterion}: {detail}");
    panic!("{criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: exact-oracle ordering on random stochastic flat MDPs.
// ---------------------------------------------------------------------------
#[test]
fn criterion_01_ordering_suite() {
    let name = "criterion 1 (ordering suite)";
    let mut rng = Rng::new(0xC1);
    let tol = 1e-9;
    let count = 200;
    for trial in 0..count {
        let n = 2 + rng.below(5); // up to 6 states
        let na = 2 + rng.below(2); // up to 3 actions
        let horizon = 2 + rng.below(4); // up to 5 steps
        let flat = random_flat(&mut rng, n, na, horizon);
        let risk = RiskParams::new(1.0).unwrap();
        let plan = plan_value_iteration(&flat, risk).value;
        let marg = marginal(&flat, risk).unwrap().value;
        let marg_u = marginal_uniform(&flat, risk).unwrap().value;
        let map = map_viterbi(&flat, risk).unwrap().value;
        let mmap = mmap_enumerate(&flat, risk, 1 << 24).unwrap().value;
        let checks = [
            (map <= mmap + tol, "map <= mmap"),
            (marg_u <= mmap + tol, "marginal-u <= mmap"),
            (mmap <= plan + tol, "mmap <= planning"),
            (plan <= marg + tol, "planning <= marginal"),
        ];
        for (ok, label) in checks {
            if !ok {
                fail(name, format!("trial {trial}: {label} violated"));
            }
        }
    }
    pass(name, format!("{count} stochastic instances ordered within {tol:e}"));
}

// ---------------------------------------------------------------------------
// Criterion 2: deterministic dynamics collapse MAP = MMAP = planning.
// ---------------------------------------------------------------------------
#[test]
fn criterion_02_deterministic_suite() {
    let name = "criterion 2 (deterministic dynamics)";
    let mut rng = Rng::new(0xC2);
    let tol = 1e-9;
    let count = 100;
    for trial in 0..count {
        let n = 2 + rng.below(5);
        let na = 2 + rng.below(2);
        let horizon = 2 + rng.below(4);
        let flat = random_deterministic_flat(&mut rng, n, na, horizon);
        let risk = RiskParams::new(1.0).unwrap();
        let plan = plan_value_iteration(&flat, risk).value;
        let marg = marginal(&flat, risk).unwrap().value;
        let marg_u = marginal_uniform(&flat, risk).unwrap().value;
        let map = map_viterbi(&flat, risk).unwrap().value;
        let mmap = mmap_enumerate(&flat, risk, 1 << 24).unwrap().value;
        if (map - plan).abs() > tol || (mmap - plan).abs() > tol {
            fail(
                name,
                format!("trial {trial}: map {map} mmap {mmap} planning {plan} not equal"),
            );
        }
        if !(marg_u <= map + tol && map <= marg + tol) {
            fail(name, format!("trial {trial}: marginal bracket violated"));
        }
    }
    pass(name, format!("{count} deterministic instances collapse within {tol:e}"));
}

// ---------------------------------------------------------------------------
// Criterion 3: single-entity message passing reproduces the exact values in
// one backward+forward pass.
// ---------------------------------------------------------------------------

/// Random chain whose action values are separated at every stage and state,
/// so smoothing/temperature bias stays far below the tolerance.
fn gap_conditioned_chain(rng: &mut Rng) -> FlatMdp {
    'outer: loop {
        let n = 3 + rng.below(2);
        let flat = random_flat(rng, n, 2, 4);
        for lambda in [0.0, 0.3, 1.0] {
            let risk = RiskParams::new(lambda).unwrap();
            let oracle = plan_value_iteration(&flat, risk);
            let back = oracle.backward.unwrap();
            for t in 1..flat.horizon {
                for x in 0..flat.num_states {
                    let mut qs = Vec::with_capacity(flat.num_actions);
                    for a in 0..flat.num_actions {
                        let row = flat.transition_row(x, a);
                        let q = if lambda == 0.0 {
                            row.iter()
                                .enumerate()
                                .map(|(x2, &p)| p * back[t][x2])
                                .sum::<f64>()
                        } else {
                            let mut acc = LogSumAcc::new();
                            for (x2, &p) in row.iter().enumerate() {
                                if p > 0.0 {
                                    acc.add(p.ln() + back[t][x2]);
                                }
                            }
                            acc.value()
                        };
                        qs.push(q);
                    }
                    qs.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let needed = if lambda == 0.0 { 0.15 } else { 1e-3 };
                    if qs[0] - qs[1] < needed {
                        continue 'outer;
                    }
                }
            }
            let _ = oracle.value;
        }
        return flat;
    }
}

#[test]
fn criterion_03_flat_exactness_of_message_passing() {
    let name = "criterion 3 (flat exactness of message passing)";
    let mut rng = Rng::new(0xC3);
    let count = 50;
    let tol = 1e-6;
    for trial in 0..count {
        let flat = gap_conditioned_chain(&mut rng);
        let m = FactoredMdp::from_flat(&flat).unwrap();
        for lambda in [0.3, 1.0] {
            let config = VbpConfig {
                lambda,
                eps_schedule: EpsSchedule::Constant(1e-6),
                damping: 0.0,
                max_outer_iters: 1,
                ..Default::default()
            };
            let result = vbp::sweep(&m, config).unwrap();
            let exact = plan_value_iteration(&flat, RiskParams::new(lambda).unwrap()).value;
            if (result.bound - exact).abs() > tol {
                fail(
                    name,
                    format!(
                        "trial {trial} lambda {lambda}: one-pass bound {} vs exact {exact}",
                        result.bound
                    ),
                );
            }
        }
        let config = VbpConfig {
            lambda: 0.0,
            family: UpdateFamily::MaxEntAdditive { alpha: 0.01 },
            eps_schedule: EpsSchedule::Constant(1.0),
            damping: 0.0,
            max_outer_iters: 1,
            ..Default::default()
        };
        let result = vbp::sweep(&m, config).unwrap();
        let exact = plan_value_iteration(&flat, RiskParams::additive()).value;
        if (result.bound - exact).abs() > tol {
            fail(
                name,
                format!(
                    "trial {trial} additive alpha 0.01: one-pass bound {} vs exact {exact}",
                    result.bound
                ),
            );
        }
    }
    pass(
        name,
        format!("{count} chains exact within {tol:e} after one backward+forward pass"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: flat LP optimum equals additive value iteration.
// ---------------------------------------------------------------------------
#[test]
fn criterion_04_flat_lp_exactness() {
    let name = "criterion 4 (flat LP exactness)";
    let mut rng = Rng::new(0xC4);
    let count = 100;
    let tol = 1e-6;
    for trial in 0..count {
        let (n, na, horizon) = (2 + rng.below(4), 1 + rng.below(3), 2 + rng.below(3));
        let flat = random_flat(&mut rng, n, na, horizon);
        let report = solve_lp(&build_flat_lp(&flat)).unwrap();
        if report.status != SolveStatus::Optimal {
            fail(name, format!("trial {trial}: solver status {:?}", report.status));
        }
        let vi = plan_value_iteration(&flat, RiskParams::additive()).value;
        if (report.objective - vi).abs() > tol {
            fail(
                name,
                format!("trial {trial}: LP {} vs additive VI {vi}", report.objective),
            );
        }
    }
    pass(name, format!("{count} flat LPs match additive value iteration within {tol:e}"));
}

// ---------------------------------------------------------------------------
// Criterion 5: factored upper bounds dominate on 3-entity instances.
// ---------------------------------------------------------------------------
#[test]
fn criterion_05_factored_upper_bounds() {
    let name = "criterion 5 (factored upper bounds)";
    let mut rng = Rng::new(0xC5);
    let count = 100;
    let gap_tol = 1e-5;
    let mut worst_gap: f64 = 0.0;
    for trial in 0..count {
        let m = planference::randgen::random_factored_binary(&mut rng, 3, 2, 4);
        let flat = m.flatten(64).unwrap();

        let additive_exact = plan_value_iteration(&flat, RiskParams::additive()).value;
        let lp = solve_lp(&build_factored_lp(&m)).unwrap();
        if lp.status != SolveStatus::Optimal || lp.objective < additive_exact - 1e-7 {
            fail(
                name,
                format!(
                    "trial {trial}: factored LP {} below exact additive {additive_exact}",
                    lp.objective
                ),
            );
        }

        let exact = plan_value_iteration(&flat, RiskParams::new(1.0).unwrap()).value;
        let opts = FrankWolfeOptions { gap_tol, ..Default::default() };
        let concave = solve_concave(&m, 1.0, opts).unwrap();
        if !concave.converged || concave.gap > gap_tol {
            fail(
                name,
                format!("trial {trial}: duality gap {} exceeds {gap_tol:e}", concave.gap),
            );
        }
        worst_gap = worst_gap.max(concave.gap);
        let upper = concave.upper_bound();
        if upper < exact - 1e-9 {
            fail(name, format!("trial {trial}: concave bound {upper} below exact {exact}"));
        }
        let vbp_result = vbp::sweep(
            &m,
            VbpConfig { lambda: 1.0, max_outer_iters: 2000, ..Default::default() },
        )
        .unwrap();
        if vbp_result.converged && upper < vbp_result.bound - 1e-6 {
            fail(
                name,
                format!(
                    "trial {trial}: concave bound {upper} below converged Bethe bound {}",
                    vbp_result.bound
                ),
            );
        }
    }
    pass(
        name,
        format!("{count} instances dominated; worst certified gap {worst_gap:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: determinization sandwich on grid-probability flat MDPs.
// ---------------------------------------------------------------------------
#[test]
fn criterion_06_determinization_sandwich() {
    let name = "criterion 6 (determinization sandwich)";
    let mut rng = Rng::new(0xC6);
    let count = 50;
    let levels = 16;
    for trial in 0..count {
        let flat = random_flat_grid(&mut rng, 3, 2, 3, levels);
        let det = determinize(&flat, levels);
        if det.reconstruction_error != 0.0 {
            fail(name, format!("trial {trial}: grid instance should reconstruct exactly"));
        }
        let exact = plan_value_iteration(&flat, RiskParams::new(1.0).unwrap()).value;
        let ub = det_ub_concave(&flat, &det, FrankWolfeOptions::default()).unwrap();
        let upper = ub.upper_bound();
        if exact > upper + 1e-9 {
            fail(name, format!("trial {trial}: exact {exact} above bound {upper}"));
        }
        let mc = hindsight_mc(&flat, &det, 10_000, 0xC6 + trial as u64);
        if mc.estimate < exact - 3.0 * mc.std_error - 1e-9 {
            fail(
                name,
                format!(
                    "trial {trial}: hindsight estimate {} below exact {exact} (se {})",
                    mc.estimate, mc.std_error
                ),
            );
        }
        if mc.estimate > upper + 3.0 * mc.std_error + 1e-6 {
            fail(
                name,
                format!(
                    "trial {trial}: hindsight estimate {} above bound {upper} (se {})",
                    mc.estimate, mc.std_error
                ),
            );
        }
    }
    pass(name, format!("{count} instances sandwiched (exact <= MC <= concave bound)"));
}

// ---------------------------------------------------------------------------
// Criterion 7: directional reproduction of the stochasticity sweep.
// ---------------------------------------------------------------------------

fn paired_abs_error_bootstrap(
    rows: &[ResultRow],
    a: MethodId,
    b: MethodId,
    seed: u64,
) -> (f64, f64, f64) {
    // Pair rows by instance id.
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut by_instance: std::collections::HashMap<&str, (Option<f64>, Option<f64>)> =
        std::collections::HashMap::new();
    for r in rows {
        let err = (r.value - r.exact_value.unwrap()).abs();
        let entry = by_instance.entry(r.instance.as_str()).or_default();
        if r.method == a {
            entry.0 = Some(err);
        } else if r.method == b {
            entry.1 = Some(err);
        }
    }
    for (_, (ea, eb)) in by_instance {
        if let (Some(x), Some(y)) = (ea, eb) {
            pairs.push((x, y));
        }
    }
    let n = pairs.len();
    let mean_diff = pairs.iter().map(|(x, y)| x - y).sum::<f64>() / n as f64;
    let mut rng = Rng::new(seed);
    let mut diffs = Vec::with_capacity(2000);
    for _ in 0..2000 {
        let mut sum = 0.0;
        for _ in 0..n {
            let (x, y) = pairs[rng.below(n)];
            sum += x - y;
        }
        diffs.push(sum / n as f64);
    }
    diffs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    (mean_diff, diffs[49], diffs[1949]) // 2.5% and 97.5% of 2000
}

#[test]
fn criterion_07_stochasticity_sweep_directions() {
    let name = "criterion 7 (stochasticity sweep)";
    let buckets = vec![0.1, 0.3, 0.5, 0.7, 0.9];
    let cfg = SweepConfig {
        entropy_targets: buckets.clone(),
        instances_per_bucket: 300,
        methods: vec![MethodId::PlanningVi, MethodId::Map, MethodId::Mmap, MethodId::Vbp],
        lambda: 1.0,
        master_seed: 0xC7,
        vbp: VbpConfig { lambda: 1.0, max_outer_iters: 400, ..Default::default() },
        ..Default::default()
    };
    let (rows, failures) = planference::harness::compare_sweep(&cfg);
    if !failures.is_empty() {
        fail(name, format!("{} instances failed: {:?}", failures.len(), &failures[..1]));
    }
    let summary = aggregate(&rows, &buckets);
    let abs_err = |method: MethodId, bucket: f64| -> f64 {
        summary
            .iter()
            .find(|s| s.method == method && s.bucket == bucket)
            .map(|s| s.mean_abs_error)
            .unwrap()
    };
    let advantage = |method: MethodId, bucket: f64| -> f64 {
        summary
            .iter()
            .find(|s| s.method == method && s.bucket == bucket)
            .map(|s| s.mean_advantage)
            .unwrap()
    };

    // (a) High stochasticity: the Bethe bound beats exact open-loop inference
    // with a bootstrap CI excluding zero.
    for &bucket in &[0.7, 0.9] {
        let bucket_rows: Vec<ResultRow> = rows
            .iter()
            .filter(|r| (r.h_mdp - bucket).abs() < 0.1)
            .cloned()
            .collect();
        let (mean_diff, _, hi) =
            paired_abs_error_bootstrap(&bucket_rows, MethodId::Vbp, MethodId::Mmap, 0x707);
        if !(mean_diff < 0.0 && hi < 0.0) {
            fail(
                name,
                format!(
                    "(a) bucket {bucket}: vbp |err| {} vs mmap |err| {} (diff {mean_diff:.2e}, CI hi {hi:.2e})",
                    abs_err(MethodId::Vbp, bucket),
                    abs_err(MethodId::Mmap, bucket)
                ),
            );
        }
    }
    // (c) High stochasticity: better first actions.
    for &bucket in &[0.7, 0.9] {
        let vbp_adv = advantage(MethodId::Vbp, bucket);
        let mmap_adv = advantage(MethodId::Mmap, bucket);
        if vbp_adv < mmap_adv - 1e-12 {
            fail(
                name,
                format!("(c) bucket {bucket}: vbp advantage {vbp_adv} below mmap {mmap_adv}"),
            );
        }
    }
    // (b) Low stochasticity: exact single/open-loop inference should be no
    // worse than the Bethe bound. A converged Bethe optimizer measurably
    // beats exact MAP here (its trajectory log-probability deficit is ~0.1
    // nats at this bucket), so this clause does not reproduce; the assert is
    // kept as specified.
    let low = 0.1;
    let vbp_low = abs_err(MethodId::Vbp, low);
    let map_low = abs_err(MethodId::Map, low);
    let mmap_low = abs_err(MethodId::Mmap, low);
    if !(map_low <= vbp_low && mmap_low <= vbp_low) {
        fail(
            name,
            format!(
                "(b) bucket {low}: map |err| {map_low:.3e}, mmap |err| {mmap_low:.3e}, vbp |err| {vbp_low:.3e} — exact types do not dominate the converged Bethe bound at desk scale"
            ),
        );
    }
    pass(name, "directional claims (a), (b), (c) reproduced".into());
}

// ---------------------------------------------------------------------------
// Criterion 8: reactivity experiment.
// ---------------------------------------------------------------------------
#[test]
fn criterion_08_reactivity_experiment() {
    let name = "criterion 8 (reactivity experiment)";
    let env = build_reactivity_env().mdp;
    let config = EpisodeConfig {
        episodes: 500,
        lookaheads: vec![9],
        master_seed: 0xC8,
        ..Default::default()
    };

    let mut planning = ExactPlanningAdapter::new(RiskParams::additive(), 64);
    let plan_result = simulate(&env, &mut planning, &config);
    if plan_result.mean != 1.0 {
        fail(name, format!("planning agent mean {} != 1.0", plan_result.mean));
    }

    let mut conformant = ConformantAdapter::new(64, 1 << 21);
    let conf_result = simulate(&env, &mut conformant, &config);
    if (conf_result.mean - 0.33).abs() > 1e-12 {
        fail(name, format!("conformant agent mean {} != 0.33", conf_result.mean));
    }

    let mut map_agent = MapAdapter::new(RiskParams::new(1.0).unwrap(), 64);
    let map_result = simulate(&env, &mut map_agent, &config);
    let map_ok = (map_result.mean - 0.13).abs() <= 0.05;
    if !map_ok {
        fail(
            name,
            format!(
                "exact-MAP agent mean {} outside 0.13±0.05; a replanning exact-MAP agent \
                 provably collects 1.0 here (from every reachable non-goal state with the \
                 knob up there is a probability-1 trajectory to the goal, so the maximizing \
                 trajectory coincides with optimal planning under any maximizing tie-break); \
                 the reference value is only consistent with probability-only scoring plus \
                 uniformly random tie-breaking",
                map_result.mean
            ),
        );
    }
    pass(
        name,
        format!(
            "planning {} conformant {} map {}",
            plan_result.mean, conf_result.mean, map_result.mean
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: smoothing-limit equivalences.
// ---------------------------------------------------------------------------

include!("support/naive_lbp.rs");

#[test]
fn criterion_09_maxent_equivalences() {
    let name = "criterion 9 (smoothing-limit equivalences)";
    // (a) Smoothing 1 equals independently coded sum-product, trajectory-wise.
    // Undamped so the naive expansion through intermediate messages is exact;
    // damping is exercised by the fixed-point tests elsewhere.
    let mut rng = Rng::new(0xC9);
    let m = planference::randgen::random_factored_binary(&mut rng, 3, 2, 3);
    let graph = build_graph(&m);
    let config = VbpConfig {
        lambda: 1.0,
        eps_schedule: EpsSchedule::Constant(1.0),
        damping: 0.0,
        max_outer_iters: 1,
        ..Default::default()
    };
    let mut engine = VbpEngine::new(&graph, config).unwrap();
    let mut naive = NaiveLbp::new(&graph, &config);
    let mut worst: f64 = 0.0;
    for _iter in 0..20 {
        for t in (1..=m.horizon).rev() {
            engine.update_timeslice(t, 1.0);
            naive.update_timeslice(t);
            worst = worst.max(max_state_diff(&engine.state, &naive.state));
        }
        for t in 1..=m.horizon {
            engine.update_timeslice(t, 1.0);
            naive.update_timeslice(t);
            worst = worst.max(max_state_diff(&engine.state, &naive.state));
        }
    }
    if worst > 1e-12 {
        fail(name, format!("(a) smoothing-1 trajectory deviates from sum-product by {worst:e}"));
    }

    // (b) Additive MaxEnt on a chain matches an independent soft value
    // iteration at unit temperature.
    let mut rng = Rng::new(0xC9 + 1);
    let mut worst_soft: f64 = 0.0;
    for _ in 0..10 {
        let flat = random_flat(&mut rng, 4, 2, 4);
        let m = FactoredMdp::from_flat(&flat).unwrap();
        let alpha = 1.0;
        let graph = build_graph(&m);
        let config = VbpConfig {
            lambda: 0.0,
            family: UpdateFamily::MaxEntAdditive { alpha },
            eps_schedule: EpsSchedule::Constant(1.0),
            damping: 0.0,
            max_outer_iters: 4,
            ..Default::default()
        };
        let mut engine = VbpEngine::new(&graph, config).unwrap();
        let _ = engine.run();
        // Independent soft value iteration.
        let n = flat.num_states;
        let mut soft = vec![vec![0.0; n]; flat.horizon];
        for x in 0..n {
            soft[flat.horizon - 1][x] = flat.state_reward(flat.horizon, x);
        }
        for t in (1..flat.horizon).rev() {
            for x in 0..n {
                let qs: Vec<f64> = (0..flat.num_actions)
                    .map(|a| {
                        flat.transition_row(x, a)
                            .iter()
                            .enumerate()
                            .map(|(x2, &p)| p * soft[t][x2])
                            .sum::<f64>()
                    })
                    .collect();
                let hi = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse =
                    alpha * qs.iter().map(|&q| ((q - hi) / alpha).exp()).sum::<f64>().ln();
                soft[t - 1][x] = flat.state_reward(t, x) + hi + lse;
            }
        }
        for t in 1..=flat.horizon {
            for x in 0..n {
                worst_soft = worst_soft
                    .max((engine.state.back_var[t - 1][0][x] - soft[t - 1][x]).abs());
            }
        }
    }
    if worst_soft > 1e-6 {
        fail(name, format!("(b) additive family deviates from soft value iteration by {worst_soft:e}"));
    }
    pass(
        name,
        format!("sum-product match {worst:.2e}; soft value iteration match {worst_soft:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: generator entropy targeting and determinism.
// ---------------------------------------------------------------------------
#[test]
fn criterion_10_generator_targeting() {
    let name = "criterion 10 (generator targeting)";
    let targets = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst: f64 = 0.0;
    for &target in &targets {
        for seed in 0..100u64 {
            let spec = SyntheticSpec { target_entropy: target, seed, ..Default::default() };
            let m = generate_synthetic(&spec).unwrap();
            let achieved = m.normalized_entropy();
            let err = (achieved - target).abs();
            worst = worst.max(err);
            if err > 0.02 {
                fail(name, format!("target {target} seed {seed}: achieved {achieved}"));
            }
            if seed < 5 {
                let again = generate_synthetic(&spec).unwrap();
                if serialize_mdp(&again) != serialize_mdp(&m) {
                    fail(name, format!("target {target} seed {seed}: not byte-deterministic"));
                }
            }
        }
    }
    pass(name, format!("500 generations within ±0.02 (worst {worst:.4})"));
}

// ---------------------------------------------------------------------------
// Criterion 11 (library half): document round-trip on the generator corpus.
// The CLI byte-determinism half lives in the CLI crate's acceptance test.
// ---------------------------------------------------------------------------
#[test]
fn criterion_11_round_trip_corpus() {
    let name = "criterion 11 (document round-trip)";
    for seed in 0..20u64 {
        let spec = SyntheticSpec {
            target_entropy: 0.1 + 0.04 * seed as f64,
            seed,
            ..Default::default()
        };
        let m = generate_synthetic(&spec).unwrap();
        let doc = serialize_mdp(&m);
        let parsed = parse_mdp(&doc).unwrap();
        if parsed != m {
            fail(name, format!("seed {seed}: parse(serialize) changed the model"));
        }
        if serialize_mdp(&parsed) != doc {
            fail(name, format!("seed {seed}: canonical form unstable"));
        }
    }
    pass(name, "20-document corpus round-trips bit-exactly".into());
}

// ---------------------------------------------------------------------------
// Cross-check: planning backward pass against brute force (supporting the
// ordering suite's trust in the oracles).
// ---------------------------------------------------------------------------
#[test]
fn oracle_brute_force_spot_check() {
    let mut rng = Rng::new(0xAA);
    for _ in 0..20 {
        let flat = random_flat(&mut rng, 3, 2, 3);
        for lambda in [0.0, 1.0] {
            let risk = RiskParams::new(lambda).unwrap();
            let a = plan_value_iteration(&flat, risk).value;
            let b = brute_force_policy_search(&flat, risk, 1 << 20).unwrap().value;
            assert!((a - b).abs() < 1e-9);
        }
        let (_, adv) = first_action_values(&flat, RiskParams::new(1.0).unwrap()).unwrap();
        assert!(adv.iter().all(|&x| x <= 1e-12));
        assert!(adv.iter().any(|&x| x.abs() < 1e-12));
        assert_eq!(argmax(&adv), adv.iter().position(|&x| x >= -1e-15).unwrap());
    }
}
