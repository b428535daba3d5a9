//! Exact, exponential-cost oracles over [`FlatMdp`].
//!
//! Each inference type's quantity of interest is computed in the log domain:
//! sum-type aggregations use log-sum-exp, max-type use max-plus. The additive
//! limit (risk parameter zero) is a separate analytic code path, never a
//! small-number substitute. Tie-breaking is always toward the lowest index so
//! results are reproducible.

use thiserror::Error;

use crate::model::FlatMdp;
use crate::numeric::{argmax, log_sum_exp, LogSumAcc};
use crate::rng::Rng;

/// Risk parameter for the exponential utility; zero selects the additive limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    pub lambda: f64,
}

impl RiskParams {
    pub fn new(lambda: f64) -> Result<Self, OracleError> {
        if !(lambda >= 0.0) {
            return Err(OracleError::NegativeRisk(lambda));
        }
        Ok(RiskParams { lambda })
    }

    pub fn additive() -> Self {
        RiskParams { lambda: 0.0 }
    }

    pub fn is_additive(&self) -> bool {
        self.lambda == 0.0
    }
}

/// Per-time-step conditional action tables `π_t(a | x)`, `t ∈ 1..=T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonStationaryPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    /// `tables[t-1][x * num_actions + a]`.
    pub tables: Vec<Vec<f64>>,
}

impl NonStationaryPolicy {
    pub fn prob(&self, t: usize, x: usize, a: usize) -> f64 {
        self.tables[t - 1][x * self.num_actions + a]
    }

    /// Deterministic policy from per-stage action choices.
    pub fn deterministic(num_states: usize, num_actions: usize, choices: &[Vec<usize>]) -> Self {
        let tables = choices
            .iter()
            .map(|stage| {
                let mut t = vec![0.0; num_states * num_actions];
                for (x, &a) in stage.iter().enumerate() {
                    t[x * num_actions + a] = 1.0;
                }
                t
            })
            .collect();
        NonStationaryPolicy { num_states, num_actions, tables }
    }
}

/// Which object certifies the reported value.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Policy(NonStationaryPolicy),
    ActionSequence(Vec<usize>),
    Trajectory { states: Vec<usize>, actions: Vec<usize> },
    None,
}

/// Value of an inference type's quantity of interest plus its witness.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub witness: Witness,
    /// Backward value tables per time step (log domain for positive risk),
    /// when the computation produces them.
    pub backward: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("risk parameter must be nonnegative, got {0}")]
    NegativeRisk(f64),
    #[error("{0} is undefined in the additive limit; use a positive risk parameter")]
    AdditiveLimitUndefined(&'static str),
    #[error("enumeration needs {required} candidates, cap is {cap}")]
    CapExceeded { required: u128, cap: u128 },
    #[error("horizon must be at least 2 for this operation")]
    HorizonTooShort,
    #[error("policy shape does not match the MDP")]
    PolicyShape,
}

/// Backward tables for the planning recursion at positive risk.
///
/// `w[t-1][x] = log max_π E[exp(λ · reward-to-go) | x_t = x]`.
fn backward_exponential(flat: &FlatMdp, lambda: f64) -> Vec<Vec<f64>> {
    let n = flat.num_states;
    let na = flat.num_actions;
    let horizon = flat.horizon;
    let mut w = vec![vec![0.0; n]; horizon];
    for x in 0..n {
        w[horizon - 1][x] = lambda * flat.state_reward(horizon, x);
    }
    for t in (1..horizon).rev() {
        for x in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let row = flat.transition_row(x, a);
                let mut acc = LogSumAcc::new();
                for (x2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        acc.add(
                            p.ln() + lambda * flat.transition_reward(t, x, a, x2) + w[t][x2],
                        );
                    }
                }
                let q = acc.value();
                if q > best {
                    best = q;
                }
            }
            w[t - 1][x] = lambda * flat.state_reward(t, x) + best;
        }
    }
    w
}

/// Backward tables for the additive recursion.
fn backward_additive(flat: &FlatMdp) -> Vec<Vec<f64>> {
    let n = flat.num_states;
    let na = flat.num_actions;
    let horizon = flat.horizon;
    let mut v = vec![vec![0.0; n]; horizon];
    for x in 0..n {
        v[horizon - 1][x] = flat.state_reward(horizon, x);
    }
    for t in (1..horizon).rev() {
        for x in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let row = flat.transition_row(x, a);
                let mut q = 0.0;
                for (x2, &p) in row.iter().enumerate() {
                    q += p * (flat.transition_reward(t, x, a, x2) + v[t][x2]);
                }
                if q > best {
                    best = q;
                }
            }
            v[t - 1][x] = flat.state_reward(t, x) + best;
        }
    }
    v
}

fn greedy_policy_from_backward(flat: &FlatMdp, risk: RiskParams, w: &[Vec<f64>]) -> NonStationaryPolicy {
    let n = flat.num_states;
    let na = flat.num_actions;
    let mut choices = Vec::with_capacity(flat.horizon - 1);
    for t in 1..flat.horizon {
        let mut stage = vec![0usize; n];
        for (x, slot) in stage.iter_mut().enumerate() {
            let mut qs = vec![f64::NEG_INFINITY; na];
            for (a, q) in qs.iter_mut().enumerate() {
                let row = flat.transition_row(x, a);
                if risk.is_additive() {
                    let mut acc = 0.0;
                    for (x2, &p) in row.iter().enumerate() {
                        acc += p * (flat.transition_reward(t, x, a, x2) + w[t][x2]);
                    }
                    *q = acc;
                } else {
                    let mut acc = LogSumAcc::new();
                    for (x2, &p) in row.iter().enumerate() {
                        if p > 0.0 {
                            acc.add(
                                p.ln()
                                    + risk.lambda * flat.transition_reward(t, x, a, x2)
                                    + w[t][x2],
                            );
                        }
                    }
                    *q = acc.value();
                }
            }
            *slot = argmax(&qs);
        }
        choices.push(stage);
    }
    NonStationaryPolicy::deterministic(n, na, &choices)
}

/// Best exponential utility (or best expected additive reward at zero risk)
/// by a single backward pass; the witness is the greedy non-stationary policy.
pub fn plan_value_iteration(flat: &FlatMdp, risk: RiskParams) -> OracleResult {
    if risk.is_additive() {
        let v = backward_additive(flat);
        let value: f64 = flat
            .initial
            .iter()
            .zip(&v[0])
            .map(|(&p, &val)| p * val)
            .sum();
        let policy = greedy_policy_from_backward(flat, risk, &v);
        OracleResult { value, witness: Witness::Policy(policy), backward: Some(v) }
    } else {
        let w = backward_exponential(flat, risk.lambda);
        let mut acc = LogSumAcc::new();
        for (x, &p) in flat.initial.iter().enumerate() {
            if p > 0.0 {
                acc.add(p.ln() + w[0][x]);
            }
        }
        let value = acc.value() / risk.lambda;
        let policy = greedy_policy_from_backward(flat, risk, &w);
        OracleResult { value, witness: Witness::Policy(policy), backward: Some(w) }
    }
}

/// Forward pass summing over actions; the marginal quantity of interest.
///
/// `uniform_prior` folds in a `1/N_a` prior per decision stage. `pin_first`
/// optionally conditions the first action.
fn marginal_log_mass(
    flat: &FlatMdp,
    lambda: f64,
    uniform_prior: bool,
    pin_first: Option<usize>,
) -> f64 {
    let n = flat.num_states;
    let na = flat.num_actions;
    let log_prior = if uniform_prior { -(na as f64).ln() } else { 0.0 };
    let mut fwd: Vec<f64> = (0..n)
        .map(|x| {
            if flat.initial[x] > 0.0 {
                flat.initial[x].ln() + lambda * flat.state_reward(1, x)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    for t in 1..flat.horizon {
        let mut next = vec![f64::NEG_INFINITY; n];
        for (x2, slot) in next.iter_mut().enumerate() {
            let mut acc = LogSumAcc::new();
            for x in 0..n {
                if fwd[x] == f64::NEG_INFINITY {
                    continue;
                }
                for a in 0..na {
                    if t == 1 {
                        if let Some(first) = pin_first {
                            if a != first {
                                continue;
                            }
                        }
                    }
                    let p = flat.transition_row(x, a)[x2];
                    if p > 0.0 {
                        acc.add(
                            fwd[x]
                                + log_prior
                                + p.ln()
                                + lambda * flat.transition_reward(t, x, a, x2),
                        );
                    }
                }
            }
            *slot = acc.value() + lambda * flat.state_reward(t + 1, x2);
        }
        fwd = next;
    }
    log_sum_exp(&fwd)
}

/// Marginal inference on the unnormalized chain (no action prior).
pub fn marginal(flat: &FlatMdp, risk: RiskParams) -> Result<OracleResult, OracleError> {
    if risk.is_additive() {
        return Err(OracleError::AdditiveLimitUndefined("marginal inference"));
    }
    let value = marginal_log_mass(flat, risk.lambda, false, None) / risk.lambda;
    Ok(OracleResult { value, witness: Witness::None, backward: None })
}

/// Marginal inference with a uniform prior over action sequences.
pub fn marginal_uniform(flat: &FlatMdp, risk: RiskParams) -> Result<OracleResult, OracleError> {
    if risk.is_additive() {
        return Err(OracleError::AdditiveLimitUndefined("marginal inference"));
    }
    let value = marginal_log_mass(flat, risk.lambda, true, None) / risk.lambda;
    Ok(OracleResult { value, witness: Witness::None, backward: None })
}

/// Per-action marginal scores (first action pinned), plus the argmax.
///
/// This is the action-selection rule a marginal-inference agent uses: rank
/// first actions by the conditional log-mass.
pub fn marginal_action_scores(
    flat: &FlatMdp,
    risk: RiskParams,
    uniform_prior: bool,
) -> Result<(Vec<f64>, usize), OracleError> {
    if risk.is_additive() {
        return Err(OracleError::AdditiveLimitUndefined("marginal inference"));
    }
    if flat.horizon < 2 {
        return Err(OracleError::HorizonTooShort);
    }
    let scores: Vec<f64> = (0..flat.num_actions)
        .map(|a| marginal_log_mass(flat, risk.lambda, uniform_prior, Some(a)) / risk.lambda)
        .collect();
    let best = argmax(&scores);
    Ok((scores, best))
}

/// MAP inference by max-plus dynamic programming on the chain.
///
/// The witness is the lexicographically smallest maximizing trajectory
/// (interleaved as `x_1, a_1, x_2, ...`).
pub fn map_viterbi(flat: &FlatMdp, risk: RiskParams) -> Result<OracleResult, OracleError> {
    if risk.is_additive() {
        return Err(OracleError::AdditiveLimitUndefined("MAP inference"));
    }
    let lambda = risk.lambda;
    let n = flat.num_states;
    let na = flat.num_actions;
    let horizon = flat.horizon;

    // Backward max-plus suffix values.
    let mut suffix = vec![vec![0.0; n]; horizon];
    for x in 0..n {
        suffix[horizon - 1][x] = lambda * flat.state_reward(horizon, x);
    }
    for t in (1..horizon).rev() {
        for x in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let row = flat.transition_row(x, a);
                for (x2, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        let v = p.ln()
                            + lambda * flat.transition_reward(t, x, a, x2)
                            + suffix[t][x2];
                        if v > best {
                            best = v;
                        }
                    }
                }
            }
            suffix[t - 1][x] = lambda * flat.state_reward(t, x) + best;
        }
    }

    // Greedy forward reconstruction gives the lexicographically smallest witness.
    let head: Vec<f64> = (0..n)
        .map(|x| {
            if flat.initial[x] > 0.0 {
                flat.initial[x].ln() + suffix[0][x]
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let value = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut states = vec![argmax(&head)];
    let mut actions = Vec::with_capacity(horizon - 1);
    for t in 1..horizon {
        let x = *states.last().unwrap();
        let target = suffix[t - 1][x] - lambda * flat.state_reward(t, x);
        let mut chosen: Option<(usize, usize)> = None;
        'outer: for a in 0..na {
            let row = flat.transition_row(x, a);
            for (x2, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let v =
                        p.ln() + lambda * flat.transition_reward(t, x, a, x2) + suffix[t][x2];
                    // Tolerate rounding when matching the recorded optimum.
                    if v >= target - 1e-12 {
                        chosen = Some((a, x2));
                        break 'outer;
                    }
                }
            }
        }
        let (a, x2) = chosen.expect("suffix table must be attainable");
        actions.push(a);
        states.push(x2);
    }

    Ok(OracleResult {
        value: value / lambda,
        witness: Witness::Trajectory { states, actions },
        backward: Some(suffix),
    })
}

/// Marginal-MAP by exhaustive enumeration of action sequences.
pub fn mmap_enumerate(
    flat: &FlatMdp,
    risk: RiskParams,
    cap: u128,
) -> Result<OracleResult, OracleError> {
    if risk.is_additive() {
        return Err(OracleError::AdditiveLimitUndefined("marginal-MAP inference"));
    }
    let stages = flat.horizon - 1;
    let required = (flat.num_actions as u128)
        .checked_pow(stages as u32)
        .ok_or(OracleError::CapExceeded { required: u128::MAX, cap })?;
    if required > cap {
        return Err(OracleError::CapExceeded { required, cap });
    }
    let lambda = risk.lambda;
    let n = flat.num_states;

    let mut best_value = f64::NEG_INFINITY;
    let mut best_seq: Vec<usize> = vec![0; stages];
    let mut seq = vec![0usize; stages];
    loop {
        // Forward sum conditioned on the sequence.
        let mut fwd: Vec<f64> = (0..n)
            .map(|x| {
                if flat.initial[x] > 0.0 {
                    flat.initial[x].ln() + lambda * flat.state_reward(1, x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        for (t, &a) in seq.iter().enumerate() {
            let t = t + 1;
            let mut next = vec![f64::NEG_INFINITY; n];
            for (x2, slot) in next.iter_mut().enumerate() {
                let mut acc = LogSumAcc::new();
                for x in 0..n {
                    if fwd[x] == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = flat.transition_row(x, a)[x2];
                    if p > 0.0 {
                        acc.add(fwd[x] + p.ln() + lambda * flat.transition_reward(t, x, a, x2));
                    }
                }
                *slot = acc.value() + lambda * flat.state_reward(t + 1, x2);
            }
            fwd = next;
        }
        let value = log_sum_exp(&fwd);
        if value > best_value {
            best_value = value;
            best_seq.copy_from_slice(&seq);
        }
        // Lexicographic odometer; first maximizer wins ties.
        let mut pos = stages;
        loop {
            if pos == 0 {
                return Ok(OracleResult {
                    value: best_value / lambda,
                    witness: Witness::ActionSequence(best_seq),
                    backward: None,
                });
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < flat.num_actions {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// Exact utility of a fixed policy by forward recursion.
pub fn policy_evaluate(
    flat: &FlatMdp,
    policy: &NonStationaryPolicy,
    risk: RiskParams,
) -> Result<f64, OracleError> {
    if policy.num_states != flat.num_states
        || policy.num_actions != flat.num_actions
        || policy.tables.len() != flat.horizon - 1
    {
        return Err(OracleError::PolicyShape);
    }
    let n = flat.num_states;
    let na = flat.num_actions;
    if risk.is_additive() {
        // Occupancy forward pass accumulating expected reward.
        let mut occ = flat.initial.clone();
        let mut total = 0.0;
        for (x, &p) in occ.iter().enumerate() {
            total += p * flat.state_reward(1, x);
        }
        for t in 1..flat.horizon {
            let mut next = vec![0.0; n];
            for x in 0..n {
                if occ[x] == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let pa = policy.prob(t, x, a);
                    if pa == 0.0 {
                        continue;
                    }
                    let row = flat.transition_row(x, a);
                    for (x2, &p) in row.iter().enumerate() {
                        let mass = occ[x] * pa * p;
                        if mass > 0.0 {
                            next[x2] += mass;
                            total += mass * flat.transition_reward(t, x, a, x2);
                        }
                    }
                }
            }
            for (x2, &m) in next.iter().enumerate() {
                total += m * flat.state_reward(t + 1, x2);
            }
            occ = next;
        }
        Ok(total)
    } else {
        let lambda = risk.lambda;
        let mut fwd: Vec<f64> = (0..n)
            .map(|x| {
                if flat.initial[x] > 0.0 {
                    flat.initial[x].ln() + lambda * flat.state_reward(1, x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        for t in 1..flat.horizon {
            let mut next = vec![f64::NEG_INFINITY; n];
            for (x2, slot) in next.iter_mut().enumerate() {
                let mut acc = LogSumAcc::new();
                for x in 0..n {
                    if fwd[x] == f64::NEG_INFINITY {
                        continue;
                    }
                    for a in 0..na {
                        let pa = policy.prob(t, x, a);
                        if pa == 0.0 {
                            continue;
                        }
                        let p = flat.transition_row(x, a)[x2];
                        if p > 0.0 {
                            acc.add(
                                fwd[x]
                                    + pa.ln()
                                    + p.ln()
                                    + lambda * flat.transition_reward(t, x, a, x2),
                            );
                        }
                    }
                }
                *slot = acc.value() + lambda * flat.state_reward(t + 1, x2);
            }
            fwd = next;
        }
        Ok(log_sum_exp(&fwd) / lambda)
    }
}

/// Exact planning value conditioned on each first action, acting optimally after.
///
/// Also returns advantages `U(a) - max U` (all ≤ 0).
pub fn first_action_values(
    flat: &FlatMdp,
    risk: RiskParams,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    if flat.horizon < 2 {
        return Err(OracleError::HorizonTooShort);
    }
    let n = flat.num_states;
    let na = flat.num_actions;
    let mut values = vec![0.0; na];
    if risk.is_additive() {
        let v = backward_additive(flat);
        for (a, slot) in values.iter_mut().enumerate() {
            let mut total = 0.0;
            for x in 0..n {
                let p1 = flat.initial[x];
                if p1 == 0.0 {
                    continue;
                }
                let mut cont = 0.0;
                for (x2, &p) in flat.transition_row(x, a).iter().enumerate() {
                    cont += p * (flat.transition_reward(1, x, a, x2) + v[1][x2]);
                }
                total += p1 * (flat.state_reward(1, x) + cont);
            }
            *slot = total;
        }
    } else {
        let lambda = risk.lambda;
        let w = backward_exponential(flat, lambda);
        for (a, slot) in values.iter_mut().enumerate() {
            let mut acc = LogSumAcc::new();
            for x in 0..n {
                let p1 = flat.initial[x];
                if p1 == 0.0 {
                    continue;
                }
                let mut inner = LogSumAcc::new();
                for (x2, &p) in flat.transition_row(x, a).iter().enumerate() {
                    if p > 0.0 {
                        inner.add(p.ln() + lambda * flat.transition_reward(1, x, a, x2) + w[1][x2]);
                    }
                }
                acc.add(p1.ln() + lambda * flat.state_reward(1, x) + inner.value());
            }
            *slot = acc.value() / lambda;
        }
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let advantages = values.iter().map(|&u| u - best).collect();
    Ok((values, advantages))
}

/// Exhaustive maximum over all deterministic non-stationary policies.
///
/// Independent oracle for [`plan_value_iteration`]: evaluates every policy by
/// the forward recursion of [`policy_evaluate`].
pub fn brute_force_policy_search(
    flat: &FlatMdp,
    risk: RiskParams,
    cap: u128,
) -> Result<OracleResult, OracleError> {
    let slots = (flat.horizon - 1) * flat.num_states;
    let required = (flat.num_actions as u128)
        .checked_pow(slots as u32)
        .ok_or(OracleError::CapExceeded { required: u128::MAX, cap })?;
    if required > cap {
        return Err(OracleError::CapExceeded { required, cap });
    }
    let mut assign = vec![0usize; slots];
    let mut best_value = f64::NEG_INFINITY;
    let mut best_assign = assign.clone();
    loop {
        let choices: Vec<Vec<usize>> = (0..flat.horizon - 1)
            .map(|t| assign[t * flat.num_states..(t + 1) * flat.num_states].to_vec())
            .collect();
        let policy = NonStationaryPolicy::deterministic(flat.num_states, flat.num_actions, &choices);
        let value = policy_evaluate(flat, &policy, risk)?;
        if value > best_value {
            best_value = value;
            best_assign.copy_from_slice(&assign);
        }
        let mut pos = slots;
        loop {
            if pos == 0 {
                let choices: Vec<Vec<usize>> = (0..flat.horizon - 1)
                    .map(|t| best_assign[t * flat.num_states..(t + 1) * flat.num_states].to_vec())
                    .collect();
                let policy = NonStationaryPolicy::deterministic(
                    flat.num_states,
                    flat.num_actions,
                    &choices,
                );
                return Ok(OracleResult {
                    value: best_value,
                    witness: Witness::Policy(policy),
                    backward: None,
                });
            }
            pos -= 1;
            assign[pos] += 1;
            if assign[pos] < flat.num_actions {
                break;
            }
            assign[pos] = 0;
        }
    }
}

/// Monte Carlo estimate of a policy's utility; used as a simulation cross-check.
pub fn policy_monte_carlo(
    flat: &FlatMdp,
    policy: &NonStationaryPolicy,
    risk: RiskParams,
    rollouts: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = Rng::new(seed);
    let mut returns = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let mut x = crate::rng::sample_from_row(&flat.initial, rng.unit());
        let mut total = flat.state_reward(1, x);
        for t in 1..flat.horizon {
            let arow = &policy.tables[t - 1][x * flat.num_actions..(x + 1) * flat.num_actions];
            let a = crate::rng::sample_from_row(arow, rng.unit());
            let x2 = crate::rng::sample_from_row(flat.transition_row(x, a), rng.unit());
            total += flat.transition_reward(t, x, a, x2) + flat.state_reward(t + 1, x2);
            x = x2;
        }
        returns.push(total);
    }
    let nf = rollouts as f64;
    if risk.is_additive() {
        let mean = returns.iter().sum::<f64>() / nf;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (mean, (var / nf).sqrt())
    } else {
        // Utility = (1/λ) log mean exp(λ R); delta-method standard error.
        let lambda = risk.lambda;
        let scaled: Vec<f64> = returns.iter().map(|r| lambda * r).collect();
        let m = log_sum_exp(&scaled) - nf.ln();
        let mean_exp: f64 = scaled.iter().map(|&s| (s - m).exp()).sum::<f64>() / nf;
        let var_exp: f64 =
            scaled.iter().map(|&s| ((s - m).exp() - mean_exp).powi(2)).sum::<f64>() / (nf - 1.0);
        let se = (var_exp / nf).sqrt() / mean_exp / lambda;
        (m / lambda, se)
    }
}
