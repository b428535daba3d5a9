//! Random desk-scale instance generators used by experiments and test suites.

use std::collections::BTreeSet;

use crate::model::{ActiveSteps, DynamicsFactor, FactoredMdp, FlatMdp, FlatReward, RewardFactor};
use crate::rng::Rng;

/// Random stochastic flat MDP with state rewards at every step.
pub fn random_flat(rng: &mut Rng, num_states: usize, num_actions: usize, horizon: usize) -> FlatMdp {
    let n = num_states;
    let mut transition = vec![0.0; n * num_actions * n];
    for x in 0..n {
        for a in 0..num_actions {
            let row = rng.simplex(n);
            let base = (x * num_actions + a) * n;
            transition[base..base + n].copy_from_slice(&row);
        }
    }
    let tables = (0..horizon).map(|_| (0..n).map(|_| rng.unit()).collect()).collect();
    FlatMdp {
        num_states: n,
        num_actions,
        horizon,
        initial: rng.simplex(n),
        transition,
        reward: FlatReward::PerState(tables),
    }
}

/// Random flat MDP whose probabilities all sit on a `1/grid` lattice.
///
/// Useful when an exact exogenous-noise factorization of the dynamics is
/// required (reconstruction error exactly zero at `levels = grid`).
pub fn random_flat_grid(
    rng: &mut Rng,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    grid: usize,
) -> FlatMdp {
    let n = num_states;
    let grid_row = |rng: &mut Rng| -> Vec<f64> {
        let mut counts = vec![0usize; n];
        for _ in 0..grid {
            counts[rng.below(n)] += 1;
        }
        counts.iter().map(|&c| c as f64 / grid as f64).collect()
    };
    let mut transition = vec![0.0; n * num_actions * n];
    for x in 0..n {
        for a in 0..num_actions {
            let base = (x * num_actions + a) * n;
            transition[base..base + n].copy_from_slice(&grid_row(rng));
        }
    }
    let tables = (0..horizon).map(|_| (0..n).map(|_| rng.unit()).collect()).collect();
    FlatMdp {
        num_states: n,
        num_actions,
        horizon,
        initial: grid_row(rng),
        transition,
        reward: FlatReward::PerState(tables),
    }
}

/// Random flat MDP with deterministic dynamics and a known first state.
pub fn random_deterministic_flat(
    rng: &mut Rng,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
) -> FlatMdp {
    let n = num_states;
    let mut transition = vec![0.0; n * num_actions * n];
    for x in 0..n {
        for a in 0..num_actions {
            let target = rng.below(n);
            transition[(x * num_actions + a) * n + target] = 1.0;
        }
    }
    let mut initial = vec![0.0; n];
    initial[rng.below(n)] = 1.0;
    let tables = (0..horizon).map(|_| (0..n).map(|_| rng.unit()).collect()).collect();
    FlatMdp {
        num_states: n,
        num_actions,
        horizon,
        initial,
        transition,
        reward: FlatReward::PerState(tables),
    }
}

/// Random binary factored MDP on a parent ring (entity i depends on i and i+1).
///
/// Rewards: one factor on entity 0 active at the final step, values in [0, 1].
pub fn random_factored_binary(
    rng: &mut Rng,
    num_entities: usize,
    num_actions: usize,
    horizon: usize,
) -> FactoredMdp {
    let mut dynamics = Vec::with_capacity(num_entities);
    for i in 0..num_entities {
        let parents = if num_entities == 1 {
            vec![0]
        } else {
            vec![i, (i + 1) % num_entities]
        };
        let pcfg = 1usize << parents.len();
        let mut cpt = Vec::with_capacity(pcfg * num_actions * 2);
        for _ in 0..pcfg * num_actions {
            let row = rng.simplex(2);
            cpt.extend_from_slice(&row);
        }
        dynamics.push(DynamicsFactor { entity: i, parents, cpt });
    }
    let initial = (0..num_entities).map(|_| rng.simplex(2)).collect();
    FactoredMdp {
        horizon,
        num_actions,
        entities: vec![2; num_entities],
        initial,
        dynamics,
        rewards: vec![RewardFactor {
            parents: vec![0],
            table: vec![rng.unit(), rng.unit()],
            active_steps: ActiveSteps::Steps(BTreeSet::from([horizon])),
        }],
    }
}

/// Random non-stationary policy for a flat MDP.
pub fn random_policy(rng: &mut Rng, flat: &FlatMdp) -> crate::oracle::NonStationaryPolicy {
    let tables = (0..flat.horizon.saturating_sub(1))
        .map(|_| {
            let mut table = Vec::with_capacity(flat.num_states * flat.num_actions);
            for _ in 0..flat.num_states {
                table.extend_from_slice(&rng.simplex(flat.num_actions));
            }
            table
        })
        .collect();
    crate::oracle::NonStationaryPolicy {
        num_states: flat.num_states,
        num_actions: flat.num_actions,
        tables,
    }
}
