//! Built-in problem sources.
//!
//! - A synthetic factored-MDP generator whose transition stochasticity is
//!   dialed to a target normalized entropy by sharpening uniform random
//!   tables with a common exponent found by bisection.
//! - A fixed two-entity "reactivity" environment in which the agent controls,
//!   via a deterministic knob, how much it must react to the world to collect
//!   the final reward.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{ActiveSteps, DynamicsFactor, FactoredMdp, RewardFactor};
use crate::rng::Rng;

/// Parameters of the synthetic generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// Parents per entity; the pattern is a ring, entity `i` reading
    /// `{i, i+1, ..} mod N_e`.
    pub parents_per_entity: usize,
    /// Target normalized entropy, strictly inside (0, 1).
    pub target_entropy: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_entities: 3,
            num_actions: 2,
            horizon: 4,
            parents_per_entity: 2,
            target_entropy: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("target entropy {target} must lie strictly inside (0, 1)")]
    TargetOutOfRange { target: f64 },
    #[error("parents per entity ({parents}) must not exceed the entity count ({entities})")]
    TooManyParents { parents: usize, entities: usize },
    #[error(
        "target entropy {target} unreachable: sharpening exponent range achieves [{lo}, {hi}]"
    )]
    TargetUnreachable { target: f64, lo: f64, hi: f64 },
}

const EXPONENT_MIN: f64 = 1e-6;
const EXPONENT_MAX: f64 = 1e3;

/// Entropy-targeted random factored MDP.
///
/// Base tables are i.i.d. uniform; every conditional row is raised to a
/// single shared exponent and renormalized. Row entropy decreases
/// monotonically in the exponent, so a global bisection hits the target.
/// Byte-deterministic given the spec (including the seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FactoredMdp, DomainError> {
    if !(spec.target_entropy > 0.0 && spec.target_entropy < 1.0) {
        return Err(DomainError::TargetOutOfRange { target: spec.target_entropy });
    }
    if spec.parents_per_entity > spec.num_entities {
        return Err(DomainError::TooManyParents {
            parents: spec.parents_per_entity,
            entities: spec.num_entities,
        });
    }
    let ne = spec.num_entities;
    let na = spec.num_actions;
    let card = 2usize;

    let mut rng = Rng::new(spec.seed ^ 0x53594E5448u64);
    let mut parent_sets = Vec::with_capacity(ne);
    let mut base_tables = Vec::with_capacity(ne);
    for i in 0..ne {
        let parents: Vec<usize> = (0..spec.parents_per_entity.max(1))
            .map(|k| (i + k) % ne)
            .collect();
        let pcfg = card.pow(parents.len() as u32);
        let rows = pcfg * na;
        let mut base = Vec::with_capacity(rows * card);
        for _ in 0..rows * card {
            // Strictly positive so arbitrary sharpening stays well-defined.
            base.push(rng.unit().max(1e-12));
        }
        parent_sets.push(parents);
        base_tables.push(base);
    }
    // Known (seeded) start state: single-trajectory inference types pay no
    // spurious initial-state log-probability penalty.
    let initial: Vec<Vec<f64>> = (0..ne)
        .map(|_| {
            let mut row = vec![0.0; card];
            row[rng.below(card)] = 1.0;
            row
        })
        .collect();

    let build = |s: f64| -> FactoredMdp {
        let dynamics = (0..ne)
            .map(|i| {
                let base = &base_tables[i];
                let mut cpt = Vec::with_capacity(base.len());
                for row in base.chunks(card) {
                    let powed: Vec<f64> = row.iter().map(|&p| p.powf(s)).collect();
                    let z: f64 = powed.iter().sum();
                    cpt.extend(powed.iter().map(|&p| p / z));
                }
                DynamicsFactor { entity: i, parents: parent_sets[i].clone(), cpt }
            })
            .collect();
        FactoredMdp {
            horizon: spec.horizon,
            num_actions: na,
            entities: vec![card; ne],
            initial: initial.clone(),
            dynamics,
            rewards: vec![RewardFactor {
                parents: vec![0],
                table: vec![1.0, 0.0],
                active_steps: ActiveSteps::Steps(BTreeSet::from([spec.horizon])),
            }],
        }
    };

    let entropy_at = |s: f64| build(s).normalized_entropy();
    let hi_entropy = entropy_at(EXPONENT_MIN);
    let lo_entropy = entropy_at(EXPONENT_MAX);
    if spec.target_entropy > hi_entropy || spec.target_entropy < lo_entropy {
        return Err(DomainError::TargetUnreachable {
            target: spec.target_entropy,
            lo: lo_entropy,
            hi: hi_entropy,
        });
    }
    let (mut lo, mut hi) = (EXPONENT_MIN, EXPONENT_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if entropy_at(mid) > spec.target_entropy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(build(0.5 * (lo + hi)))
}

/// The fixed reactivity-avoidance environment.
///
/// Entity 0 is the agent location over `{0..5}` with goal state 0; entity 1
/// is a deterministic control knob over `{0..5}`. Eight actions: 0..=5 move
/// the location by the action value (mod 6) with probability `knob/5`,
/// slipping to the goal otherwise; 6 and 7 turn the knob down/up (clamped)
/// while the location jumps to a uniform non-goal state. Standing on the goal
/// also bounces the location to a uniform non-goal state. The only reward
/// arrives at the final step: 1.0 at the goal with the knob fully up, 0.33 at
/// the goal otherwise.
#[derive(Debug, Clone)]
pub struct ReactivityEnv {
    pub mdp: FactoredMdp,
}

pub const REACTIVITY_CARD: usize = 6;
pub const REACTIVITY_ACTIONS: usize = 8;
pub const REACTIVITY_HORIZON: usize = 7;

pub fn build_reactivity_env() -> ReactivityEnv {
    let card = REACTIVITY_CARD;
    let na = REACTIVITY_ACTIONS;
    let horizon = REACTIVITY_HORIZON;

    // Entity 0 (location): parents (location, knob).
    let pcfg0 = card * card;
    let mut cpt0 = vec![0.0; pcfg0 * na * card];
    for loc in 0..card {
        for knob in 0..card {
            let cfg = loc * card + knob;
            for a in 0..na {
                let base = (cfg * na + a) * card;
                if loc == 0 || a >= 6 {
                    for target in 1..card {
                        cpt0[base + target] = 1.0 / (card - 1) as f64;
                    }
                } else {
                    let controlled = (loc + a) % card;
                    let p_move = knob as f64 / 5.0;
                    cpt0[base + controlled] += p_move;
                    cpt0[base] += 1.0 - p_move;
                }
            }
        }
    }

    // Entity 1 (knob): deterministic self-dynamics.
    let mut cpt1 = vec![0.0; card * na * card];
    for knob in 0..card {
        for a in 0..na {
            let next = match a {
                6 if knob > 0 => knob - 1,
                7 if knob < 5 => knob + 1,
                _ => knob,
            };
            cpt1[(knob * na + a) * card + next] = 1.0;
        }
    }

    // Final-step reward over (location, knob).
    let mut table = vec![0.0; card * card];
    table[5] = 1.0; // location 0, knob 5
    for knob in 0..5 {
        table[knob] = 0.33; // location 0, knob below maximum
    }

    let mut initial_loc = vec![0.0; card];
    initial_loc[0] = 1.0;
    let mut initial_knob = vec![0.0; card];
    initial_knob[5] = 1.0;

    ReactivityEnv {
        mdp: FactoredMdp {
            horizon,
            num_actions: na,
            entities: vec![card, card],
            initial: vec![initial_loc, initial_knob],
            dynamics: vec![
                DynamicsFactor { entity: 0, parents: vec![0, 1], cpt: cpt0 },
                DynamicsFactor { entity: 1, parents: vec![1], cpt: cpt1 },
            ],
            rewards: vec![RewardFactor {
                parents: vec![0, 1],
                table,
                active_steps: ActiveSteps::Steps(BTreeSet::from([horizon])),
            }],
        },
    }
}

/// Best fixed action sequence of the reactivity environment by exhaustive
/// enumeration (expected additive reward, forward sums over the flat chain).
pub fn reactivity_best_conformant() -> (f64, Vec<usize>) {
    let env = build_reactivity_env();
    let flat = env.mdp.flatten(64).expect("36 states flatten");
    let stages = flat.horizon - 1;
    let n = flat.num_states;
    let mut best = f64::NEG_INFINITY;
    let mut best_seq = vec![0usize; stages];
    let mut seq = vec![0usize; stages];
    loop {
        let mut dist = flat.initial.clone();
        for (t, &a) in seq.iter().enumerate() {
            let mut next = vec![0.0; n];
            for (x, &m) in dist.iter().enumerate() {
                if m > 0.0 {
                    for (x2, &p) in flat.transition_row(x, a).iter().enumerate() {
                        next[x2] += m * p;
                    }
                }
            }
            let _ = t;
            dist = next;
        }
        let value: f64 = dist
            .iter()
            .enumerate()
            .map(|(x, &m)| m * flat.state_reward(flat.horizon, x))
            .sum();
        if value > best {
            best = value;
            best_seq.copy_from_slice(&seq);
        }
        let mut pos = stages;
        loop {
            if pos == 0 {
                return (best, best_seq);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdpio::serialize_mdp;
    use crate::oracle::{plan_value_iteration, RiskParams};

    #[test]
    fn near_uniform_target_gives_near_uniform_rows() {
        let spec = SyntheticSpec { target_entropy: 0.999, seed: 1, ..Default::default() };
        let m = generate_synthetic(&spec).unwrap();
        assert!((m.normalized_entropy() - 0.999).abs() < 0.005);
        for d in &m.dynamics {
            for row in d.cpt.chunks(2) {
                assert!((row[0] - 0.5).abs() < 0.2, "row {row:?} far from uniform");
            }
        }
    }

    #[test]
    fn near_deterministic_target_concentrates_rows() {
        let spec = SyntheticSpec { target_entropy: 0.02, seed: 2, ..Default::default() };
        let m = generate_synthetic(&spec).unwrap();
        assert!((m.normalized_entropy() - 0.02).abs() < 0.01);
        let mut peaked = 0;
        let mut total = 0;
        for d in &m.dynamics {
            for row in d.cpt.chunks(2) {
                total += 1;
                if row.iter().cloned().fold(0.0, f64::max) > 0.95 {
                    peaked += 1;
                }
            }
        }
        assert!(peaked * 10 >= total * 8, "{peaked}/{total} rows peaked");
    }

    #[test]
    fn mid_target_achieved_within_tolerance() {
        let spec = SyntheticSpec { target_entropy: 0.5, seed: 7, ..Default::default() };
        let m = generate_synthetic(&spec).unwrap();
        let h = m.normalized_entropy();
        assert!((0.48..=0.52).contains(&h), "achieved {h}");
        assert!(m.validate().is_empty());
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = SyntheticSpec { target_entropy: 0.3, seed: 99, ..Default::default() };
        let a = serialize_mdp(&generate_synthetic(&spec).unwrap());
        let b = serialize_mdp(&generate_synthetic(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let mut spec = SyntheticSpec::default();
        spec.target_entropy = 0.0;
        assert!(matches!(generate_synthetic(&spec), Err(DomainError::TargetOutOfRange { .. })));
        spec.target_entropy = 1.0;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn reactivity_env_is_valid_and_matches_the_construction() {
        let env = build_reactivity_env();
        assert!(env.mdp.validate().is_empty());
        let d0 = &env.mdp.dynamics[0];
        let na = REACTIVITY_ACTIONS;
        let card = REACTIVITY_CARD;

        // At the goal with the knob up, any action bounces uniformly off-goal.
        let cfg = 0 * card + 5;
        for a in 0..na {
            let base = (cfg * na + a) * card;
            assert_eq!(d0.cpt[base], 0.0);
            for s in 1..card {
                assert!((d0.cpt[base + s] - 0.2).abs() < 1e-15);
            }
        }
        // From (3, 5), action 2 moves to 5 with certainty.
        let cfg = 3 * card + 5;
        let base = (cfg * na + 2) * card;
        assert_eq!(d0.cpt[base + 5], 1.0);
        // From (3, 0), action 2 slips to the goal with certainty.
        let cfg = 3 * card + 0;
        let base = (cfg * na + 2) * card;
        assert_eq!(d0.cpt[base], 1.0);
    }

    #[test]
    fn reactivity_exact_planning_value_is_one() {
        let env = build_reactivity_env();
        let flat = env.mdp.flatten(64).unwrap();
        let r = plan_value_iteration(&flat, RiskParams::additive());
        assert!((r.value - 1.0).abs() < 1e-9, "value {}", r.value);
    }

    #[test]
    fn reactivity_best_conformant_value_is_a_third() {
        let (value, seq) = reactivity_best_conformant();
        assert!((value - 0.33).abs() < 1e-9, "value {value}");
        // The certain plan turns the knob fully down before the final move.
        assert_eq!(&seq[..5], &[6, 6, 6, 6, 6]);
    }
}
