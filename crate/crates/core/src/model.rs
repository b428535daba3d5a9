//! Flat and factored finite-horizon MDP model.
//!
//! Conventions used everywhere in this crate:
//!
//! - A horizon of `T` means `T` time steps (states `x_1..x_T`) and `T-1`
//!   decision stages (actions `a_1..a_{T-1}`).
//! - Parent configurations are mixed-radix indices with the *first listed
//!   parent most significant*; within a CPT the action indexes faster than
//!   the parent configuration and the child state fastest of all:
//!   `cpt[(pcfg * num_actions + a) * child_card + child]`.
//! - Flat transition tensors use `transition[(x * num_actions + a) * n + x']`.
//! - State rewards are per-step tables over `t ∈ 1..=T`; transition rewards
//!   (flat MDPs only) over `t ∈ 1..=T-1`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Probability tolerance for validation.
pub const PROB_TOL: f64 = 1e-12;
/// Tolerance for cross-checks between independently computed quantities.
pub const CROSS_CHECK_TOL: f64 = 1e-9;

/// Mixed-radix encoder/decoder; digit 0 is most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateIndexer {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl StateIndexer {
    pub fn new(radices: &[usize]) -> Self {
        let mut strides = vec![1usize; radices.len()];
        for i in (0..radices.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * radices[i + 1];
        }
        let size = radices.iter().product::<usize>().max(1);
        StateIndexer {
            radices: radices.to_vec(),
            strides,
            size,
        }
    }

    pub fn size(&self) -> usize {
        if self.radices.is_empty() {
            1
        } else {
            self.size
        }
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.radices.len());
        digits
            .iter()
            .zip(&self.strides)
            .map(|(d, s)| d * s)
            .sum()
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for (i, r) in self.radices.iter().enumerate() {
            out[i] = (index / self.strides[i]) % r;
            index %= self.strides[i];
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        self.decode_into(index, &mut out);
        out
    }

    /// Digit at position `pos` of `index`.
    pub fn digit(&self, index: usize, pos: usize) -> usize {
        (index / self.strides[pos]) % self.radices[pos]
    }
}

/// Per-entity transition factor `P(child' | parents, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFactor {
    /// Entity whose next state this factor defines.
    pub entity: usize,
    /// Parent entity indices, first most significant in the configuration index.
    pub parents: Vec<usize>,
    /// Flat CPT in the crate-wide index convention.
    pub cpt: Vec<f64>,
}

/// Which time steps a reward factor is active at (`t ∈ 1..=T`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActiveSteps {
    All,
    Steps(BTreeSet<usize>),
}

impl ActiveSteps {
    pub fn is_active(&self, t: usize) -> bool {
        match self {
            ActiveSteps::All => true,
            ActiveSteps::Steps(s) => s.contains(&t),
        }
    }

    pub fn steps(&self, horizon: usize) -> Vec<usize> {
        match self {
            ActiveSteps::All => (1..=horizon).collect(),
            ActiveSteps::Steps(s) => s.iter().copied().collect(),
        }
    }
}

/// Additive reward subterm over a small set of entities.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFactor {
    pub parents: Vec<usize>,
    /// Value per parent configuration.
    pub table: Vec<f64>,
    pub active_steps: ActiveSteps,
}

/// Declarative factored MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredMdp {
    /// Number of time steps `T` (so `T-1` decision stages).
    pub horizon: usize,
    pub num_actions: usize,
    /// Entity cardinalities.
    pub entities: Vec<usize>,
    /// Per-entity initial distributions.
    pub initial: Vec<Vec<f64>>,
    /// Exactly one factor per entity, in entity order.
    pub dynamics: Vec<DynamicsFactor>,
    pub rewards: Vec<RewardFactor>,
}

/// Reward storage of a flat MDP; the variant records which form is populated.
#[derive(Debug, Clone, PartialEq)]
pub enum FlatReward {
    /// `tables[t-1][x]` for `t ∈ 1..=T`.
    PerState(Vec<Vec<f64>>),
    /// `tables[t-1][(x * num_actions + a) * n + x']` for `t ∈ 1..=T-1`.
    PerTransition(Vec<Vec<f64>>),
}

/// Enumerated-state MDP used by the exact oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial: Vec<f64>,
    /// `transition[(x * num_actions + a) * num_states + x']`.
    pub transition: Vec<f64>,
    pub reward: FlatReward,
}

impl FlatMdp {
    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let base = (x * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    /// State reward at step `t ∈ 1..=T`; 0 when rewards are transition-based.
    pub fn state_reward(&self, t: usize, x: usize) -> f64 {
        match &self.reward {
            FlatReward::PerState(tabs) => tabs[t - 1][x],
            FlatReward::PerTransition(_) => 0.0,
        }
    }

    /// Transition reward at stage `t ∈ 1..=T-1`; 0 when rewards are state-based.
    pub fn transition_reward(&self, t: usize, x: usize, a: usize, x2: usize) -> f64 {
        match &self.reward {
            FlatReward::PerState(_) => 0.0,
            FlatReward::PerTransition(tabs) => {
                tabs[t - 1][(x * self.num_actions + a) * self.num_states + x2]
            }
        }
    }
}

/// One invariant breach found by [`FactoredMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    HorizonZero,
    NoActions,
    EntityCardinality { entity: usize, cardinality: usize },
    InitialLength { entity: usize, got: usize, want: usize },
    InitialNegative { entity: usize, state: usize, value: f64 },
    InitialNotNormalized { entity: usize, deviation: f64 },
    DynamicsCount { got: usize, want: usize },
    DynamicsEntityMismatch { index: usize, entity: usize },
    ParentOutOfRange { factor: String, position: usize, parent: usize },
    DuplicateParent { factor: String, parent: usize },
    CptLength { entity: usize, got: usize, want: usize },
    CptNegative { entity: usize, pcfg: usize, action: usize, child: usize, value: f64 },
    CptRowNotNormalized { entity: usize, pcfg: usize, action: usize, deviation: f64 },
    RewardTableLength { reward: usize, got: usize, want: usize },
    ActiveStepOutOfRange { reward: usize, step: usize, horizon: usize },
    NoRewards,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            HorizonZero => write!(f, "horizon must be at least 1"),
            NoActions => write!(f, "num_actions must be at least 1"),
            EntityCardinality { entity, cardinality } => {
                write!(f, "entity {entity}: cardinality {cardinality} < 2")
            }
            InitialLength { entity, got, want } => {
                write!(f, "initial[{entity}]: length {got}, expected {want}")
            }
            InitialNegative { entity, state, value } => {
                write!(f, "initial[{entity}][{state}] = {value} is negative")
            }
            InitialNotNormalized { entity, deviation } => {
                write!(f, "initial[{entity}] sums off 1 by {deviation:e}")
            }
            DynamicsCount { got, want } => {
                write!(f, "expected {want} dynamics factors (one per entity), got {got}")
            }
            DynamicsEntityMismatch { index, entity } => {
                write!(f, "dynamics[{index}] is for entity {entity}, expected {index}")
            }
            ParentOutOfRange { factor, position, parent } => {
                write!(f, "{factor}: parent #{position} = {parent} out of range")
            }
            DuplicateParent { factor, parent } => {
                write!(f, "{factor}: duplicate parent {parent}")
            }
            CptLength { entity, got, want } => {
                write!(f, "dynamics[{entity}]: cpt length {got}, expected {want}")
            }
            CptNegative { entity, pcfg, action, child, value } => write!(
                f,
                "dynamics[{entity}] cpt[pcfg={pcfg}, a={action}, child={child}] = {value} is negative"
            ),
            CptRowNotNormalized { entity, pcfg, action, deviation } => write!(
                f,
                "dynamics[{entity}] row (pcfg={pcfg}, a={action}) sums off 1 by {deviation:e}"
            ),
            RewardTableLength { reward, got, want } => {
                write!(f, "rewards[{reward}]: table length {got}, expected {want}")
            }
            ActiveStepOutOfRange { reward, step, horizon } => {
                write!(f, "rewards[{reward}]: active step {step} outside 1..={horizon}")
            }
            NoRewards => write!(f, "model declares no reward factors"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("flattening needs {required} states, cap is {cap}")]
    TooManyFlatStates { required: usize, cap: usize },
    #[error("model is invalid: {0}")]
    Invalid(String),
    #[error("operation needs at least one reward factor")]
    NoRewards,
    #[error("flat MDP uses transition rewards; cannot express as a factored model")]
    TransitionRewards,
}

impl FactoredMdp {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn state_indexer(&self) -> StateIndexer {
        StateIndexer::new(&self.entities)
    }

    pub fn parent_indexer(&self, parents: &[usize]) -> StateIndexer {
        let radices: Vec<usize> = parents.iter().map(|&p| self.entities[p]).collect();
        StateIndexer::new(&radices)
    }

    /// Lists every invariant breach; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.horizon == 0 {
            v.push(Violation::HorizonZero);
        }
        if self.num_actions == 0 {
            v.push(Violation::NoActions);
        }
        for (i, &card) in self.entities.iter().enumerate() {
            if card < 2 {
                v.push(Violation::EntityCardinality { entity: i, cardinality: card });
            }
        }
        for (i, init) in self.initial.iter().enumerate() {
            let want = self.entities.get(i).copied().unwrap_or(0);
            if init.len() != want {
                v.push(Violation::InitialLength { entity: i, got: init.len(), want });
                continue;
            }
            let mut sum = 0.0;
            for (s, &p) in init.iter().enumerate() {
                if p < 0.0 {
                    v.push(Violation::InitialNegative { entity: i, state: s, value: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                v.push(Violation::InitialNotNormalized { entity: i, deviation: sum - 1.0 });
            }
        }
        if self.initial.len() != self.entities.len() {
            v.push(Violation::DynamicsCount {
                got: self.initial.len(),
                want: self.entities.len(),
            });
        }
        if self.dynamics.len() != self.entities.len() {
            v.push(Violation::DynamicsCount {
                got: self.dynamics.len(),
                want: self.entities.len(),
            });
        }
        for (i, d) in self.dynamics.iter().enumerate() {
            let label = format!("dynamics[{i}]");
            if d.entity != i {
                v.push(Violation::DynamicsEntityMismatch { index: i, entity: d.entity });
            }
            let mut seen = BTreeSet::new();
            let mut parents_ok = true;
            for (pos, &p) in d.parents.iter().enumerate() {
                if p >= self.entities.len() {
                    v.push(Violation::ParentOutOfRange {
                        factor: label.clone(),
                        position: pos,
                        parent: p,
                    });
                    parents_ok = false;
                }
                if !seen.insert(p) {
                    v.push(Violation::DuplicateParent { factor: label.clone(), parent: p });
                }
            }
            if !parents_ok || d.entity >= self.entities.len() {
                continue;
            }
            let pcfg = self.parent_indexer(&d.parents).size();
            let child = self.entities[d.entity];
            let want = pcfg * self.num_actions.max(1) * child;
            if d.cpt.len() != want {
                v.push(Violation::CptLength { entity: i, got: d.cpt.len(), want });
                continue;
            }
            for cfg in 0..pcfg {
                for a in 0..self.num_actions {
                    let base = (cfg * self.num_actions + a) * child;
                    let mut sum = 0.0;
                    for s in 0..child {
                        let p = d.cpt[base + s];
                        if p < 0.0 {
                            v.push(Violation::CptNegative {
                                entity: i,
                                pcfg: cfg,
                                action: a,
                                child: s,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > PROB_TOL {
                        v.push(Violation::CptRowNotNormalized {
                            entity: i,
                            pcfg: cfg,
                            action: a,
                            deviation: sum - 1.0,
                        });
                    }
                }
            }
        }
        for (r, rew) in self.rewards.iter().enumerate() {
            let label = format!("rewards[{r}]");
            let mut seen = BTreeSet::new();
            let mut parents_ok = true;
            for (pos, &p) in rew.parents.iter().enumerate() {
                if p >= self.entities.len() {
                    v.push(Violation::ParentOutOfRange {
                        factor: label.clone(),
                        position: pos,
                        parent: p,
                    });
                    parents_ok = false;
                }
                if !seen.insert(p) {
                    v.push(Violation::DuplicateParent { factor: label.clone(), parent: p });
                }
            }
            if parents_ok {
                let want = self.parent_indexer(&rew.parents).size();
                if rew.table.len() != want {
                    v.push(Violation::RewardTableLength { reward: r, got: rew.table.len(), want });
                }
            }
            if let ActiveSteps::Steps(steps) = &rew.active_steps {
                for &t in steps {
                    if t == 0 || t > self.horizon {
                        v.push(Violation::ActiveStepOutOfRange {
                            reward: r,
                            step: t,
                            horizon: self.horizon,
                        });
                    }
                }
            }
        }
        v
    }

    fn require_valid(&self) -> Result<(), ModelError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().take(4).map(|x| x.to_string()).collect();
            Err(ModelError::Invalid(msgs.join("; ")))
        }
    }

    /// Total reward at step `t` for a joint state given by entity values.
    pub fn reward_at(&self, t: usize, state: &[usize]) -> f64 {
        let mut total = 0.0;
        for rew in &self.rewards {
            if !rew.active_steps.is_active(t) {
                continue;
            }
            let idx = self.parent_indexer(&rew.parents);
            let digits: Vec<usize> = rew.parents.iter().map(|&p| state[p]).collect();
            total += rew.table[idx.encode(&digits)];
        }
        total
    }

    /// Enumerates the joint state space into a [`FlatMdp`].
    ///
    /// Refuses when the joint state count exceeds `cap`.
    pub fn flatten(&self, cap: usize) -> Result<FlatMdp, ModelError> {
        self.require_valid()?;
        let required: usize = self.entities.iter().product();
        if required > cap {
            return Err(ModelError::TooManyFlatStates { required, cap });
        }
        let n = required;
        let na = self.num_actions;
        let idx = self.state_indexer();

        let mut initial = vec![0.0; n];
        let mut digits = vec![0usize; self.num_entities()];
        for x in 0..n {
            idx.decode_into(x, &mut digits);
            let mut p = 1.0;
            for (i, &d) in digits.iter().enumerate() {
                p *= self.initial[i][d];
            }
            initial[x] = p;
        }

        let parent_indexers: Vec<StateIndexer> = self
            .dynamics
            .iter()
            .map(|d| self.parent_indexer(&d.parents))
            .collect();

        let mut transition = vec![0.0; n * na * n];
        let mut next_digits = vec![0usize; self.num_entities()];
        for x in 0..n {
            idx.decode_into(x, &mut digits);
            for a in 0..na {
                // Per-entity conditional rows for this (x, a).
                let rows: Vec<&[f64]> = self
                    .dynamics
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let pdigits: Vec<usize> =
                            d.parents.iter().map(|&p| digits[p]).collect();
                        let cfg = parent_indexers[i].encode(&pdigits);
                        let child = self.entities[i];
                        let base = (cfg * na + a) * child;
                        &d.cpt[base..base + child]
                    })
                    .collect();
                let base = (x * na + a) * n;
                for x2 in 0..n {
                    idx.decode_into(x2, &mut next_digits);
                    let mut p = 1.0;
                    for (i, &d) in next_digits.iter().enumerate() {
                        p *= rows[i][d];
                    }
                    transition[base + x2] = p;
                }
            }
        }

        let mut tables = Vec::with_capacity(self.horizon);
        for t in 1..=self.horizon {
            let mut table = vec![0.0; n];
            for (x, slot) in table.iter_mut().enumerate() {
                idx.decode_into(x, &mut digits);
                *slot = self.reward_at(t, &digits);
            }
            tables.push(table);
        }

        Ok(FlatMdp {
            num_states: n,
            num_actions: na,
            horizon: self.horizon,
            initial,
            transition,
            reward: FlatReward::PerState(tables),
        })
    }

    /// Wraps a flat MDP with state rewards as a single-entity factored MDP.
    pub fn from_flat(flat: &FlatMdp) -> Result<FactoredMdp, ModelError> {
        let tables = match &flat.reward {
            FlatReward::PerState(t) => t,
            FlatReward::PerTransition(_) => return Err(ModelError::TransitionRewards),
        };
        let mut rewards = Vec::new();
        for (ti, table) in tables.iter().enumerate() {
            if table.iter().any(|&v| v != 0.0) {
                rewards.push(RewardFactor {
                    parents: vec![0],
                    table: table.clone(),
                    active_steps: ActiveSteps::Steps(BTreeSet::from([ti + 1])),
                });
            }
        }
        if rewards.is_empty() {
            // Preserve a reward factor so downstream ops have one to look at.
            rewards.push(RewardFactor {
                parents: vec![0],
                table: vec![0.0; flat.num_states],
                active_steps: ActiveSteps::All,
            });
        }
        Ok(FactoredMdp {
            horizon: flat.horizon,
            num_actions: flat.num_actions,
            entities: vec![flat.num_states],
            initial: vec![flat.initial.clone()],
            dynamics: vec![DynamicsFactor {
                entity: 0,
                parents: vec![0],
                cpt: flat.transition.clone(),
            }],
            rewards,
        })
    }

    /// Average per-row transition entropy, scaled to `[0, 1]`.
    ///
    /// Numerator sums row entropies over all joint states and actions;
    /// because each conditional depends on the joint state only through its
    /// parents, the sum is taken per parent configuration weighted by the
    /// number of joint states mapping to it. The denominator uses each
    /// entity's own log-cardinality, which reduces to the uniform-cardinality
    /// formula when all entities share one cardinality.
    pub fn normalized_entropy(&self) -> f64 {
        let total_states: f64 = self.entities.iter().map(|&c| c as f64).product();
        let mut numerator = 0.0;
        for (i, d) in self.dynamics.iter().enumerate() {
            let pidx = self.parent_indexer(&d.parents);
            let child = self.entities[i];
            let parent_states: f64 = d.parents.iter().map(|&p| self.entities[p] as f64).product();
            let multiplicity = total_states / parent_states;
            for cfg in 0..pidx.size() {
                for a in 0..self.num_actions {
                    let base = (cfg * self.num_actions + a) * child;
                    numerator +=
                        crate::numeric::entropy(&d.cpt[base..base + child]) * multiplicity;
                }
            }
        }
        let denominator: f64 = self
            .entities
            .iter()
            .map(|&c| self.num_actions as f64 * total_states * (c as f64).ln())
            .sum();
        numerator / denominator
    }
}

/// Result of [`normalize_rewards`]: the rescaled model plus everything needed
/// to reconstruct the original tables.
#[derive(Debug, Clone)]
pub struct NormalizedRewards {
    pub mdp: FactoredMdp,
    /// Common divisor applied to every reward factor.
    pub scale: f64,
    /// Sum of the per-factor shifts (total per-step offset when all factors fire).
    pub offset: f64,
    /// Shift subtracted from factor `k` before scaling.
    pub per_factor_offsets: Vec<f64>,
    /// True when every factor was constant (zero total range).
    pub degenerate: bool,
}

/// Rescales reward factors so the per-step point-to-point variation bound is 1.
///
/// The bound used is the sum of per-factor ranges (the true joint range is
/// never enumerated). Each factor is shifted by its own minimum and divided by
/// the common scale: `original = normalized * scale + per_factor_offsets[k]`.
/// An all-constant reward keeps scale 1, is shifted to zero, and is flagged.
pub fn normalize_rewards(mdp: &FactoredMdp) -> Result<NormalizedRewards, ModelError> {
    if mdp.rewards.is_empty() {
        return Err(ModelError::NoRewards);
    }
    let mut ranges = Vec::with_capacity(mdp.rewards.len());
    let mut mins = Vec::with_capacity(mdp.rewards.len());
    for rew in &mdp.rewards {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &rew.table {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        ranges.push(hi - lo);
        mins.push(lo);
    }
    let total_range: f64 = ranges.iter().sum();
    let degenerate = total_range <= 0.0;
    let scale = if degenerate { 1.0 } else { total_range };

    let mut out = mdp.clone();
    let mut per_factor_offsets = Vec::with_capacity(mdp.rewards.len());
    for (k, rew) in out.rewards.iter_mut().enumerate() {
        // Degenerate factors zero-center exactly; otherwise shift to min 0.
        let shift = mins[k];
        per_factor_offsets.push(shift);
        for v in rew.table.iter_mut() {
            *v = (*v - shift) / scale;
        }
    }
    let offset = per_factor_offsets.iter().sum();
    Ok(NormalizedRewards {
        mdp: out,
        scale,
        offset,
        per_factor_offsets,
        degenerate,
    })
}
