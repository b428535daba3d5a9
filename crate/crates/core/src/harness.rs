//! Episodic simulation with replanning, common random numbers, truncated
//! lookahead, comparison sweeps, and metric aggregation.
//!
//! Environment transitions are sampled from counter-based streams keyed by
//! (master seed, episode, step, entity), so two planners compared under the
//! same seed see identical draws whenever they reach the same state — the
//! draws do not depend on call order or on anything a planner does.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::domains::{generate_synthetic, SyntheticSpec};
use crate::mdpio::{MethodId, ResultRow};
use crate::model::{ActiveSteps, FactoredMdp, ModelError};
use crate::numeric::argmax;
use crate::oracle::{
    self, first_action_values, map_viterbi, mmap_enumerate, plan_value_iteration, RiskParams,
    Witness,
};
use crate::rng::{counter_unit, sample_from_row, Rng};
use crate::vbp::{self, VbpConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("oracle error: {0}")]
    Oracle(#[from] oracle::OracleError),
    #[error("message passing error: {0}")]
    Vbp(#[from] vbp::VbpError),
    #[error("polytope error: {0}")]
    Polytope(#[from] crate::polytope::PolytopeError),
    #[error("domain error: {0}")]
    Domain(#[from] crate::domains::DomainError),
    #[error("planner `{0}` failed: {1}")]
    Planner(String, String),
}

/// What a planner sees at one decision point.
pub struct DecisionContext<'a> {
    /// Current joint state (entity values).
    pub state: &'a [usize],
    /// Remaining-horizon view: the current state pinned as the initial
    /// distribution, horizon truncated to `min(lookahead, T - t + 1)`, and
    /// reward steps remapped to view time.
    pub view: &'a FactoredMdp,
    /// Absolute time step `t ∈ 1..=T-1`.
    pub abs_step: usize,
    pub episode: usize,
}

/// A replanning agent: one decision per step from the remaining-horizon view.
pub trait Planner {
    fn name(&self) -> &str;
    fn begin_episode(&mut self, _episode: usize) {}
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String>;
}

/// Episode protocol configuration.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub episodes: usize,
    /// Lookahead horizons to try; the best average is kept.
    pub lookaheads: Vec<usize>,
    pub master_seed: u64,
    /// Optional wall-clock budget per decision; exceeding it falls back to
    /// action 0 and flags the episode.
    pub step_budget: Option<Duration>,
    /// Record (step, state, action, reward) rows per episode.
    pub log_trajectories: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            episodes: 30,
            lookaheads: vec![4, 9],
            master_seed: 0,
            step_budget: None,
            log_trajectories: false,
        }
    }
}

/// One logged step of one episode.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub step: usize,
    pub state: Vec<usize>,
    pub action: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub episode_rewards: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    /// Episodes where the planner failed or blew its budget.
    pub flagged_episodes: Vec<usize>,
    pub lookahead: usize,
    pub trajectories: Vec<TrajectoryRow>,
}

/// Remaining-horizon view of the environment from a known state.
///
/// Reward factors keep only the active steps that land inside the window;
/// factors with none are dropped. Stationary rewards stay stationary.
pub fn truncated_view(
    env: &FactoredMdp,
    state: &[usize],
    abs_step: usize,
    lookahead: usize,
) -> FactoredMdp {
    let remaining = env.horizon - abs_step + 1;
    let horizon = lookahead.min(remaining).max(1);
    let initial = state
        .iter()
        .zip(&env.entities)
        .map(|(&v, &card)| {
            let mut row = vec![0.0; card];
            row[v] = 1.0;
            row
        })
        .collect();
    let mut rewards = Vec::new();
    for rf in &env.rewards {
        let remapped = match &rf.active_steps {
            ActiveSteps::All => Some(ActiveSteps::All),
            ActiveSteps::Steps(steps) => {
                let view_steps: std::collections::BTreeSet<usize> = steps
                    .iter()
                    .filter_map(|&abs| {
                        if abs >= abs_step && abs < abs_step + horizon {
                            Some(abs - abs_step + 1)
                        } else {
                            None
                        }
                    })
                    .collect();
                if view_steps.is_empty() {
                    None
                } else {
                    Some(ActiveSteps::Steps(view_steps))
                }
            }
        };
        if let Some(active_steps) = remapped {
            rewards.push(crate::model::RewardFactor {
                parents: rf.parents.clone(),
                table: rf.table.clone(),
                active_steps,
            });
        }
    }
    if rewards.is_empty() {
        // Keep the model well-formed for planners that require a reward.
        rewards.push(crate::model::RewardFactor {
            parents: vec![0],
            table: vec![0.0; env.entities[0]],
            active_steps: ActiveSteps::All,
        });
    }
    FactoredMdp {
        horizon,
        num_actions: env.num_actions,
        entities: env.entities.clone(),
        initial,
        dynamics: env.dynamics.clone(),
        rewards,
    }
}

fn sample_initial_state(env: &FactoredMdp, seed: u64, episode: usize) -> Vec<usize> {
    (0..env.num_entities())
        .map(|j| {
            let u = counter_unit(seed, episode as u64, 0, j as u64);
            sample_from_row(&env.initial[j], u)
        })
        .collect()
}

fn step_env(env: &FactoredMdp, state: &[usize], action: usize, seed: u64, episode: usize, t: usize) -> Vec<usize> {
    let mut next = vec![0usize; env.num_entities()];
    for (i, d) in env.dynamics.iter().enumerate() {
        let pidx = env.parent_indexer(&d.parents);
        let digits: Vec<usize> = d.parents.iter().map(|&p| state[p]).collect();
        let cfg = pidx.encode(&digits);
        let card = env.entities[i];
        let base = (cfg * env.num_actions + action) * card;
        let u = counter_unit(seed, episode as u64, t as u64, i as u64);
        next[i] = sample_from_row(&d.cpt[base..base + card], u);
    }
    next
}

/// Runs episodes with a fixed lookahead.
pub fn simulate_with_lookahead(
    env: &FactoredMdp,
    planner: &mut dyn Planner,
    config: &EpisodeConfig,
    lookahead: usize,
) -> SimulationResult {
    let horizon = env.horizon;
    let mut episode_rewards = Vec::with_capacity(config.episodes);
    let mut flagged = Vec::new();
    let mut trajectories = Vec::new();
    for ep in 0..config.episodes {
        planner.begin_episode(ep);
        let mut state = sample_initial_state(env, config.master_seed, ep);
        let mut total = 0.0;
        let mut episode_flagged = false;
        for t in 1..=horizon {
            let reward = env.reward_at(t, &state);
            total += reward;
            let action = if t < horizon {
                let view = truncated_view(env, &state, t, lookahead);
                let ctx = DecisionContext { state: &state, view: &view, abs_step: t, episode: ep };
                let started = Instant::now();
                let decided = planner.decide(&ctx);
                let a = match decided {
                    Ok(a) if a < env.num_actions => a,
                    _ => {
                        episode_flagged = true;
                        0
                    }
                };
                let a = match config.step_budget {
                    Some(budget) if started.elapsed() > budget => {
                        episode_flagged = true;
                        0
                    }
                    _ => a,
                };
                Some(a)
            } else {
                None
            };
            if config.log_trajectories {
                trajectories.push(TrajectoryRow {
                    episode: ep,
                    step: t,
                    state: state.clone(),
                    action,
                    reward,
                });
            }
            if let Some(a) = action {
                state = step_env(env, &state, a, config.master_seed, ep, t);
            }
        }
        if episode_flagged {
            flagged.push(ep);
        }
        episode_rewards.push(total);
    }
    let n = episode_rewards.len() as f64;
    let mean = episode_rewards.iter().sum::<f64>() / n;
    let sem = if episode_rewards.len() > 1 {
        let var = episode_rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    SimulationResult {
        episode_rewards,
        mean,
        sem,
        flagged_episodes: flagged,
        lookahead,
        trajectories,
    }
}

/// Runs every configured lookahead and keeps the best average.
pub fn simulate(
    env: &FactoredMdp,
    planner: &mut dyn Planner,
    config: &EpisodeConfig,
) -> SimulationResult {
    let mut best: Option<SimulationResult> = None;
    for &lookahead in &config.lookaheads {
        let result = simulate_with_lookahead(env, planner, config, lookahead);
        let better = match &best {
            None => true,
            Some(b) => result.mean > b.mean,
        };
        if better {
            best = Some(result);
        }
    }
    best.expect("at least one lookahead must be configured")
}

// ---------------------------------------------------------------------------
// Planner adapters.
// ---------------------------------------------------------------------------

/// Exact replanning agent: flattens the view and acts greedily by the exact
/// first-action values. Decisions are memoized per (absolute step, state).
pub struct ExactPlanningAdapter {
    pub risk: RiskParams,
    pub flat_cap: usize,
    memo: HashMap<(usize, usize, Vec<usize>), usize>,
}

impl ExactPlanningAdapter {
    pub fn new(risk: RiskParams, flat_cap: usize) -> Self {
        ExactPlanningAdapter { risk, flat_cap, memo: HashMap::new() }
    }
}

impl Planner for ExactPlanningAdapter {
    fn name(&self) -> &str {
        "planning-vi"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String> {
        let key = (ctx.abs_step, ctx.view.horizon, ctx.state.to_vec());
        if let Some(&a) = self.memo.get(&key) {
            return Ok(a);
        }
        let flat = ctx.view.flatten(self.flat_cap).map_err(|e| e.to_string())?;
        let (_, advantages) = first_action_values(&flat, self.risk).map_err(|e| e.to_string())?;
        let a = argmax(&advantages);
        self.memo.insert(key, a);
        Ok(a)
    }
}

/// Exact single-trajectory (MAP) replanning agent.
pub struct MapAdapter {
    pub risk: RiskParams,
    pub flat_cap: usize,
    memo: HashMap<(usize, usize, Vec<usize>), usize>,
}

impl MapAdapter {
    pub fn new(risk: RiskParams, flat_cap: usize) -> Self {
        MapAdapter { risk, flat_cap, memo: HashMap::new() }
    }
}

impl Planner for MapAdapter {
    fn name(&self) -> &str {
        "map"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String> {
        let key = (ctx.abs_step, ctx.view.horizon, ctx.state.to_vec());
        if let Some(&a) = self.memo.get(&key) {
            return Ok(a);
        }
        let flat = ctx.view.flatten(self.flat_cap).map_err(|e| e.to_string())?;
        if flat.horizon < 2 {
            return Ok(0);
        }
        let result = map_viterbi(&flat, self.risk).map_err(|e| e.to_string())?;
        let a = match result.witness {
            Witness::Trajectory { actions, .. } => actions[0],
            _ => 0,
        };
        self.memo.insert(key, a);
        Ok(a)
    }
}

/// Exhaustive conformant agent: the best fixed action sequence over the view
/// by expected additive reward, replanned each step. Desk-scale stand-in for
/// gradient-based conformant planners.
pub struct ConformantAdapter {
    pub flat_cap: usize,
    pub sequence_cap: u128,
    memo: HashMap<(usize, usize, Vec<usize>), usize>,
}

impl ConformantAdapter {
    pub fn new(flat_cap: usize, sequence_cap: u128) -> Self {
        ConformantAdapter { flat_cap, sequence_cap, memo: HashMap::new() }
    }
}

/// Best fixed action sequence by expected additive reward, found by DFS over
/// action prefixes with shared forward state distributions. Ties go to the
/// lexicographically smallest sequence.
pub fn conformant_exhaustive(
    flat: &crate::model::FlatMdp,
    cap: u128,
) -> Result<(f64, Vec<usize>), String> {
    let stages = flat.horizon - 1;
    let required = (flat.num_actions as u128)
        .checked_pow(stages as u32)
        .ok_or("sequence space overflow")?;
    if required > cap {
        return Err(format!("{required} sequences exceed the cap {cap}"));
    }
    struct Dfs<'a> {
        flat: &'a crate::model::FlatMdp,
        prefix: Vec<usize>,
        best: f64,
        best_seq: Vec<usize>,
    }
    impl Dfs<'_> {
        fn go(&mut self, stage: usize, dist: &[f64], acc: f64) {
            if stage == self.flat.horizon {
                if acc > self.best {
                    self.best = acc;
                    self.best_seq = self.prefix.clone();
                }
                return;
            }
            for a in 0..self.flat.num_actions {
                let mut next = vec![0.0; self.flat.num_states];
                for (x, &m) in dist.iter().enumerate() {
                    if m > 0.0 {
                        for (x2, &p) in self.flat.transition_row(x, a).iter().enumerate() {
                            next[x2] += m * p;
                        }
                    }
                }
                let mut gained = 0.0;
                for (x2, &m) in next.iter().enumerate() {
                    gained += m * self.flat.state_reward(stage + 1, x2);
                }
                self.prefix.push(a);
                self.go(stage + 1, &next, acc + gained);
                self.prefix.pop();
            }
        }
    }
    let mut acc0 = 0.0;
    for (x, &m) in flat.initial.iter().enumerate() {
        acc0 += m * flat.state_reward(1, x);
    }
    let mut dfs = Dfs {
        flat,
        prefix: Vec::with_capacity(stages),
        best: f64::NEG_INFINITY,
        best_seq: vec![0; stages],
    };
    dfs.go(1, &flat.initial.to_vec(), acc0);
    Ok((dfs.best, dfs.best_seq))
}

impl Planner for ConformantAdapter {
    fn name(&self) -> &str {
        "conformant-exhaustive"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String> {
        let key = (ctx.abs_step, ctx.view.horizon, ctx.state.to_vec());
        if let Some(&a) = self.memo.get(&key) {
            return Ok(a);
        }
        let flat = ctx.view.flatten(self.flat_cap).map_err(|e| e.to_string())?;
        if flat.horizon < 2 {
            return Ok(0);
        }
        let (_, seq) = conformant_exhaustive(&flat, self.sequence_cap)?;
        let a = seq[0];
        self.memo.insert(key, a);
        Ok(a)
    }
}

/// Message-passing replanning agent.
pub struct VbpAdapter {
    pub config: VbpConfig,
    memo: HashMap<(usize, usize, Vec<usize>), usize>,
}

impl VbpAdapter {
    pub fn new(config: VbpConfig) -> Self {
        VbpAdapter { config, memo: HashMap::new() }
    }
}

impl Planner for VbpAdapter {
    fn name(&self) -> &str {
        "vbp"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String> {
        let key = (ctx.abs_step, ctx.view.horizon, ctx.state.to_vec());
        if let Some(&a) = self.memo.get(&key) {
            return Ok(a);
        }
        if ctx.view.horizon < 2 {
            return Ok(0);
        }
        let result = vbp::sweep(ctx.view, self.config).map_err(|e| e.to_string())?;
        let a = vbp::extract_action(&result, 1);
        self.memo.insert(key, a);
        Ok(a)
    }
}

/// Uniform-random baseline on its own deterministic stream.
pub struct RandomAdapter {
    pub seed: u64,
    episode: usize,
}

impl RandomAdapter {
    pub fn new(seed: u64) -> Self {
        RandomAdapter { seed, episode: 0 }
    }
}

impl Planner for RandomAdapter {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, episode: usize) {
        self.episode = episode;
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<usize, String> {
        let u = counter_unit(self.seed ^ 0x52414E44, self.episode as u64, ctx.abs_step as u64, 0);
        Ok((u * ctx.view.num_actions as f64) as usize % ctx.view.num_actions)
    }
}

// ---------------------------------------------------------------------------
// Comparison sweep.
// ---------------------------------------------------------------------------

/// Sweep over entropy buckets comparing methods on utility estimation and
/// first-action quality.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub entropy_targets: Vec<f64>,
    pub instances_per_bucket: usize,
    pub methods: Vec<MethodId>,
    pub lambda: f64,
    pub master_seed: u64,
    pub synthetic: SyntheticSpec,
    pub flat_cap: usize,
    pub mmap_cap: u128,
    pub vbp: VbpConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            entropy_targets: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            instances_per_bucket: 300,
            methods: vec![MethodId::PlanningVi, MethodId::Map, MethodId::Mmap, MethodId::Vbp],
            lambda: 1.0,
            master_seed: 0,
            synthetic: SyntheticSpec::default(),
            flat_cap: 4096,
            mmap_cap: 1 << 24,
            vbp: VbpConfig { lambda: 1.0, max_outer_iters: 400, ..Default::default() },
        }
    }
}

/// Per-instance failure note from a sweep.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub instance: String,
    pub message: String,
}

fn method_row(
    method: MethodId,
    cfg: &SweepConfig,
    mdp: &FactoredMdp,
    flat: &crate::model::FlatMdp,
    exact: f64,
    first_action_adv: &[f64],
    instance: &str,
    h: f64,
    timings: bool,
) -> Result<ResultRow, HarnessError> {
    let risk = RiskParams::new(cfg.lambda).map_err(HarnessError::Oracle)?;
    let start = Instant::now();
    let (value, action, iterations, converged, exact_ref, lambda) = match method {
        MethodId::PlanningVi => {
            let r = plan_value_iteration(flat, risk);
            let (values, _) = first_action_values(flat, risk)?;
            (r.value, Some(argmax(&values)), 1, true, Some(exact), cfg.lambda)
        }
        MethodId::Map => {
            let r = map_viterbi(flat, risk)?;
            let action = match r.witness {
                Witness::Trajectory { actions, .. } => Some(actions[0]),
                _ => None,
            };
            (r.value, action, 1, true, Some(exact), cfg.lambda)
        }
        MethodId::Mmap => {
            let r = mmap_enumerate(flat, risk, cfg.mmap_cap)?;
            let action = match r.witness {
                Witness::ActionSequence(seq) => Some(seq[0]),
                _ => None,
            };
            (r.value, action, 1, true, Some(exact), cfg.lambda)
        }
        MethodId::Marginal => {
            let r = oracle::marginal(flat, risk)?;
            let (_, best) = oracle::marginal_action_scores(flat, risk, false)?;
            (r.value, Some(best), 1, true, Some(exact), cfg.lambda)
        }
        MethodId::MarginalU => {
            let r = oracle::marginal_uniform(flat, risk)?;
            let (_, best) = oracle::marginal_action_scores(flat, risk, true)?;
            (r.value, Some(best), 1, true, Some(exact), cfg.lambda)
        }
        MethodId::Vbp => {
            let mut vcfg = cfg.vbp;
            vcfg.lambda = cfg.lambda;
            let r = vbp::sweep(mdp, vcfg)?;
            (
                r.bound,
                Some(vbp::extract_action(&r, 1)),
                r.outer_iters as u64,
                r.converged,
                Some(exact),
                cfg.lambda,
            )
        }
        MethodId::ViLp => {
            let (action, objectives) =
                crate::polytope::lp_action_select(mdp, Default::default())?;
            let additive = plan_value_iteration(flat, RiskParams::additive()).value;
            (
                objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Some(action),
                1,
                true,
                Some(additive),
                0.0,
            )
        }
        MethodId::ViCvx => {
            let r = crate::polytope::solve_concave(mdp, cfg.lambda, Default::default())?;
            (r.upper_bound(), None, r.iterations as u64, r.converged, Some(exact), cfg.lambda)
        }
        other => {
            return Err(HarnessError::Planner(
                other.to_string(),
                "method not available in comparison sweeps".into(),
            ))
        }
    };
    let advantage = action.map(|a| first_action_adv[a]);
    Ok(ResultRow {
        method,
        lambda,
        instance: instance.to_string(),
        h_mdp: h,
        value,
        exact_value: exact_ref,
        first_action: action,
        advantage,
        iterations,
        converged,
        wall_time_ms: if timings {
            Some(start.elapsed().as_secs_f64() * 1e3)
        } else {
            None
        },
    })
}

/// Deterministic per-instance generator seed.
pub fn instance_seed(cfg: &SweepConfig, bucket_index: usize, instance_index: usize) -> u64 {
    let seed_rng = Rng::new(cfg.master_seed ^ 0x5357454550);
    seed_rng
        .fork((bucket_index * cfg.instances_per_bucket + instance_index) as u64)
        .next_u64()
}

/// Runs the sweep; failures are recorded and the sweep continues.
pub fn compare_sweep(cfg: &SweepConfig) -> (Vec<ResultRow>, Vec<SweepFailure>) {
    compare_sweep_with(cfg, false)
}

pub fn compare_sweep_with(cfg: &SweepConfig, timings: bool) -> (Vec<ResultRow>, Vec<SweepFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (bi, &target) in cfg.entropy_targets.iter().enumerate() {
        for k in 0..cfg.instances_per_bucket {
            let seed = instance_seed(cfg, bi, k);
            let instance = format!("h{target}-i{k:04}");
            match sweep_instance(cfg, target, seed, &instance, timings) {
                Ok(mut instance_rows) => rows.append(&mut instance_rows),
                Err(e) => failures.push(SweepFailure { instance, message: e.to_string() }),
            }
        }
    }
    (rows, failures)
}

/// One sweep instance: generate, solve with every method, emit rows.
pub fn sweep_instance(
    cfg: &SweepConfig,
    target: f64,
    seed: u64,
    instance: &str,
    timings: bool,
) -> Result<Vec<ResultRow>, HarnessError> {
    let spec = SyntheticSpec { target_entropy: target, seed, ..cfg.synthetic.clone() };
    let mdp = generate_synthetic(&spec)?;
    let h = mdp.normalized_entropy();
    let flat = mdp.flatten(cfg.flat_cap)?;
    let risk = RiskParams::new(cfg.lambda)?;
    let exact = plan_value_iteration(&flat, risk).value;
    let (_, advantages) = first_action_values(&flat, risk)?;
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        rows.push(method_row(
            method, cfg, &mdp, &flat, exact, &advantages, instance, h, timings,
        )?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Aggregation.
// ---------------------------------------------------------------------------

/// Per-(method, bucket) summary of sweep rows.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub method: MethodId,
    pub bucket: f64,
    pub count: usize,
    pub mean_value: f64,
    pub mean_error: f64,
    pub mean_abs_error: f64,
    pub sem_abs_error: f64,
    pub mean_advantage: f64,
    /// Fraction of instances whose chosen action had zero advantage.
    pub win_rate: f64,
}

/// Groups rows by (method, nearest bucket) and computes summary statistics.
pub fn aggregate(rows: &[ResultRow], buckets: &[f64]) -> Vec<SummaryRow> {
    let nearest = |h: f64| -> f64 {
        let mut best = buckets[0];
        for &b in buckets {
            if (h - b).abs() < (h - best).abs() {
                best = b;
            }
        }
        best
    };
    let mut groups: HashMap<(MethodId, u64), Vec<&ResultRow>> = HashMap::new();
    for row in rows {
        let b = nearest(row.h_mdp);
        groups.entry((row.method, b.to_bits())).or_default().push(row);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, bucket_bits), rows)| {
            let bucket = f64::from_bits(bucket_bits);
            let n = rows.len() as f64;
            let errors: Vec<f64> = rows
                .iter()
                .map(|r| r.value - r.exact_value.unwrap_or(f64::NAN))
                .collect();
            let abs_errors: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
            let mean_abs = abs_errors.iter().sum::<f64>() / n;
            let sem_abs = if rows.len() > 1 {
                let var = abs_errors.iter().map(|e| (e - mean_abs).powi(2)).sum::<f64>()
                    / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            let advantages: Vec<f64> = rows.iter().filter_map(|r| r.advantage).collect();
            let mean_adv = if advantages.is_empty() {
                f64::NAN
            } else {
                advantages.iter().sum::<f64>() / advantages.len() as f64
            };
            let wins = advantages.iter().filter(|&&a| a >= -1e-12).count();
            SummaryRow {
                method,
                bucket,
                count: rows.len(),
                mean_value: rows.iter().map(|r| r.value).sum::<f64>() / n,
                mean_error: errors.iter().sum::<f64>() / n,
                mean_abs_error: mean_abs,
                sem_abs_error: sem_abs,
                mean_advantage: mean_adv,
                win_rate: if advantages.is_empty() {
                    f64::NAN
                } else {
                    wins as f64 / advantages.len() as f64
                },
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.bucket.partial_cmp(&b.bucket).unwrap())
    });
    out
}

/// Aggregate summary CSV.
pub fn write_summary<W: std::io::Write>(rows: &[SummaryRow], w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "method,bucket,count,mean_value,mean_error,mean_abs_error,sem_abs_error,mean_advantage,win_rate"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
            r.method,
            r.bucket,
            r.count,
            r.mean_value,
            r.mean_error,
            r.mean_abs_error,
            r.sem_abs_error,
            r.mean_advantage,
            r.win_rate
        )?;
    }
    Ok(())
}
