use std::fs;
use std::path::Path;

use planference::domains::{build_reactivity_env, generate_synthetic, SyntheticSpec};
use planference::harness::{
    self, aggregate, conformant_exhaustive, simulate as run_episodes, sweep_instance,
    ConformantAdapter, EpisodeConfig, ExactPlanningAdapter, MapAdapter, Planner, RandomAdapter,
    SweepConfig, SweepFailure, VbpAdapter,
};
use planference::mdpio::{self, MethodId, ResultRow};
use planference::model::{FactoredMdp, ModelError};
use planference::numeric::argmax;
use planference::oracle::{
    self, first_action_values, map_viterbi, mmap_enumerate, plan_value_iteration,
    NonStationaryPolicy, OracleError, RiskParams, Witness,
};
use planference::polytope::{
    det_ub_concave, determinize, hindsight_mc, lp_action_select, solve_concave,
    FrankWolfeOptions,
};
use planference::vbp::{self, EpsSchedule, UpdateFamily, VbpConfig};

use crate::{CompareArgs, GenerateArgs, SimulateArgs, SolveArgs, EXIT_CAP, EXIT_IO, EXIT_USAGE};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, message: message.into() }
}

fn cap_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_CAP, message: message.into() }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn from_model(e: ModelError) -> CliError {
    match e {
        ModelError::TooManyFlatStates { .. } => cap_err(e.to_string()),
        other => usage(other.to_string()),
    }
}

fn from_oracle(e: OracleError) -> CliError {
    match e {
        OracleError::CapExceeded { .. } => cap_err(e.to_string()),
        other => usage(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut manifest = String::from("target,index,seed,file,h_mdp\n");
    for (bi, &target) in args.targets.iter().enumerate() {
        for k in 0..args.count {
            let rng = planference::rng::Rng::new(args.seed);
            let seed = rng.fork((bi * args.count.max(1) + k) as u64).next_u64();
            let spec = SyntheticSpec {
                num_entities: args.entities,
                num_actions: args.actions,
                horizon: args.horizon,
                parents_per_entity: args.parents,
                target_entropy: target,
                seed,
            };
            let mdp = generate_synthetic(&spec).map_err(|e| usage(e.to_string()))?;
            let h = mdp.normalized_entropy();
            let file = format!("h{target}-i{k:04}.mdp.json");
            let path = args.out.join(&file);
            mdpio::write_mdp(&path, &mdp)
                .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
            manifest.push_str(&format!("{target},{k},{seed},{file},{h:.11e}\n"));
        }
    }
    let manifest_path = args.out.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn vbp_config_from(args: &SolveArgs, lambda: f64, family: UpdateFamily) -> VbpConfig {
    let mut config = if args.ippc_preset {
        VbpConfig::ippc_preset()
    } else {
        VbpConfig {
            damping: args.damping,
            max_outer_iters: args.max_iter,
            eps_schedule: match args.eps_const {
                Some(e) => EpsSchedule::Constant(e),
                None => EpsSchedule::InverseIter { floor: args.eps_floor },
            },
            ..Default::default()
        }
    };
    config.lambda = lambda;
    config.family = family;
    config.trace = true;
    config
}

struct SolveOutcome {
    row: ResultRow,
    trace: Vec<vbp::TraceRow>,
}

fn solve_one(
    method: MethodId,
    args: &SolveArgs,
    mdp: &FactoredMdp,
    instance: &str,
) -> Result<SolveOutcome, CliError> {
    let h = mdp.normalized_entropy();
    let lambda = args.lambda;
    let start = std::time::Instant::now();

    // Exact reference (and advantages) when flattening is feasible; the
    // comparison risk level is additive for additive-objective methods.
    let comparison_lambda = match method {
        MethodId::ViLp | MethodId::ConformantExhaustive => 0.0,
        MethodId::DetMc | MethodId::DetUb => 1.0,
        _ => lambda,
    };
    let flat = mdp.flatten(args.flat_cap);
    let reference = match &flat {
        Ok(f) => {
            let risk = RiskParams::new(comparison_lambda).map_err(from_oracle)?;
            let exact = plan_value_iteration(f, risk).value;
            let adv = if f.horizon >= 2 {
                Some(first_action_values(f, risk).map_err(from_oracle)?.1)
            } else {
                None
            };
            Some((exact, adv))
        }
        Err(_) => None,
    };

    let needs_flat = matches!(
        method,
        MethodId::PlanningVi
            | MethodId::Marginal
            | MethodId::MarginalU
            | MethodId::Map
            | MethodId::Mmap
            | MethodId::DetMc
            | MethodId::DetUb
            | MethodId::ConformantExhaustive
            | MethodId::Random
    );
    if needs_flat && flat.is_err() {
        return Err(from_model(flat.err().unwrap()));
    }

    let mut trace = Vec::new();
    let (value, action, iterations, converged, row_lambda) = match method {
        MethodId::PlanningVi => {
            let f = flat.as_ref().unwrap();
            let risk = RiskParams::new(lambda).map_err(from_oracle)?;
            let r = plan_value_iteration(f, risk);
            let action = if f.horizon >= 2 {
                Some(argmax(&first_action_values(f, risk).map_err(from_oracle)?.0))
            } else {
                None
            };
            (r.value, action, 1, true, lambda)
        }
        MethodId::Marginal | MethodId::MarginalU => {
            let f = flat.as_ref().unwrap();
            let uniform = method == MethodId::MarginalU;
            let risk = RiskParams::new(lambda).map_err(from_oracle)?;
            let r = if uniform {
                oracle::marginal_uniform(f, risk).map_err(from_oracle)?
            } else {
                oracle::marginal(f, risk).map_err(from_oracle)?
            };
            let action = oracle::marginal_action_scores(f, risk, uniform)
                .map_err(from_oracle)?
                .1;
            (r.value, Some(action), 1, true, lambda)
        }
        MethodId::Map => {
            let f = flat.as_ref().unwrap();
            let risk = RiskParams::new(lambda).map_err(from_oracle)?;
            let r = map_viterbi(f, risk).map_err(from_oracle)?;
            let action = match r.witness {
                Witness::Trajectory { actions, .. } => actions.first().copied(),
                _ => None,
            };
            (r.value, action, 1, true, lambda)
        }
        MethodId::Mmap => {
            let f = flat.as_ref().unwrap();
            let risk = RiskParams::new(lambda).map_err(from_oracle)?;
            let r = mmap_enumerate(f, risk, args.seq_cap).map_err(from_oracle)?;
            let action = match r.witness {
                Witness::ActionSequence(seq) => seq.first().copied(),
                _ => None,
            };
            (r.value, action, 1, true, lambda)
        }
        MethodId::Vbp => {
            if lambda <= 0.0 {
                return Err(usage(
                    "vbp needs a positive risk parameter; use maxent-vbp for the additive limit",
                ));
            }
            let config = vbp_config_from(args, lambda, UpdateFamily::Smoothed);
            let r = vbp::sweep(mdp, config).map_err(|e| usage(e.to_string()))?;
            trace = r.trace.clone();
            (
                r.bound,
                Some(vbp::extract_action(&r, 1)),
                r.outer_iters as u64,
                r.converged,
                lambda,
            )
        }
        MethodId::MaxEntVbp => {
            let family = if lambda > 0.0 {
                UpdateFamily::MaxEntRescaled { alpha: args.alpha }
            } else {
                UpdateFamily::MaxEntAdditive { alpha: args.alpha }
            };
            let config = vbp_config_from(args, lambda, family);
            let r = vbp::sweep(mdp, config).map_err(|e| usage(e.to_string()))?;
            trace = r.trace.clone();
            (
                r.bound,
                Some(vbp::extract_action(&r, 1)),
                r.outer_iters as u64,
                r.converged,
                lambda,
            )
        }
        MethodId::ViLp => {
            let (action, objectives) = lp_action_select(mdp, Default::default())
                .map_err(|e| cap_err(e.to_string()))?;
            let best = objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (best, Some(action), 1, true, 0.0)
        }
        MethodId::ViCvx => {
            let r = solve_concave(mdp, lambda, FrankWolfeOptions::default())
                .map_err(|e| cap_err(e.to_string()))?;
            (r.upper_bound(), None, r.iterations as u64, r.converged, lambda)
        }
        MethodId::DetMc => {
            if lambda != 1.0 {
                return Err(usage("det-mc is defined at lambda = 1"));
            }
            let f = flat.as_ref().unwrap();
            let det = determinize(f, args.det_levels);
            let est = hindsight_mc(f, &det, args.det_samples, args.seed);
            (est.estimate, None, args.det_samples as u64, true, 1.0)
        }
        MethodId::DetUb => {
            if lambda != 1.0 {
                return Err(usage("det-ub is defined at lambda = 1"));
            }
            let f = flat.as_ref().unwrap();
            // The noise-augmented program scales with states*actions*levels;
            // the dense machinery is only practical on coarse grids.
            let program_size = f.num_states * f.num_actions * args.det_levels * f.horizon;
            if program_size > 50_000 {
                return Err(cap_err(format!(
                    "det-ub program would have ~{program_size} variables; reduce --det-levels \
                     (the Monte Carlo det-mc estimate handles fine grids)"
                )));
            }
            let det = determinize(f, args.det_levels);
            let r = det_ub_concave(f, &det, FrankWolfeOptions::default())
                .map_err(|e| cap_err(e.to_string()))?;
            (r.upper_bound(), None, r.iterations as u64, r.converged, 1.0)
        }
        MethodId::ConformantExhaustive => {
            let f = flat.as_ref().unwrap();
            let (value, seq) =
                conformant_exhaustive(f, args.seq_cap).map_err(cap_err)?;
            (value, seq.first().copied(), 1, true, 0.0)
        }
        MethodId::Random => {
            let f = flat.as_ref().unwrap();
            let action = {
                let u = planference::rng::counter_unit(args.seed, 0, 0, 0);
                (u * f.num_actions as f64) as usize % f.num_actions
            };
            // Value of the uniform policy as a deterministic baseline figure.
            let uniform = NonStationaryPolicy {
                num_states: f.num_states,
                num_actions: f.num_actions,
                tables: vec![
                    vec![1.0 / f.num_actions as f64; f.num_states * f.num_actions];
                    f.horizon - 1
                ],
            };
            let risk = RiskParams::new(lambda).map_err(from_oracle)?;
            let value =
                oracle::policy_evaluate(f, &uniform, risk).map_err(from_oracle)?;
            (value, Some(action), 1, true, lambda)
        }
    };

    let (exact_value, advantage) = match &reference {
        Some((exact, adv)) => (
            Some(*exact),
            match (&action, adv) {
                (Some(a), Some(advs)) => Some(advs[*a]),
                _ => None,
            },
        ),
        None => (None, None),
    };

    Ok(SolveOutcome {
        row: ResultRow {
            method,
            lambda: row_lambda,
            instance: instance.to_string(),
            h_mdp: h,
            value,
            exact_value,
            first_action: action,
            advantage,
            iterations,
            converged,
            wall_time_ms: if args.timings {
                Some(start.elapsed().as_secs_f64() * 1e3)
            } else {
                None
            },
        },
        trace,
    })
}

pub fn solve(args: SolveArgs) -> Result<(), CliError> {
    let mdp = mdpio::read_mdp(&args.input).map_err(|e| match e {
        mdpio::MdpIoError::Io { .. } => CliError { code: EXIT_IO, message: e.to_string() },
        other => usage(other.to_string()),
    })?;
    let methods: Vec<MethodId> = args
        .method
        .iter()
        .map(|s| s.parse::<MethodId>().map_err(usage))
        .collect::<Result<_, _>>()?;
    let instance = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for method in methods {
        let outcome = solve_one(method, &args, &mdp, &instance)?;
        traces.push((method, outcome.trace));
        rows.push(outcome.row);
    }

    let mut stdout = std::io::stdout().lock();
    mdpio::write_results(&rows, &mut stdout)
        .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    if let Some(path) = &args.out {
        mdpio::write_results_path(&rows, path)
            .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    }
    if let Some(path) = &args.diagnostics {
        let mut text = String::from("method,iter,eps,residual,bound\n");
        for (method, trace) in &traces {
            for row in trace {
                text.push_str(&format!(
                    "{method},{},{:.11e},{:.11e},{:.11e}\n",
                    row.iter, row.eps, row.residual, row.bound
                ));
            }
        }
        fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn jobs_from(args_jobs: Option<usize>) -> usize {
    args_jobs
        .or_else(|| {
            std::env::var("PLANFERENCE_JOBS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
        })
        .unwrap_or(1)
        .max(1)
}

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let methods: Vec<MethodId> = args
        .methods
        .iter()
        .map(|s| s.parse::<MethodId>().map_err(usage))
        .collect::<Result<_, _>>()?;
    let cfg = SweepConfig {
        entropy_targets: args.targets.clone(),
        instances_per_bucket: args.instances,
        methods,
        lambda: args.lambda,
        master_seed: args.seed,
        synthetic: SyntheticSpec {
            num_entities: args.entities,
            horizon: args.horizon,
            ..Default::default()
        },
        vbp: VbpConfig {
            lambda: args.lambda.max(0.3),
            max_outer_iters: 400,
            ..Default::default()
        },
        ..Default::default()
    };

    // Task list in deterministic order; workers pick tasks round-robin and
    // results are reassembled by task index.
    let tasks: Vec<(usize, usize, f64, usize)> = cfg
        .entropy_targets
        .iter()
        .enumerate()
        .flat_map(|(bi, &target)| {
            (0..cfg.instances_per_bucket).map(move |k| (bi, k, target, 0usize))
        })
        .enumerate()
        .map(|(idx, (bi, k, target, _))| (idx, bi, target, k))
        .collect();
    let jobs = jobs_from(args.jobs).min(tasks.len().max(1));
    let timings = args.timings;

    let mut results: Vec<Option<Result<Vec<ResultRow>, SweepFailure>>> =
        (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..jobs {
            let cfg = &cfg;
            let tasks = &tasks;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for &(idx, bi, target, k) in tasks.iter().skip(worker).step_by(jobs) {
                    let seed = harness::instance_seed(cfg, bi, k);
                    let instance = format!("h{target}-i{k:04}");
                    let result = sweep_instance(cfg, target, seed, &instance, timings)
                        .map_err(|e| SweepFailure { instance, message: e.to_string() });
                    out.push((idx, result));
                }
                out
            }));
        }
        for handle in handles {
            for (idx, result) in handle.join().expect("worker panicked") {
                results[idx] = Some(result);
            }
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results.into_iter().flatten() {
        match result {
            Ok(mut r) => rows.append(&mut r),
            Err(f) => failures.push(f),
        }
    }

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let sweep_path = args.out.join("sweep.csv");
    mdpio::write_results_path(&rows, &sweep_path)
        .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    let summary = aggregate(&rows, &cfg.entropy_targets);
    let mut buf = Vec::new();
    harness::write_summary(&summary, &mut buf)
        .map_err(|e| CliError { code: EXIT_IO, message: e.to_string() })?;
    let summary_path = args.out.join("summary.csv");
    fs::write(&summary_path, buf).map_err(|e| io_err(&summary_path, e))?;

    println!(
        "sweep complete: {} rows, {} failures -> {}",
        rows.len(),
        failures.len(),
        sweep_path.display()
    );
    for f in failures.iter().take(10) {
        eprintln!("instance {} failed: {}", f.instance, f.message);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate_cmd(args: SimulateArgs) -> Result<(), CliError> {
    let env = if args.env == "reactivity" {
        build_reactivity_env().mdp
    } else {
        mdpio::read_mdp(Path::new(&args.env)).map_err(|e| match e {
            mdpio::MdpIoError::Io { .. } => CliError { code: EXIT_IO, message: e.to_string() },
            other => usage(other.to_string()),
        })?
    };

    let mut planner: Box<dyn Planner> = match args.planner.as_str() {
        "planning-vi" => Box::new(ExactPlanningAdapter::new(RiskParams::additive(), args.flat_cap)),
        "map" => {
            let risk = RiskParams::new(args.lambda).map_err(from_oracle)?;
            if risk.is_additive() {
                return Err(usage("the map agent needs a positive risk parameter"));
            }
            Box::new(MapAdapter::new(risk, args.flat_cap))
        }
        "conformant-exhaustive" => Box::new(ConformantAdapter::new(args.flat_cap, args.seq_cap)),
        "vbp" => {
            if args.lambda <= 0.0 {
                return Err(usage("the vbp agent needs a positive risk parameter"));
            }
            Box::new(VbpAdapter::new(VbpConfig {
                lambda: args.lambda,
                max_outer_iters: 400,
                ..Default::default()
            }))
        }
        "maxent-vbp" => Box::new(VbpAdapter::new(VbpConfig {
            lambda: 0.0,
            family: UpdateFamily::MaxEntAdditive { alpha: args.alpha },
            max_outer_iters: 400,
            ..Default::default()
        })),
        "random" => Box::new(RandomAdapter::new(args.seed ^ 0xBA5E)),
        other => return Err(usage(format!("unknown planner `{other}`"))),
    };

    let config = EpisodeConfig {
        episodes: args.episodes,
        lookaheads: args.lookahead.clone(),
        master_seed: args.seed,
        step_budget: None,
        log_trajectories: args.trajectories.is_some(),
    };
    let result = run_episodes(&env, planner.as_mut(), &config);

    println!(
        "planner {} episodes {} lookahead {} mean {:.11e} sem {:.11e} flagged {}",
        args.planner,
        args.episodes,
        result.lookahead,
        result.mean,
        result.sem,
        result.flagged_episodes.len()
    );
    if let Some(path) = &args.out {
        let mut text = String::from("episode,reward,flagged\n");
        for (ep, &r) in result.episode_rewards.iter().enumerate() {
            let flagged = result.flagged_episodes.contains(&ep);
            text.push_str(&format!("{ep},{r:.11e},{flagged}\n"));
        }
        fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &args.trajectories {
        let mut text = String::from("episode,step,state,action,reward\n");
        for row in &result.trajectories {
            let state = row
                .state
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let action = row.action.map(|a| a.to_string()).unwrap_or_default();
            text.push_str(&format!(
                "{},{},{state},{action},{:.11e}\n",
                row.episode, row.step, row.reward
            ));
        }
        fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub use simulate_cmd as simulate;
