//! Command-line front end: generate instances, solve single instances with
//! any method, run comparison sweeps and episodic simulations.
//!
//! Every subcommand is deterministic given its flags and seeds; wall-clock
//! timings are emitted only when `--timings` is passed so repeated runs are
//! byte-identical.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 success, 2 usage error, 3 cap or feasibility error, 4 I/O.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CAP: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "planference",
    version,
    about = "Planning in factored MDPs as variational inference: exact oracles, value belief propagation, polytope bounds, and an experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate entropy-targeted synthetic MDP documents plus a manifest.
    Generate(GenerateArgs),
    /// Solve one MDP document with one or more methods.
    Solve(SolveArgs),
    /// Run a comparison sweep over entropy buckets and write plot-ready CSV.
    Compare(CompareArgs),
    /// Run episodic simulations with a replanning agent.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Comma-separated target normalized entropies in (0, 1).
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<f64>,
    /// Instances per target (0 writes the manifest only).
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 3)]
    entities: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    /// Parents per entity (ring overlap pattern).
    #[arg(long, default_value_t = 2)]
    parents: usize,
}

#[derive(Args)]
struct SolveArgs {
    /// MDP document path.
    #[arg(long)]
    input: std::path::PathBuf,
    /// Comma-separated method ids (see the results registry).
    #[arg(long, value_delimiter = ',', default_value = "planning-vi")]
    method: Vec<String>,
    /// Risk parameter; 0 selects the additive limit where defined.
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    /// Policy-entropy temperature for the MaxEnt families.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Smoothing floor of the inverse-iteration anneal.
    #[arg(long, default_value_t = 0.01)]
    eps_floor: f64,
    /// Fixed smoothing value (overrides the anneal).
    #[arg(long)]
    eps_const: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Outer iteration cap for message passing.
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Competition preset: damping 0.1, anneal every 300, cap 150000.
    #[arg(long, default_value_t = false)]
    ippc_preset: bool,
    /// Joint-state cap for exact references and flat methods.
    #[arg(long, default_value_t = 4096)]
    flat_cap: usize,
    /// Action-sequence cap for enumeration methods.
    #[arg(long, default_value_t = 1 << 24)]
    seq_cap: u128,
    /// Noise grid size for determinization methods.
    #[arg(long, default_value_t = 1024)]
    det_levels: usize,
    /// Monte Carlo samples for the hindsight estimate.
    #[arg(long, default_value_t = 10_000)]
    det_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Record wall-clock times (breaks byte-determinism of outputs).
    #[arg(long, default_value_t = false)]
    timings: bool,
    /// Write per-outer-iteration residual/bound CSV for message passing.
    #[arg(long)]
    diagnostics: Option<std::path::PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    targets: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    instances: usize,
    #[arg(long, value_delimiter = ',', default_value = "planning-vi,map,mmap,vbp")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for sweep.csv and summary.csv.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Worker threads (PLANFERENCE_JOBS is honored as the default).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = false)]
    timings: bool,
    #[arg(long, default_value_t = 3)]
    entities: usize,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in environment name (`reactivity`) or an MDP document path.
    #[arg(long)]
    env: String,
    /// Agent: planning-vi, map, conformant-exhaustive, vbp, maxent-vbp, random.
    #[arg(long)]
    planner: String,
    #[arg(long, default_value_t = 30)]
    episodes: usize,
    /// Comma-separated lookahead horizons; the best average is kept.
    #[arg(long, value_delimiter = ',', default_value = "4,9")]
    lookahead: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Risk parameter for the map/vbp agents.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 4096)]
    flat_cap: usize,
    #[arg(long, default_value_t = 1 << 21)]
    seq_cap: u128,
    /// Per-episode reward CSV.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Step-level trajectory log CSV.
    #[arg(long)]
    trajectories: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Solve(args) => commands::solve(args),
        Command::Compare(args) => commands::compare(args),
        Command::Simulate(args) => commands::simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
