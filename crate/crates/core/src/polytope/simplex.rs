//! Dense two-phase simplex for equality-form programs.
//!
//! Pivoting is Dantzig's rule with a permanent switch to Bland's rule after a
//! run of degenerate pivots, so the solver cannot cycle and every solve is
//! deterministic. Redundant equality rows (common in local-polytope
//! constructions) are tolerated: artificials stuck basic at zero after phase
//! one simply stay out of the way.

use super::{ConstraintRow, LocalPolytopeProgram, PolytopeError};

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Feasibility/optimality tolerance.
    pub tol: f64,
    /// Pivot limit; 0 means choose automatically from the program size.
    pub max_iters: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { tol: 1e-8, max_iters: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Outcome of one LP solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Value of the maximization objective.
    pub objective: f64,
    pub values: Vec<f64>,
    /// `max |Ax - b|` against the original rows.
    pub primal_residual: f64,
    /// Worst optimality violation among reduced costs at termination.
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Pluggable LP backend; the built-in dense simplex is the default.
pub trait LpSolver {
    fn solve(&self, program: &LocalPolytopeProgram) -> Result<SolveReport, PolytopeError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplex {
    pub options: SimplexOptions,
}

impl LpSolver for DenseSimplex {
    fn solve(&self, program: &LocalPolytopeProgram) -> Result<SolveReport, PolytopeError> {
        solve_lp_with(program, self.options)
    }
}

/// Maximizes `program.objective` subject to the program rows; default options.
pub fn solve_lp(program: &LocalPolytopeProgram) -> Result<SolveReport, PolytopeError> {
    solve_lp_with(program, SimplexOptions::default())
}

struct Tableau {
    n: usize,
    total: usize,
    rows: usize,
    /// (rows + 2) x (total + 1); row `rows` holds phase-2 reduced costs,
    /// row `rows + 1` phase-1 reduced costs; the last column is the rhs.
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.total + 1) + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * (self.total + 1) + c] = v;
    }

    fn pivot(&mut self, prow: usize, pcol: usize) {
        let width = self.total + 1;
        let pval = self.at(prow, pcol);
        let inv = 1.0 / pval;
        for c in 0..width {
            self.data[prow * width + c] *= inv;
        }
        self.set(prow, pcol, 1.0);
        for r in 0..self.rows + 2 {
            if r == prow {
                continue;
            }
            let factor = self.at(r, pcol);
            if factor == 0.0 {
                continue;
            }
            for c in 0..width {
                let v = self.at(prow, c);
                if v != 0.0 {
                    self.data[r * width + c] -= factor * v;
                }
            }
            self.set(r, pcol, 0.0);
        }
        self.basis[prow] = pcol;
    }
}

pub fn solve_lp_with(
    program: &LocalPolytopeProgram,
    options: SimplexOptions,
) -> Result<SolveReport, PolytopeError> {
    // Dantzig pricing first; if the run stalls, blows up numerically, or
    // finishes with a bad residual, rerun under Bland's rule from the start.
    let first = solve_attempt(program, options, false)?;
    let acceptable = first.status == SolveStatus::Optimal
        && first.primal_residual <= (options.tol * 100.0).max(1e-6);
    if acceptable {
        return Ok(first);
    }
    let mut retry_options = options;
    if retry_options.max_iters == 0 {
        retry_options.max_iters = 20_000 + 200 * (program.num_vars() + program.rows.len());
    }
    let second = solve_attempt(program, retry_options, true)?;
    if second.status == SolveStatus::Optimal
        && second.primal_residual <= (options.tol * 100.0).max(1e-6)
    {
        return Ok(second);
    }
    // Report whichever terminated more cleanly.
    Ok(if second.status == SolveStatus::Optimal { second } else { first })
}

fn solve_attempt(
    program: &LocalPolytopeProgram,
    options: SimplexOptions,
    bland_from_start: bool,
) -> Result<SolveReport, PolytopeError> {
    let n = program.num_vars();
    let m = program.rows.len();
    let tol = options.tol;
    let max_iters = if options.max_iters == 0 {
        2000 + 60 * (n + m)
    } else {
        options.max_iters
    };

    let total = n + m;
    let width = total + 1;
    let mut tab = Tableau {
        n,
        total,
        rows: m,
        data: vec![0.0; (m + 2) * width],
        basis: (n..n + m).collect(),
    };

    // Fill rows with b >= 0 and unit artificial columns.
    for (i, row) in program.rows.iter().enumerate() {
        let flip = if row.rhs < 0.0 { -1.0 } else { 1.0 };
        for &(j, a) in &row.coeffs {
            let cur = tab.at(i, j);
            tab.set(i, j, cur + flip * a);
        }
        tab.set(i, n + i, 1.0);
        tab.set(i, total, flip * row.rhs);
    }
    // Phase-2 reduced costs for min(-objective).
    for j in 0..n {
        tab.set(m, j, -program.objective[j]);
    }
    // Phase-1 reduced costs: artificial basis makes r_j = -sum of column j,
    // and the stored rhs = -sum b (so the phase-1 objective is -rhs).
    for j in 0..total + 1 {
        let mut s = 0.0;
        for i in 0..m {
            s += tab.at(i, j);
        }
        if j < n || j == total {
            tab.set(m + 1, j, -s);
        }
    }

    let mut iterations = 0usize;
    let mut bland = bland_from_start;
    let mut stall = 0usize;

    let run_phase = |tab: &mut Tableau,
                     cost_row: usize,
                     allow_artificial: bool,
                     iterations: &mut usize,
                     bland: &mut bool,
                     stall: &mut usize|
     -> SolveStatus {
        loop {
            if *iterations >= max_iters {
                return SolveStatus::IterationLimit;
            }
            // Numeric blow-up guard: a corrupted tableau cannot recover.
            if *iterations % 256 == 255 {
                let worst = tab
                    .data
                    .iter()
                    .fold(0.0f64, |acc, &v| acc.max(v.abs()));
                if !worst.is_finite() || worst > 1e11 {
                    return SolveStatus::IterationLimit;
                }
            }
            let limit = if allow_artificial { tab.total } else { tab.n };
            // Entering column.
            let mut enter: Option<usize> = None;
            if *bland {
                for j in 0..limit {
                    if tab.at(cost_row, j) < -tol {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -tol;
                for j in 0..limit {
                    let r = tab.at(cost_row, j);
                    if r < best {
                        best = r;
                        enter = Some(j);
                    }
                }
            }
            let Some(pcol) = enter else {
                return SolveStatus::Optimal;
            };
            // Ratio test in two passes: find the minimum ratio, then among
            // near-ties pick the largest pivot element for stability (or the
            // lowest basis variable under Bland's rule, for termination).
            let mut best_ratio = f64::INFINITY;
            for i in 0..tab.rows {
                let a = tab.at(i, pcol);
                if a > tol {
                    best_ratio = best_ratio.min(tab.at(i, tab.total) / a);
                }
            }
            if best_ratio == f64::INFINITY {
                // Unbounded direction. Feasible polytopes here are bounded,
                // so treat it as a construction bug surfaced as infeasible.
                return SolveStatus::Infeasible;
            }
            let ratio_slack = 1e-9 * (1.0 + best_ratio.abs());
            let mut prow: Option<usize> = None;
            for i in 0..tab.rows {
                let a = tab.at(i, pcol);
                if a > tol && tab.at(i, tab.total) / a <= best_ratio + ratio_slack {
                    let better = match prow {
                        None => true,
                        Some(cur) => {
                            if *bland {
                                tab.basis[i] < tab.basis[cur]
                            } else {
                                a > tab.at(cur, pcol)
                            }
                        }
                    };
                    if better {
                        prow = Some(i);
                    }
                }
            }
            let prow = prow.expect("a minimum-ratio row exists");
            let before = tab.at(cost_row, tab.total);
            tab.pivot(prow, pcol);
            *iterations += 1;
            let after = tab.at(cost_row, tab.total);
            if (after - before).abs() <= tol {
                *stall += 1;
                if *stall > 64 {
                    *bland = true;
                }
            } else {
                *stall = 0;
            }
        }
    };

    // Phase 1.
    let status = run_phase(&mut tab, m + 1, true, &mut iterations, &mut bland, &mut stall);
    if status == SolveStatus::IterationLimit {
        return Ok(unfinished(program, &tab, SolveStatus::IterationLimit, iterations));
    }
    let phase1 = -tab.at(m + 1, total);
    if phase1 > (tol * 10.0).max(1e-7) {
        return Ok(unfinished(program, &tab, SolveStatus::Infeasible, iterations));
    }
    // Drive artificials out of the basis where a real pivot exists; rows with
    // no real entries are redundant and stay parked at zero.
    for i in 0..m {
        if tab.basis[i] >= n {
            let mut col = None;
            for j in 0..n {
                if tab.at(i, j).abs() > tol {
                    col = Some(j);
                    break;
                }
            }
            if let Some(j) = col {
                tab.pivot(i, j);
                iterations += 1;
            }
        }
    }

    // Phase 2.
    bland = bland_from_start;
    stall = 0;
    let status = run_phase(&mut tab, m, false, &mut iterations, &mut bland, &mut stall);
    let status = match status {
        SolveStatus::Optimal => SolveStatus::Optimal,
        other => other,
    };
    let mut report = unfinished(program, &tab, status, iterations);
    if report.status == SolveStatus::Optimal {
        // Worst phase-2 reduced-cost violation over real columns.
        let mut worst: f64 = 0.0;
        for j in 0..n {
            worst = worst.max(-tab.at(m, j));
        }
        report.dual_residual = worst;
    }
    Ok(report)
}

fn unfinished(
    program: &LocalPolytopeProgram,
    tab: &Tableau,
    status: SolveStatus,
    iterations: usize,
) -> SolveReport {
    let n = program.num_vars();
    let mut values = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            values[b] = tab.at(i, tab.total).max(0.0);
        }
    }
    let objective = values
        .iter()
        .zip(&program.objective)
        .map(|(&x, &c)| x * c)
        .sum();
    let primal_residual = max_residual(&program.rows, &values);
    SolveReport {
        status,
        objective,
        values,
        primal_residual,
        dual_residual: f64::INFINITY,
        iterations,
    }
}

pub(crate) fn max_residual(rows: &[ConstraintRow], values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for row in rows {
        let mut lhs = 0.0;
        for &(j, a) in &row.coeffs {
            lhs += a * values[j];
        }
        worst = worst.max((lhs - row.rhs).abs());
    }
    worst
}
