//! Concave objectives over a local polytope, maximized by Frank-Wolfe.
//!
//! Objectives are a linear part plus weighted entropies of linear
//! aggregations of the variables; that form covers both the positive-risk
//! planning bound (conditional child entropies per dynamics factor) and the
//! exogenous-noise bound (entropies of the noise marginals). Each iteration
//! linearizes at the current point, calls the LP solver for a vertex, and
//! takes an exact line-search step; away-steps over the discovered vertex
//! set keep convergence fast on these small polytopes.

use super::simplex::{solve_lp_with, SimplexOptions, SolveStatus};
use super::{LocalPolytopeProgram, PolytopeError};
use crate::model::FactoredMdp;

/// Penalized objective coefficient standing in for `log 0`.
const ZERO_SUPPORT_PENALTY: f64 = 1e8;
/// Probabilities below this are treated as this value inside gradient logs,
/// keeping the arithmetic finite at exact zeros. Interior points produced by
/// the barrier never reach it, so gradients there are effectively exact; the
/// supergradient slack it introduces is below 1e-290 per coordinate.
const LOG_FLOOR_ARG: f64 = 1e-300;

/// `weight · H(Σ over assigned vars per bin)` added to the objective.
#[derive(Debug, Clone)]
pub struct EntropyTerm {
    pub weight: f64,
    /// (variable index, bin index) pairs; bins aggregate by plain summation.
    pub assignments: Vec<(usize, usize)>,
    pub num_bins: usize,
}

/// Concave maximization problem over the rows of a [`LocalPolytopeProgram`].
#[derive(Debug, Clone)]
pub struct ConcaveProgram {
    /// Constraint carrier; its own linear objective is ignored.
    pub polytope: LocalPolytopeProgram,
    pub linear: Vec<f64>,
    pub entropies: Vec<EntropyTerm>,
    pub constant: f64,
}

impl ConcaveProgram {
    pub fn value(&self, q: &[f64]) -> f64 {
        let mut v = self.constant;
        for (x, c) in q.iter().zip(&self.linear) {
            v += x * c;
        }
        for term in &self.entropies {
            let mut bins = vec![0.0; term.num_bins];
            for &(var, bin) in &term.assignments {
                bins[bin] += q[var];
            }
            let mut h = 0.0;
            for &m in &bins {
                if m > 0.0 {
                    h -= m * m.ln();
                }
            }
            v += term.weight * h;
        }
        v
    }

    fn gradient_with_floor(&self, q: &[f64], out: &mut [f64], floor: f64) {
        out.copy_from_slice(&self.linear);
        for term in &self.entropies {
            let mut bins = vec![0.0; term.num_bins];
            for &(var, bin) in &term.assignments {
                bins[bin] += q[var];
            }
            for &(var, bin) in &term.assignments {
                let m = bins[bin].max(floor);
                out[var] += term.weight * (-(1.0 + m.ln()));
            }
        }
    }

    /// Supergradient with logs clamped near the boundary; suitable for
    /// optimization steps (bounded curvature).
    pub fn gradient(&self, q: &[f64], out: &mut [f64]) {
        self.gradient_with_floor(q, out, LOG_FLOOR_ARG);
    }

    /// Near-true supergradient for duality-gap certificates; the residual
    /// clamping slack is below 1e-290 per coordinate.
    pub fn certificate_gradient(&self, q: &[f64], out: &mut [f64]) {
        self.gradient_with_floor(q, out, 1e-300);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrankWolfeOptions {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub simplex: SimplexOptions,
}

impl Default for FrankWolfeOptions {
    fn default() -> Self {
        FrankWolfeOptions { max_iters: 500, gap_tol: 1e-5, simplex: SimplexOptions::default() }
    }
}

/// Outcome of a concave maximization.
#[derive(Debug, Clone)]
pub struct ConcaveSolveResult {
    /// Objective at the returned point (a lower bound on the program optimum).
    pub value: f64,
    /// Certified duality gap: the optimum is at most `value + gap`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub point: Vec<f64>,
}

impl ConcaveSolveResult {
    /// Certified upper bound on the program optimum.
    pub fn upper_bound(&self) -> f64 {
        self.value + self.gap
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact line search for `max_γ G(q + γ d)` on `[0, γmax]` by bisecting the
/// monotone derivative.
///
/// The derivative only depends on the per-bin masses of `q` and `d`, which
/// are aggregated once; each probe is then linear in the number of bins.
fn line_search(prog: &ConcaveProgram, q: &[f64], d: &[f64], gamma_max: f64) -> f64 {
    let lin_d: f64 = dot(&prog.linear, d);
    // Per-term bin masses for the base point and the direction.
    let mut masses: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(prog.entropies.len());
    for term in &prog.entropies {
        let mut mq = vec![0.0; term.num_bins];
        let mut md = vec![0.0; term.num_bins];
        for &(var, bin) in &term.assignments {
            mq[bin] += q[var];
            md[bin] += d[var];
        }
        masses.push((mq, md));
    }
    let slope_at = |gamma: f64| -> f64 {
        let mut s = lin_d;
        for (term, (mq, md)) in prog.entropies.iter().zip(&masses) {
            let mut acc = 0.0;
            for (&m0, &m1) in mq.iter().zip(md) {
                if m1 != 0.0 {
                    let m = (m0 + gamma * m1).max(LOG_FLOOR_ARG);
                    acc += -(1.0 + m.ln()) * m1;
                }
            }
            s += term.weight * acc;
        }
        s
    };
    if slope_at(gamma_max) >= 0.0 {
        return gamma_max;
    }
    if slope_at(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, gamma_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if slope_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Test hook exposing the reduced space (free indices, basis columns).
#[doc(hidden)]
pub fn debug_reduced_space(
    prog: &ConcaveProgram,
    pinned: &[bool],
) -> (Vec<usize>, Vec<Vec<f64>>) {
    let rs = build_reduced_space(prog, pinned);
    (rs.free, rs.basis)
}

/// Orthonormal basis of the equality null space restricted to the free
/// (unpinned) coordinates, built by Gaussian elimination.
struct ReducedSpace {
    free: Vec<usize>,
    /// Column-major orthonormal basis vectors over the free coordinates.
    basis: Vec<Vec<f64>>,
}

fn build_reduced_space(prog: &ConcaveProgram, pinned: &[bool]) -> ReducedSpace {
    let free: Vec<usize> = (0..pinned.len()).filter(|&k| !pinned[k]).collect();
    let mut col_of = vec![usize::MAX; pinned.len()];
    for (c, &k) in free.iter().enumerate() {
        col_of[k] = c;
    }
    let nf = free.len();
    // Dense row-echelon elimination of the constraint matrix over free vars.
    let mut mat: Vec<Vec<f64>> = Vec::new();
    for row in &prog.polytope.rows {
        let mut dense = vec![0.0; nf];
        let mut nonzero = false;
        for &(j, a) in &row.coeffs {
            if col_of[j] != usize::MAX {
                dense[col_of[j]] += a;
                nonzero = true;
            }
        }
        if nonzero {
            mat.push(dense);
        }
    }
    let m = mat.len();
    let mut pivot_of_col = vec![usize::MAX; nf];
    let mut rank = 0;
    for col in 0..nf {
        // Partial pivoting for stability.
        let mut best = rank;
        let mut best_val = 0.0;
        for (r, row) in mat.iter().enumerate().take(m).skip(rank) {
            if row[col].abs() > best_val {
                best_val = row[col].abs();
                best = r;
            }
        }
        if best_val < 1e-9 {
            continue;
        }
        mat.swap(rank, best);
        let inv = 1.0 / mat[rank][col];
        for v in mat[rank].iter_mut() {
            *v *= inv;
        }
        for r in 0..m {
            if r != rank {
                let f = mat[r][col];
                if f != 0.0 {
                    for c in 0..nf {
                        let v = mat[rank][c];
                        if v != 0.0 {
                            mat[r][c] -= f * v;
                        }
                    }
                }
            }
        }
        pivot_of_col[col] = rank;
        rank += 1;
        if rank == m {
            break;
        }
    }
    // Null-space vectors: one per free (non-pivot) column.
    let mut basis = Vec::new();
    for col in 0..nf {
        if pivot_of_col[col] != usize::MAX {
            continue;
        }
        let mut v = vec![0.0; nf];
        v[col] = 1.0;
        for (pc, &pr) in pivot_of_col.iter().enumerate() {
            if pr != usize::MAX {
                v[pc] = -mat[pr][col];
            }
        }
        // Gram-Schmidt against accepted basis vectors.
        for b in basis.iter() {
            let b: &Vec<f64> = b;
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    ReducedSpace { free, basis }
}

/// Projected gradient ascent on the current face: coordinates at (or
/// reaching) zero are pinned, the rest move inside the equality null space
/// with spectral (Barzilai-Borwein) steps and a backtracking safeguard.
/// Pinning rounds restart the null space whenever a coordinate lands on the
/// boundary; the surrounding vertex steps re-open coordinates if the optimum
/// needs them. Feasibility is preserved to rounding error.
/// Barrier Newton polish inside the equality null space.
///
/// Maximizes `G(x) + μ Σ ln x` over the face of the input point (its exact
/// zeros stay pinned), driving μ down a short schedule. The null-space basis
/// and the per-term bin aggregation matrices are fixed, so each Newton step
/// costs one dense Hessian assembly over bins plus a Cholesky in the reduced
/// dimension. Feasibility is preserved exactly; the caller certifies
/// optimality separately.
fn barrier_newton(prog: &ConcaveProgram, q: &mut [f64]) {
    let n = q.len();
    let pinned: Vec<bool> = q.iter().map(|&x| x <= 0.0).collect();
    let rs = build_reduced_space(prog, &pinned);
    if rs.basis.is_empty() {
        return;
    }
    let k = rs.basis.len();
    // Column-of-free lookup and the reduced linear gradient.
    let mut col_of = vec![usize::MAX; n];
    for (c, &j) in rs.free.iter().enumerate() {
        col_of[j] = c;
    }
    // Bin aggregation of the basis per entropy term: rows_t[b] = Σ N[var].
    let mut term_rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(prog.entropies.len());
    for term in &prog.entropies {
        let mut rows = vec![vec![0.0; k]; term.num_bins];
        for &(var, bin) in &term.assignments {
            let c = col_of[var];
            if c != usize::MAX {
                for (b, basis) in rs.basis.iter().enumerate() {
                    rows[bin][b] += basis[c];
                }
            }
        }
        term_rows.push(rows);
    }

    let mut grad = vec![0.0; n];
    let mut gz = vec![0.0; k];
    let mut hess = vec![0.0; k * k];
    let mut dz = vec![0.0; k];
    let mut bins: Vec<Vec<f64>> = prog
        .entropies
        .iter()
        .map(|t| vec![0.0; t.num_bins])
        .collect();

    let debug = std::env::var_os("PLANFERENCE_NEWTON_DEBUG").is_some();
    let mut mu: f64 = 1e-2;
    let floor_x = 1e-300;
    while mu > 1e-11 {
        let mut exit = "iteration cap";
        let mut steps = 0;
        // The linearized-LP certificate downstream needs first-order
        // stationarity, not just value convergence, so stages run until the
        // reduced barrier gradient itself is small.
        let stage_tol = (mu * 10.0).max(1e-8);
        for _newton in 0..80 {
            steps += 1;
            // Gradient of G plus the barrier, reduced to the null space.
            prog.gradient(q, &mut grad);
            for (c, &j) in rs.free.iter().enumerate() {
                let _ = c;
                grad[j] += mu / q[j].max(floor_x);
            }
            for (b, basis) in rs.basis.iter().enumerate() {
                let mut acc = 0.0;
                for (c, &j) in rs.free.iter().enumerate() {
                    acc += basis[c] * grad[j];
                }
                gz[b] = acc;
            }
            // Reduced Hessian of -(G + barrier).
            hess.iter_mut().for_each(|h| *h = 0.0);
            for (t, term) in prog.entropies.iter().enumerate() {
                let masses = &mut bins[t];
                masses.iter_mut().for_each(|m| *m = 0.0);
                for &(var, bin) in &term.assignments {
                    masses[bin] += q[var];
                }
                let rows = &term_rows[t];
                for (b, row) in rows.iter().enumerate() {
                    let m = masses[b].max(floor_x);
                    let scale = term.weight / m;
                    if scale == 0.0 {
                        continue;
                    }
                    for r in 0..k {
                        let sr = scale * row[r];
                        if sr == 0.0 {
                            continue;
                        }
                        for c in r..k {
                            hess[r * k + c] += sr * row[c];
                        }
                    }
                }
            }
            for (c, &j) in rs.free.iter().enumerate() {
                let x = q[j].max(floor_x);
                let scale = mu / (x * x);
                let basis_row: Vec<f64> = rs.basis.iter().map(|b| b[c]).collect();
                for r in 0..k {
                    let sr = scale * basis_row[r];
                    if sr == 0.0 {
                        continue;
                    }
                    for cc in r..k {
                        hess[r * k + cc] += sr * basis_row[cc];
                    }
                }
            }
            for r in 0..k {
                for c in 0..r {
                    hess[r * k + c] = hess[c * k + r];
                }
            }
            // Solve H dz = gz by Cholesky with a ridge fallback.
            if !cholesky_solve(&mut hess, &gz, &mut dz, k) {
                // Steepest ascent fallback.
                dz.copy_from_slice(&gz);
            }
            let gz_norm = gz.iter().fold(0.0f64, |m, &g| m.max(g.abs()));
            if gz_norm <= stage_tol {
                exit = "stationary";
                break;
            }
            let decrement: f64 = gz.iter().zip(&dz).map(|(a, b)| a * b).sum();
            if decrement.abs() < 1e-22 {
                exit = "tiny decrement";
                break;
            }
            // Step limit keeping x strictly positive.
            let mut alpha_max = f64::INFINITY;
            for (c, &j) in rs.free.iter().enumerate() {
                let mut move_c = 0.0;
                for (b, basis) in rs.basis.iter().enumerate() {
                    move_c += basis[c] * dz[b];
                }
                if move_c < 0.0 {
                    alpha_max = alpha_max.min(-q[j] / move_c);
                }
            }
            let mut alpha = (0.995 * alpha_max).min(1.0);
            // Backtracking on the barrier objective.
            let barrier_value = |q: &[f64]| -> f64 {
                let mut v = prog.value(q);
                for &j in &rs.free {
                    v += mu * q[j].max(floor_x).ln();
                }
                v
            };
            let base = barrier_value(q);
            let saved: Vec<f64> = rs.free.iter().map(|&j| q[j]).collect();
            let mut accepted = false;
            for _ in 0..50 {
                if alpha <= 1e-18 {
                    break;
                }
                for (c, &j) in rs.free.iter().enumerate() {
                    let mut move_c = 0.0;
                    for (b, basis) in rs.basis.iter().enumerate() {
                        move_c += basis[c] * dz[b];
                    }
                    q[j] = (saved[c] + alpha * move_c).max(0.0);
                }
                if barrier_value(q) > base + 1e-4 * alpha * decrement.max(0.0) - 1e-15 {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                for (c, &j) in rs.free.iter().enumerate() {
                    q[j] = saved[c];
                }
                exit = "line search";
                break;
            }
        }
        if debug {
            let mut gnorm: f64 = 0.0;
            for &g in &gz {
                gnorm = gnorm.max(g.abs());
            }
            eprintln!(
                "newton mu {mu:.1e}: exit {exit} after {steps} steps, value {:.10}, |gz| {gnorm:.3e}",
                prog.value(q)
            );
        }
        mu *= 0.1;
    }
}

fn cholesky_solve(matrix: &mut [f64], rhs: &[f64], out: &mut [f64], k: usize) -> bool {
    // In-place Cholesky with a small adaptive ridge.
    let mut ridge = 0.0;
    let trace: f64 = (0..k).map(|i| matrix[i * k + i]).sum::<f64>().max(1e-12);
    for _attempt in 0..3 {
        let mut a = matrix.to_vec();
        if ridge > 0.0 {
            for i in 0..k {
                a[i * k + i] += ridge;
            }
        }
        let mut ok = true;
        for i in 0..k {
            for j in i..k {
                let mut sum = a[i * k + j];
                for p in 0..i {
                    sum -= a[p * k + i] * a[p * k + j];
                }
                if i == j {
                    if sum <= 0.0 {
                        ok = false;
                        break;
                    }
                    a[i * k + i] = sum.sqrt();
                } else {
                    a[i * k + j] = sum / a[i * k + i];
                }
            }
            if !ok {
                break;
            }
        }
        if ok {
            // Solve Lᵀ L ... stored as upper; forward then backward.
            let mut y = rhs.to_vec();
            for i in 0..k {
                let mut sum = y[i];
                for p in 0..i {
                    sum -= a[p * k + i] * y[p];
                }
                y[i] = sum / a[i * k + i];
            }
            for i in (0..k).rev() {
                let mut sum = y[i];
                for p in i + 1..k {
                    sum -= a[i * k + p] * out[p];
                }
                out[i] = sum / a[i * k + i];
            }
            return true;
        }
        ridge = if ridge == 0.0 { trace * 1e-10 } else { ridge * 100.0 };
    }
    false
}

/// Maximizes a concave program starting from a feasible point.
///
/// Conditional-gradient scheme: each outer iteration linearizes at the
/// current point, calls the LP for the certificate gap and a vertex, takes
/// an exact line-search step toward it, and polishes with projected gradient
/// ascent on the current face ([`barrier_newton`]). The vertex steps open
/// coordinates the face polish cannot reach; the returned gap certifies
/// `optimum ≤ value + gap` regardless of how the point was produced.
pub fn maximize_concave(
    prog: &ConcaveProgram,
    init: Vec<f64>,
    options: FrankWolfeOptions,
) -> Result<ConcaveSolveResult, PolytopeError> {
    let n = prog.linear.len();
    if init.len() != n {
        return Err(PolytopeError::BadInput("initial point has the wrong length".into()));
    }
    let mut lp = prog.polytope.clone();
    let mut q = init;
    let mut grad = vec![0.0; n];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    barrier_newton(prog, &mut q);
    for iter in 0..=options.max_iters {
        prog.certificate_gradient(&q, &mut grad);
        lp.objective.copy_from_slice(&grad);
        let report = solve_lp_with(&lp, options.simplex)?;
        if report.status != SolveStatus::Optimal {
            return Err(match report.status {
                SolveStatus::Infeasible => {
                    PolytopeError::Infeasible("linearized subproblem".into())
                }
                _ => PolytopeError::IterationLimit,
            });
        }
        let s = report.values;
        // Tiny negative values are LP-tolerance noise on the certificate.
        gap = (dot(&grad, &s) - dot(&grad, &q)).max(0.0);
        if std::env::var_os("PLANFERENCE_FW_DEBUG").is_some() {
            eprintln!("fw iter {iter}: value {:.9} gap {:.3e}", prog.value(&q), gap);
        }
        if gap <= options.gap_tol {
            converged = true;
            iterations = iter;
            break;
        }
        if iter == options.max_iters {
            iterations = iter;
            break;
        }

        // Vertex step with exact line search, then polish on the new face.
        let d: Vec<f64> = s.iter().zip(&q).map(|(&si, &qi)| si - qi).collect();
        let gamma = line_search(prog, &q, &d, 1.0);
        for i in 0..n {
            q[i] = (q[i] + gamma * d[i]).max(0.0);
        }
        barrier_newton(prog, &mut q);
        iterations = iter + 1;
    }

    Ok(ConcaveSolveResult { value: prog.value(&q), gap, iterations, converged, point: q })
}

/// Builds the positive-risk concave planning bound of a factored MDP over
/// joint factor blocks, together with a strictly feasible starting point
/// (mean-field forward beliefs under uniform actions).
pub fn build_concave_planning(
    mdp: &FactoredMdp,
    lambda: f64,
) -> Result<(ConcaveProgram, Vec<f64>), PolytopeError> {
    if lambda <= 0.0 {
        return Err(PolytopeError::BadInput(
            "positive risk required; the additive limit is the factored LP".into(),
        ));
    }
    let horizon = mdp.horizon;
    let na = mdp.num_actions;
    let ne = mdp.num_entities();
    let mut p = LocalPolytopeProgram::new();

    // Joint factor blocks (cfg, a, child) with child fastest.
    let mut jb = vec![Vec::new(); ne];
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pcfg = mdp.parent_indexer(&d.parents).size();
        for t in 1..horizon {
            jb[i].push(p.add_block(format!("c_f{i}_t{t}"), pcfg * na * mdp.entities[i]));
        }
    }
    let mut ent = vec![Vec::new(); ne];
    for (j, e) in mdp.entities.iter().enumerate() {
        for t in 1..=horizon {
            ent[j].push(p.add_block(format!("c_e{j}_t{t}"), *e));
        }
    }
    let mut act = Vec::new();
    for t in 1..horizon {
        act.push(p.add_block(format!("c_a_t{t}"), na));
    }
    let mut rew = vec![Vec::new(); mdp.rewards.len()];
    for (r, rf) in mdp.rewards.iter().enumerate() {
        let pcfg = mdp.parent_indexer(&rf.parents).size();
        for t in rf.active_steps.steps(horizon) {
            rew[r].push((t, p.add_block(format!("c_r{r}_t{t}"), pcfg)));
        }
    }

    // Rows. The first-step entity blocks are only normalized: at positive
    // risk the optimal initial belief is a tilted version of the prior, which
    // enters through the objective below rather than a pinning constraint.
    for (j, init) in mdp.initial.iter().enumerate() {
        let coeffs = (0..init.len()).map(|v| (ent[j][0] + v, 1.0)).collect();
        p.add_row(format!("norm_e{j}_t1"), coeffs, 1.0);
    }
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pidx = mdp.parent_indexer(&d.parents);
        let card = mdp.entities[i];
        for t in 1..horizon {
            let off = jb[i][t - 1];
            // Child marginal ties the next-step entity block.
            for v in 0..card {
                let mut coeffs = vec![(ent[i][t] + v, 1.0)];
                for cfg in 0..pidx.size() {
                    for a in 0..na {
                        coeffs.push((off + (cfg * na + a) * card + v, -1.0));
                    }
                }
                p.add_row(format!("child_f{i}_t{t}_v{v}"), coeffs, 0.0);
            }
            // Parent consistency.
            for (pos, &k) in d.parents.iter().enumerate() {
                for v in 0..mdp.entities[k] {
                    let mut coeffs = Vec::new();
                    for cfg in 0..pidx.size() {
                        if pidx.digit(cfg, pos) == v {
                            for a in 0..na {
                                for c in 0..card {
                                    coeffs.push((off + (cfg * na + a) * card + c, 1.0));
                                }
                            }
                        }
                    }
                    coeffs.push((ent[k][t - 1] + v, -1.0));
                    p.add_row(format!("cons_f{i}_t{t}_e{k}_v{v}"), coeffs, 0.0);
                }
            }
            // Action consistency.
            for a in 0..na {
                let mut coeffs = Vec::new();
                for cfg in 0..pidx.size() {
                    for c in 0..card {
                        coeffs.push((off + (cfg * na + a) * card + c, 1.0));
                    }
                }
                coeffs.push((act[t - 1] + a, -1.0));
                p.add_row(format!("cons_f{i}_t{t}_a{a}"), coeffs, 0.0);
            }
        }
    }
    for (r, rf) in mdp.rewards.iter().enumerate() {
        let pidx = mdp.parent_indexer(&rf.parents);
        for &(t, off) in &rew[r] {
            for (pos, &k) in rf.parents.iter().enumerate() {
                for v in 0..mdp.entities[k] {
                    let mut coeffs = Vec::new();
                    for cfg in 0..pidx.size() {
                        if pidx.digit(cfg, pos) == v {
                            coeffs.push((off + cfg, 1.0));
                        }
                    }
                    coeffs.push((ent[k][t - 1] + v, -1.0));
                    p.add_row(format!("cons_r{r}_t{t}_e{k}_v{v}"), coeffs, 0.0);
                }
            }
        }
    }

    // Objective.
    let mut linear = vec![0.0; p.num_vars()];
    let mut entropies = Vec::new();
    let inv_lambda = 1.0 / lambda;
    // Initial-slice energy and entropy per entity.
    for (j, init) in mdp.initial.iter().enumerate() {
        for (v, &prob) in init.iter().enumerate() {
            linear[ent[j][0] + v] = if prob > 0.0 {
                inv_lambda * prob.ln()
            } else {
                -ZERO_SUPPORT_PENALTY
            };
        }
        entropies.push(EntropyTerm {
            weight: inv_lambda,
            assignments: (0..init.len()).map(|v| (ent[j][0] + v, v)).collect(),
            num_bins: init.len(),
        });
    }
    for (i, d) in mdp.dynamics.iter().enumerate() {
        let pidx = mdp.parent_indexer(&d.parents);
        let card = mdp.entities[i];
        for t in 1..horizon {
            let off = jb[i][t - 1];
            let len = pidx.size() * na * card;
            let mut joint = Vec::with_capacity(len);
            let mut marg = Vec::with_capacity(len);
            for cfg in 0..pidx.size() {
                for a in 0..na {
                    for c in 0..card {
                        let var = off + (cfg * na + a) * card + c;
                        let prob = d.cpt[(cfg * na + a) * card + c];
                        linear[var] = if prob > 0.0 {
                            inv_lambda * prob.ln()
                        } else {
                            -ZERO_SUPPORT_PENALTY
                        };
                        joint.push((var, (cfg * na + a) * card + c));
                        marg.push((var, cfg * na + a));
                    }
                }
            }
            entropies.push(EntropyTerm {
                weight: inv_lambda,
                assignments: joint,
                num_bins: len,
            });
            entropies.push(EntropyTerm {
                weight: -inv_lambda,
                assignments: marg,
                num_bins: pidx.size() * na,
            });
        }
    }
    for (r, rf) in mdp.rewards.iter().enumerate() {
        for &(_t, off) in &rew[r] {
            for (cfg, &val) in rf.table.iter().enumerate() {
                linear[off + cfg] += val;
            }
        }
    }

    // Mean-field forward starting point.
    let mut q0 = vec![0.0; p.num_vars()];
    let mut mu: Vec<Vec<f64>> = mdp.initial.clone();
    for (j, init) in mu.iter().enumerate() {
        for (v, &prob) in init.iter().enumerate() {
            q0[ent[j][0] + v] = prob;
        }
    }
    for t in 1..horizon {
        let mut next_mu: Vec<Vec<f64>> = mdp.entities.iter().map(|&c| vec![0.0; c]).collect();
        for (i, d) in mdp.dynamics.iter().enumerate() {
            let pidx = mdp.parent_indexer(&d.parents);
            let card = mdp.entities[i];
            let off = jb[i][t - 1];
            for cfg in 0..pidx.size() {
                let mut mass = 1.0;
                for (pos, &k) in d.parents.iter().enumerate() {
                    mass *= mu[k][pidx.digit(cfg, pos)];
                }
                for a in 0..na {
                    let amass = mass / na as f64;
                    for c in 0..card {
                        let prob = d.cpt[(cfg * na + a) * card + c];
                        let v = amass * prob;
                        q0[off + (cfg * na + a) * card + c] = v;
                        next_mu[i][c] += v;
                    }
                }
            }
        }
        for a in 0..na {
            q0[act[t - 1] + a] = 1.0 / na as f64;
        }
        for (j, m) in next_mu.iter().enumerate() {
            for (v, &prob) in m.iter().enumerate() {
                q0[ent[j][t] + v] = prob;
            }
        }
        mu = next_mu;
    }
    for (r, rf) in mdp.rewards.iter().enumerate() {
        let pidx = mdp.parent_indexer(&rf.parents);
        for &(t, off) in &rew[r] {
            // Occupancies at step t: recompute the forward pass up to t.
            let mut mu_t: Vec<Vec<f64>> = mdp.initial.clone();
            for step in 1..t {
                let mut next: Vec<Vec<f64>> =
                    mdp.entities.iter().map(|&c| vec![0.0; c]).collect();
                for (i, d) in mdp.dynamics.iter().enumerate() {
                    let pidx2 = mdp.parent_indexer(&d.parents);
                    let card = mdp.entities[i];
                    for cfg in 0..pidx2.size() {
                        let mut mass = 1.0;
                        for (pos, &k) in d.parents.iter().enumerate() {
                            mass *= mu_t[k][pidx2.digit(cfg, pos)];
                        }
                        for a in 0..na {
                            for c in 0..card {
                                next[i][c] +=
                                    mass / na as f64 * d.cpt[(cfg * na + a) * card + c];
                            }
                        }
                    }
                }
                let _ = step;
                mu_t = next;
            }
            for cfg in 0..pidx.size() {
                let mut mass = 1.0;
                for (pos, &k) in rf.parents.iter().enumerate() {
                    mass *= mu_t[k][pidx.digit(cfg, pos)];
                }
                q0[off + cfg] = mass;
            }
        }
    }

    Ok((ConcaveProgram { polytope: p, linear, entropies, constant: 0.0 }, q0))
}

/// Concave upper bound on the exponential utility of a factored MDP.
///
/// Returns the Frank-Wolfe point value and certified gap; the optimum of the
/// concave bound (itself an upper bound on the exact utility) lies within
/// `[value, value + gap]`.
pub fn solve_concave(
    mdp: &FactoredMdp,
    lambda: f64,
    options: FrankWolfeOptions,
) -> Result<ConcaveSolveResult, PolytopeError> {
    if lambda == 0.0 {
        let lp = super::build_factored_lp(mdp);
        let report = solve_lp_with(&lp, options.simplex)?;
        if report.status != SolveStatus::Optimal {
            return Err(match report.status {
                SolveStatus::Infeasible => PolytopeError::Infeasible("factored LP".into()),
                _ => PolytopeError::IterationLimit,
            });
        }
        return Ok(ConcaveSolveResult {
            value: report.objective,
            gap: report.dual_residual.max(0.0),
            iterations: report.iterations,
            converged: true,
            point: report.values,
        });
    }
    let (prog, init) = build_concave_planning(mdp, lambda)?;
    maximize_concave(&prog, init, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{plan_value_iteration, RiskParams};
    use crate::randgen::random_factored_binary;
    use crate::rng::Rng;

    #[test]
    fn single_entity_concave_bound_is_exact() {
        let mut rng = Rng::new(60);
        for trial in 0..5 {
            let m = random_factored_binary(&mut rng, 1, 2, 4);
            let flat = m.flatten(8).unwrap();
            for lambda in [0.3, 1.0] {
                let exact =
                    plan_value_iteration(&flat, RiskParams::new(lambda).unwrap()).value;
                let r = solve_concave(&m, lambda, FrankWolfeOptions::default()).unwrap();
                assert!(
                    (r.value - exact).abs() <= r.gap + 1e-5,
                    "trial {trial} lambda {lambda}: value {} gap {} exact {exact}",
                    r.value,
                    r.gap
                );
                assert!(r.upper_bound() >= exact - 1e-7);
            }
        }
    }

    #[test]
    fn zero_rewards_give_zero_bound() {
        let mut rng = Rng::new(61);
        let mut m = random_factored_binary(&mut rng, 2, 2, 3);
        for rf in m.rewards.iter_mut() {
            for v in rf.table.iter_mut() {
                *v = 0.0;
            }
        }
        let r = solve_concave(&m, 1.0, FrankWolfeOptions::default()).unwrap();
        assert!(r.value.abs() < 1e-6, "value {}", r.value);
        assert!(r.upper_bound().abs() < 2e-5);
    }

    #[test]
    fn concave_bound_dominates_exact_on_coupled_instances() {
        let mut rng = Rng::new(62);
        for trial in 0..8 {
            let m = random_factored_binary(&mut rng, 3, 2, 4);
            let flat = m.flatten(64).unwrap();
            let exact = plan_value_iteration(&flat, RiskParams::new(1.0).unwrap()).value;
            let r = solve_concave(&m, 1.0, FrankWolfeOptions::default()).unwrap();
            assert!(
                r.upper_bound() >= exact - 1e-7,
                "trial {trial}: ub {} < exact {exact}",
                r.upper_bound()
            );
        }
    }

    #[test]
    fn additive_limit_delegates_to_the_lp() {
        let mut rng = Rng::new(63);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let r = solve_concave(&m, 0.0, FrankWolfeOptions::default()).unwrap();
        let lp = super::super::solve_lp(&super::super::build_factored_lp(&m)).unwrap();
        assert!((r.value - lp.objective).abs() < 1e-9);
    }

    #[test]
    fn mean_field_start_is_feasible() {
        let mut rng = Rng::new(64);
        let m = random_factored_binary(&mut rng, 3, 2, 4);
        let (prog, init) = build_concave_planning(&m, 1.0).unwrap();
        let residual = super::super::simplex::max_residual(&prog.polytope.rows, &init);
        assert!(residual < 1e-12, "residual {residual}");
    }

    #[test]
    fn frank_wolfe_progress_is_monotone() {
        let mut rng = Rng::new(65);
        let m = random_factored_binary(&mut rng, 2, 2, 3);
        let (prog, init) = build_concave_planning(&m, 1.0).unwrap();
        // Run with increasing budgets; value must not decrease.
        let mut last = f64::NEG_INFINITY;
        for iters in [1, 3, 10, 50] {
            let opts = FrankWolfeOptions { max_iters: iters, ..Default::default() };
            let r = maximize_concave(&prog, init.clone(), opts).unwrap();
            assert!(r.value >= last - 1e-9, "budget {iters}: {} < {last}", r.value);
            last = r.value;
        }
    }
}
