//! Dense convex quadratic programming.
//!
//! `solve_qp` implements the Goldfarb-Idnani dual active-set method for
//! strictly convex problems
//!
//! ```text
//!     minimize    1/2 xᵀ H x + gᵀ x
//!     subject to  C_E x  = d_E
//!                 C_I x <= d_I
//! ```
//!
//! Equality constraints are inserted into the active set first and never
//! leave it. The solver is deterministic: identical inputs produce
//! bit-identical iterates and active sets.

mod hierarchy;

pub use hierarchy::{
    null_space_basis, solve_hierarchy, HierarchyError, HierarchySolution, LevelOutcome,
    TaskLevel, DEFAULT_REGULARIZATION,
};

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Active-set change cap per solve.
pub const MAX_ACTIVE_SET_CHANGES: usize = 200;

#[derive(Debug, Clone)]
pub struct QuadProblem {
    /// Symmetric positive semidefinite cost matrix (n×n).
    pub hessian: DMatrix<f64>,
    /// Linear cost term (n).
    pub gradient: DVector<f64>,
    /// Equality constraints `eq_matrix * x = eq_rhs`.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// Inequality constraints `ineq_matrix * x <= ineq_rhs`.
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadProblem {
    /// Unconstrained problem.
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> QuadProblem {
        let n = gradient.len();
        QuadProblem {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    fn check_dims(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::Dimensions(format!(
                "hessian is {}x{}, expected {}x{}",
                self.hessian.nrows(),
                self.hessian.ncols(),
                n,
                n
            )));
        }
        let sym_err = (&self.hessian - self.hessian.transpose()).abs().max();
        let scale = 1.0 + self.hessian.abs().max();
        if sym_err > 1e-12 * scale {
            return Err(QpError::Dimensions(format!(
                "hessian is not symmetric (max asymmetry {sym_err:.3e})"
            )));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(QpError::Dimensions("equality block mismatch".into()));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(QpError::Dimensions("inequality block mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of active inequality constraints, ascending.
    pub active_set: Vec<usize>,
    /// Objective value of the original problem at `x`.
    pub objective: f64,
    /// Multipliers for the equality constraints.
    pub eq_multipliers: DVector<f64>,
    /// Multipliers for all inequality constraints (zero if inactive, >= 0).
    pub ineq_multipliers: DVector<f64>,
    /// Number of active-set changes performed.
    pub iterations: usize,
}

#[derive(Debug, Clone, Error)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimensions(String),
    #[error("constraints are infeasible (constraint {constraint}, violation {violation:.3e})")]
    Infeasible { constraint: usize, violation: f64 },
    #[error("active-set iteration limit exceeded after {iterations} changes (worst violation {violation:.3e})")]
    MaxIterations { iterations: usize, violation: f64 },
    #[error("hessian is not positive definite even after regularization")]
    NotPositiveDefinite,
}

struct Workspace {
    n: usize,
    /// J = L⁻ᵀ Q, updated with Givens rotations as constraints enter/leave.
    j_mat: DMatrix<f64>,
    /// Upper-triangular R of the QR factorization of L⁻¹ Nᵀ_active.
    r_mat: DMatrix<f64>,
    /// Active internal constraint indices.
    active: Vec<usize>,
    /// Multipliers of the active constraints.
    u: Vec<f64>,
}

impl Workspace {
    fn q(&self) -> usize {
        self.active.len()
    }

    /// Rotate columns (i-1, i) of J by the Givens rotation (c, s).
    fn rotate_j(&mut self, i: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let a = self.j_mat[(row, i - 1)];
            let b = self.j_mat[(row, i)];
            self.j_mat[(row, i - 1)] = c * a + s * b;
            self.j_mat[(row, i)] = -s * a + c * b;
        }
    }

    /// Append a constraint whose transformed normal is `d`; returns false if
    /// the normal is linearly dependent on the active set.
    fn add_constraint(&mut self, index: usize, multiplier: f64, d: &mut DVector<f64>) -> bool {
        let q = self.q();
        if q >= self.n {
            return false;
        }
        for i in (q + 1..self.n).rev() {
            let a = d[i - 1];
            let b = d[i];
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let c = a / rho;
            let s = b / rho;
            d[i - 1] = rho;
            d[i] = 0.0;
            self.rotate_j(i, c, s);
        }
        if d[q] == 0.0 {
            return false;
        }
        for row in 0..=q {
            self.r_mat[(row, q)] = d[row];
        }
        self.active.push(index);
        self.u.push(multiplier);
        true
    }

    /// Remove the l-th active constraint and restore the factorization.
    fn drop_constraint(&mut self, l: usize) {
        let q = self.q();
        for col in l..q - 1 {
            for row in 0..self.n {
                self.r_mat[(row, col)] = self.r_mat[(row, col + 1)];
            }
        }
        for row in 0..self.n {
            self.r_mat[(row, q - 1)] = 0.0;
        }
        // Re-triangularize: after the shift, column j has a spurious entry in
        // row j+1.
        for j in l..q - 1 {
            let a = self.r_mat[(j, j)];
            let b = self.r_mat[(j + 1, j)];
            if b != 0.0 {
                let rho = a.hypot(b);
                let c = a / rho;
                let s = b / rho;
                for col in j..q - 1 {
                    let top = self.r_mat[(j, col)];
                    let bot = self.r_mat[(j + 1, col)];
                    self.r_mat[(j, col)] = c * top + s * bot;
                    self.r_mat[(j + 1, col)] = -s * top + c * bot;
                }
                self.rotate_j(j + 1, c, s);
            }
        }
        self.active.remove(l);
        self.u.remove(l);
    }

    /// Solve R[..q,..q] r = d[..q].
    fn dual_direction(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for j in i + 1..q {
                acc -= self.r_mat[(i, j)] * r[j];
            }
            r[i] = acc / self.r_mat[(i, i)];
        }
        r
    }
}

/// Solve a strictly convex QP with the Goldfarb-Idnani dual method.
///
/// A rank-deficient Hessian is regularized internally by adding the smallest
/// diagonal bump (powers of 100 from 1e-14 of the diagonal scale) that makes
/// the Cholesky factorization succeed.
pub fn solve_qp(problem: &QuadProblem) -> Result<QpSolution, QpError> {
    problem.check_dims()?;
    let n = problem.n_vars();
    let meq = problem.eq_rhs.len();
    let mine = problem.ineq_rhs.len();
    let n_total = meq + mine;

    // Internal form: n_iᵀ x >= b_i. Equalities keep their row (sign flipped on
    // demand), inequalities C x <= d become -C x >= -d.
    let mut normals = DMatrix::zeros(n_total, n);
    let mut rhs = DVector::zeros(n_total);
    let mut eq_sign = vec![1.0; meq];
    for i in 0..meq {
        normals.row_mut(i).copy_from(&problem.eq_matrix.row(i));
        rhs[i] = problem.eq_rhs[i];
    }
    for i in 0..mine {
        for c in 0..n {
            normals[(meq + i, c)] = -problem.ineq_matrix[(i, c)];
        }
        rhs[meq + i] = -problem.ineq_rhs[i];
    }

    let chol = regularized_cholesky(&problem.hessian)?;
    // Unconstrained minimum and J = L⁻ᵀ.
    let x0 = -&problem.gradient;
    let mut x = chol.solve(&x0);
    let mut j_mat = DMatrix::identity(n, n);
    chol.l().transpose().solve_upper_triangular_mut(&mut j_mat);

    let mut ws = Workspace {
        n,
        j_mat,
        r_mat: DMatrix::zeros(n, n),
        active: Vec::new(),
        u: Vec::new(),
    };

    let scale = 1.0
        + rhs.abs().max().max(problem.gradient.abs().max())
        + problem.hessian.abs().max();
    let tol = 1e-11 * scale;
    // Constraint satisfaction is judged on the constraint scale, not the
    // Hessian scale, so large task weights cannot loosen feasibility.
    let tol_feas = 1e-11 * (1.0 + rhs.abs().max());
    let mut changes = 0usize;
    // Degenerate corners can leave a constraint violated at round-off scale
    // with no feasible or dual step; such constraints are accepted as
    // satisfied instead of failing the solve.
    let tol_accept = |b: f64| 1e-8 * (1.0 + b.abs());
    let mut skipped: Vec<usize> = Vec::new();

    let mut pending: Vec<usize> = (0..meq).collect();
    loop {
        let p = if let Some(p) = pending.first().copied() {
            pending.remove(0);
            p
        } else {
            // Most violated inequality; ties broken by the lowest index.
            let mut worst = -tol_feas;
            let mut pick = None;
            for i in meq..n_total {
                if ws.active.contains(&i) || skipped.contains(&i) {
                    continue;
                }
                let s = normals.row(i).dot(&x.transpose()) - rhs[i];
                if s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
            match pick {
                Some(p) => p,
                None => break,
            }
        };

        let is_eq = p < meq;
        let mut s = normals.row(p).dot(&x.transpose()) - rhs[p];
        if is_eq {
            if s.abs() <= tol_feas {
                // Already satisfied: pin it with a zero multiplier so later
                // constraints cannot push it off. A linearly dependent row
                // cannot enter the factorization and is consistent, so it is
                // skipped.
                let np: DVector<f64> = normals.row(p).transpose();
                let mut d_add = ws.j_mat.transpose() * &np;
                let q = ws.q();
                let dep_norm: f64 = (q..n).map(|i| d_add[i] * d_add[i]).sum::<f64>().sqrt();
                if dep_norm > tol {
                    ws.add_constraint(p, 0.0, &mut d_add);
                }
                continue;
            }
            if s > 0.0 {
                eq_sign[p] = -1.0;
                for c in 0..n {
                    normals[(p, c)] = -normals[(p, c)];
                }
                rhs[p] = -rhs[p];
                s = -s;
            }
        }

        let mut u_plus = 0.0;
        loop {
            let np: DVector<f64> = normals.row(p).transpose();
            let d = ws.j_mat.transpose() * &np;
            let q = ws.q();
            let r = ws.dual_direction(&d);

            // Partial step: first active inequality blocking the dual update.
            let mut t1 = f64::INFINITY;
            let mut l_drop = None;
            for (k, rk) in r.iter().enumerate() {
                if ws.active[k] >= meq && *rk > tol {
                    let cand = ws.u[k] / rk;
                    if cand < t1 {
                        t1 = cand;
                        l_drop = Some(k);
                    }
                }
            }

            // Full step along the projected direction z.
            let mut ztn = 0.0;
            for i in q..n {
                ztn += d[i] * d[i];
            }
            let (t2, z) = if ztn > tol * tol {
                let mut z = DVector::zeros(n);
                for i in q..n {
                    z.axpy(d[i], &ws.j_mat.column(i).clone_owned(), 1.0);
                }
                ((-s) / ztn, Some(z))
            } else {
                (f64::INFINITY, None)
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                if !is_eq && -s <= tol_accept(rhs[p]) {
                    skipped.push(p);
                    break;
                }
                return Err(QpError::Infeasible {
                    constraint: p,
                    violation: -s,
                });
            }

            changes += 1;
            if changes > MAX_ACTIVE_SET_CHANGES {
                return Err(QpError::MaxIterations {
                    iterations: changes,
                    violation: -s,
                });
            }

            if let Some(z) = &z {
                if t == t2 {
                    x.axpy(t, z, 1.0);
                    for (k, rk) in r.iter().enumerate() {
                        ws.u[k] -= t * rk;
                    }
                    u_plus += t;
                    let mut d_add = d.clone();
                    ws.add_constraint(p, u_plus, &mut d_add);
                    break;
                }
                x.axpy(t, z, 1.0);
                s += t * ztn;
            }
            for (k, rk) in r.iter().enumerate() {
                ws.u[k] -= t * rk;
            }
            u_plus += t;
            ws.drop_constraint(l_drop.expect("finite partial step implies a blocking constraint"));
            if s.abs() <= tol_feas {
                if u_plus > 0.0 {
                    // Constraint became exactly satisfied during the dual
                    // steps; register it with its accumulated multiplier.
                    let np: DVector<f64> = normals.row(p).transpose();
                    let mut d_add = ws.j_mat.transpose() * &np;
                    ws.add_constraint(p, u_plus, &mut d_add);
                }
                break;
            }
        }
    }

    let mut eq_multipliers = DVector::zeros(meq);
    let mut ineq_multipliers = DVector::zeros(mine);
    for (k, &idx) in ws.active.iter().enumerate() {
        if idx < meq {
            // Internal form is sign·(A x - b) >= 0 with multiplier u >= 0;
            // stationarity H x + g + Aᵀν = 0 gives ν = -sign·u.
            eq_multipliers[idx] = -eq_sign[idx] * ws.u[k];
        } else {
            ineq_multipliers[idx - meq] = ws.u[k];
        }
    }
    let mut active_set: Vec<usize> = ws
        .active
        .iter()
        .filter(|&&i| i >= meq)
        .map(|&i| i - meq)
        .collect();
    active_set.sort_unstable();

    let mut solution = QpSolution {
        x,
        active_set,
        objective: 0.0,
        eq_multipliers,
        ineq_multipliers,
        iterations: changes,
    };
    // The dual iteration finishes within a factorization-conditioned
    // tolerance; polish the final active set with a KKT solve and iterative
    // refinement so feasibility and stationarity reach the constraint scale.
    refine_on_active_set(problem, &mut solution);
    solution.objective =
        0.5 * (&problem.hessian * &solution.x).dot(&solution.x) + problem.gradient.dot(&solution.x);
    debug_assert!(
        kkt_residual(problem, &solution) <= 1e-7 * scale,
        "KKT residual {:.3e} exceeds tolerance (scale {:.3e}; n = {}, meq = {}, mineq = {}, |H| = {:.3e}, |g| = {:.3e}, active = {:?})",
        kkt_residual(problem, &solution),
        scale,
        n,
        meq,
        mine,
        problem.hessian.abs().max(),
        problem.gradient.abs().max(),
        solution.active_set
    );
    Ok(solution)
}

/// Solve the equality-constrained KKT system of the converged active set
/// with LU plus iterative refinement, keeping the result only if it improves
/// the KKT residual.
fn refine_on_active_set(problem: &QuadProblem, solution: &mut QpSolution) {
    let n = problem.n_vars();
    let meq = problem.eq_rhs.len();
    let act = &solution.active_set;
    let m = meq + act.len();
    if m == 0 {
        return;
    }
    let dim = n + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    rhs.rows_mut(0, n).copy_from(&(-&problem.gradient));
    for i in 0..meq {
        for c in 0..n {
            kkt[(n + i, c)] = problem.eq_matrix[(i, c)];
            kkt[(c, n + i)] = problem.eq_matrix[(i, c)];
        }
        rhs[n + i] = problem.eq_rhs[i];
    }
    for (k, &ci) in act.iter().enumerate() {
        for c in 0..n {
            kkt[(n + meq + k, c)] = problem.ineq_matrix[(ci, c)];
            kkt[(c, n + meq + k)] = problem.ineq_matrix[(ci, c)];
        }
        rhs[n + meq + k] = problem.ineq_rhs[ci];
    }
    let lu = kkt.clone().lu();
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n).copy_from(&solution.x);
    for i in 0..meq {
        z[n + i] = solution.eq_multipliers[i];
    }
    for (k, &ci) in act.iter().enumerate() {
        z[n + meq + k] = solution.ineq_multipliers[ci];
    }
    for _ in 0..3 {
        let residual = &rhs - &kkt * &z;
        let Some(delta) = lu.solve(&residual) else {
            return;
        };
        z += delta;
    }
    let candidate = QpSolution {
        x: z.rows(0, n).into_owned(),
        active_set: solution.active_set.clone(),
        objective: solution.objective,
        eq_multipliers: z.rows(n, meq).into_owned(),
        ineq_multipliers: {
            let mut mu = DVector::zeros(problem.ineq_rhs.len());
            for (k, &ci) in act.iter().enumerate() {
                mu[ci] = z[n + meq + k];
            }
            mu
        },
        iterations: solution.iterations,
    };
    if kkt_residual(problem, &candidate) < kkt_residual(problem, solution) {
        *solution = candidate;
    }
}

fn regularized_cholesky(h: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, QpError> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok(c);
    }
    let scale = h.diagonal().abs().max().max(1.0);
    let mut bump = 1e-14 * scale;
    while bump <= 1e-4 * scale {
        let mut reg = h.clone();
        for i in 0..h.nrows() {
            reg[(i, i)] += bump;
        }
        if let Some(c) = Cholesky::new(reg) {
            return Ok(c);
        }
        bump *= 100.0;
    }
    Err(QpError::NotPositiveDefinite)
}

/// Infinity-norm KKT residual (stationarity, feasibility, complementarity).
pub fn kkt_residual(problem: &QuadProblem, solution: &QpSolution) -> f64 {
    let mut grad = &problem.hessian * &solution.x + &problem.gradient;
    if problem.eq_rhs.len() > 0 {
        grad += problem.eq_matrix.transpose() * &solution.eq_multipliers;
    }
    if problem.ineq_rhs.len() > 0 {
        grad += problem.ineq_matrix.transpose() * &solution.ineq_multipliers;
    }
    let mut worst: f64 = grad.abs().max();
    if problem.eq_rhs.len() > 0 {
        worst = worst.max((&problem.eq_matrix * &solution.x - &problem.eq_rhs).abs().max());
    }
    for i in 0..problem.ineq_rhs.len() {
        let slack = problem.ineq_rhs[i] - problem.ineq_matrix.row(i).dot(&solution.x.transpose());
        worst = worst.max(-slack);
        worst = worst.max((solution.ineq_multipliers[i] * slack).abs());
        worst = worst.max(-solution.ineq_multipliers[i]);
    }
    worst
}

#[cfg(test)]
mod tests;
