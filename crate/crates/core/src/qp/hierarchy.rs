//! Strict-priority cascade of weighted least-squares tasks.
//!
//! Each level minimizes its own weighted equality residual plus the norm of
//! slacks on its inequality tasks, subject to every higher-priority equality
//! task pinned at its achieved residual vector and every higher-priority
//! inequality kept at its optimal slack.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{solve_qp, QpError, QuadProblem};

/// One priority level: equality task `A x = b` and inequality task
/// `D x <= f`, both with positive diagonal row weights.
#[derive(Debug, Clone)]
pub struct TaskLevel {
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub eq_weights: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub ineq_weights: DVector<f64>,
    /// Enforce this level's inequalities exactly (slacks pinned at zero)
    /// instead of minimizing slack norms. An infeasible hard level fails the
    /// solve instead of relaxing.
    pub hard_inequalities: bool,
}

impl TaskLevel {
    pub fn equality(a: DMatrix<f64>, b: DVector<f64>) -> TaskLevel {
        let n = a.ncols();
        let w = DVector::from_element(b.len(), 1.0);
        TaskLevel {
            eq_matrix: a,
            eq_rhs: b,
            eq_weights: w,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            ineq_weights: DVector::zeros(0),
            hard_inequalities: false,
        }
    }

    pub fn with_inequality(mut self, d: DMatrix<f64>, f: DVector<f64>) -> TaskLevel {
        self.ineq_weights = DVector::from_element(f.len(), 1.0);
        self.ineq_matrix = d;
        self.ineq_rhs = f;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.eq_matrix.ncols().max(self.ineq_matrix.ncols())
    }

    fn validate(&self, n: usize) -> Result<(), HierarchyError> {
        let eq_ok = self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.eq_weights.len() == self.eq_rhs.len();
        let ineq_ok = self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_rhs.len()
            && self.ineq_weights.len() == self.ineq_rhs.len();
        if !eq_ok || !ineq_ok {
            return Err(HierarchyError::Dimensions);
        }
        if self.eq_weights.iter().any(|w| *w <= 0.0)
            || self.ineq_weights.iter().any(|w| *w <= 0.0)
        {
            return Err(HierarchyError::NonPositiveWeight);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LevelOutcome {
    /// Unweighted equality residual vector A x* - b.
    pub eq_residual: DVector<f64>,
    /// Weighted residual norm ‖W (A x* - b)‖.
    pub eq_residual_norm: f64,
    /// Optimal inequality slacks max(D x* - f, 0).
    pub slacks: DVector<f64>,
    /// Active set of the per-level QP (internal constraint indices).
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HierarchySolution {
    pub x: DVector<f64>,
    pub levels: Vec<LevelOutcome>,
}

#[derive(Debug, Clone, Error)]
pub enum HierarchyError {
    #[error("hierarchy has no levels")]
    Empty,
    #[error("task level dimensions are inconsistent")]
    Dimensions,
    #[error("task weights must be positive")]
    NonPositiveWeight,
    #[error("QP at priority level {level} failed: {source}")]
    LevelFailed {
        level: usize,
        #[source]
        source: QpError,
    },
}

/// Default Hessian regularization added at every cascade level.
pub const DEFAULT_REGULARIZATION: f64 = 1e-8;

/// Orthonormal basis of the null space of the given rows (n × (n - rank)).
pub fn null_space_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.ncols();
    let mut pinned = PinnedSet { rows: Vec::new() };
    for r in 0..rows.nrows() {
        pinned.insert(&rows.row(r).transpose());
    }
    pinned.null_space(n)
}

/// Orthonormal basis of the pinned row directions. Lower levels optimize in
/// the orthogonal complement, so pinned quantities are preserved by
/// construction rather than through equality constraints.
struct PinnedSet {
    rows: Vec<DVector<f64>>,
}

impl PinnedSet {
    fn insert(&mut self, row: &DVector<f64>) {
        let mut a = row.clone();
        for _ in 0..2 {
            for q in &self.rows {
                let c = a.dot(q);
                a.axpy(-c, q, 1.0);
            }
        }
        let norm = a.norm();
        if norm > 1e-10 * (1.0 + row.norm()) {
            self.rows.push(a / norm);
        }
    }

    /// Orthonormal basis of the complement: Gram-Schmidt of the coordinate
    /// directions against the pinned rows, largest residuals first.
    fn null_space(&self, n: usize) -> DMatrix<f64> {
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - self.rows.len().min(n));
        // Rank the candidate axes by their residual against the pinned span
        // so the completion stays well conditioned.
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                for q in &self.rows {
                    e.axpy(-q[i], q, 1.0);
                }
                (e.norm(), i)
            })
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in candidates {
            if basis.len() + self.rows.len() >= n {
                break;
            }
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            for _ in 0..2 {
                for q in &self.rows {
                    let c = e.dot(q);
                    e.axpy(-c, q, 1.0);
                }
                for z in &basis {
                    let c = e.dot(z);
                    e.axpy(-c, z, 1.0);
                }
            }
            let norm = e.norm();
            if norm > 1e-8 {
                basis.push(e / norm);
            }
        }
        let mut z = DMatrix::zeros(n, basis.len());
        for (c, v) in basis.iter().enumerate() {
            z.set_column(c, v);
        }
        z
    }
}

pub fn solve_hierarchy(
    levels: &[TaskLevel],
    regularization: f64,
) -> Result<HierarchySolution, HierarchyError> {
    let first = levels.first().ok_or(HierarchyError::Empty)?;
    let n = first.n_vars();
    for level in levels {
        level.validate(n)?;
    }

    let mut pinned = PinnedSet { rows: Vec::new() };
    let mut frozen_rows: Vec<DVector<f64>> = Vec::new();
    let mut frozen_rhs: Vec<f64> = Vec::new();
    let mut x = DVector::zeros(n);
    let mut outcomes: Vec<LevelOutcome> = Vec::with_capacity(levels.len());

    for (idx, level) in levels.iter().enumerate() {
        // Optimize x = x_prev + Z w in the complement of the pinned span:
        // higher-priority residuals are preserved identically and w = 0 is
        // always feasible.
        let z = if pinned.rows.is_empty() {
            DMatrix::identity(n, n)
        } else {
            pinned.null_space(n)
        };
        let nw = z.ncols();
        let m = if level.hard_inequalities {
            0
        } else {
            level.ineq_rhs.len()
        };
        let dim = nw + m;

        let mut hessian = DMatrix::zeros(dim, dim);
        let mut gradient = DVector::zeros(dim);
        if level.eq_rhs.len() > 0 {
            let mut aw = level.eq_matrix.clone();
            for r in 0..aw.nrows() {
                let w = level.eq_weights[r];
                for c in 0..n {
                    aw[(r, c)] *= w;
                }
            }
            let bw = level.eq_rhs.component_mul(&level.eq_weights);
            let awz = &aw * &z;
            let residual0 = &aw * &x - bw;
            hessian
                .view_mut((0, 0), (nw, nw))
                .copy_from(&(awz.transpose() * &awz));
            gradient
                .rows_mut(0, nw)
                .copy_from(&(awz.transpose() * residual0));
        }
        for k in 0..m {
            let w = level.ineq_weights[k];
            hessian[(nw + k, nw + k)] = w * w;
        }
        for i in 0..dim {
            hessian[(i, i)] += regularization;
        }

        let n_frozen = frozen_rows.len();
        let n_own = level.ineq_rhs.len();
        let mut ineq_matrix = DMatrix::zeros(n_frozen + n_own, dim);
        let mut ineq_rhs = DVector::zeros(n_frozen + n_own);
        for (r, (row, rhs)) in frozen_rows.iter().zip(&frozen_rhs).enumerate() {
            let row_w = z.transpose() * row;
            ineq_matrix
                .view_mut((r, 0), (1, nw))
                .copy_from(&row_w.transpose());
            ineq_rhs[r] = rhs - row.dot(&x);
        }
        for k in 0..n_own {
            let row: DVector<f64> = level.ineq_matrix.row(k).transpose();
            let row_w = z.transpose() * &row;
            ineq_matrix
                .view_mut((n_frozen + k, 0), (1, nw))
                .copy_from(&row_w.transpose());
            if !level.hard_inequalities {
                ineq_matrix[(n_frozen + k, nw + k)] = -1.0;
            }
            ineq_rhs[n_frozen + k] = level.ineq_rhs[k] - row.dot(&x);
        }

        let problem = QuadProblem {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, dim),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs,
        };
        let sol = solve_qp(&problem)
            .map_err(|source| HierarchyError::LevelFailed { level: idx + 1, source })?;
        x += &z * sol.x.rows(0, nw);

        // Freeze this level: equality rows join the pinned span; its
        // inequalities are kept at their recomputed optimal slacks so that x
        // stays feasible for every later level, with rows at their bound
        // (the level's active set) pinned outright.
        for r in 0..level.eq_rhs.len() {
            pinned.insert(&level.eq_matrix.row(r).transpose());
        }
        let mut slacks = DVector::zeros(n_own);
        for k in 0..n_own {
            let row: DVector<f64> = level.ineq_matrix.row(k).transpose();
            let value = row.dot(&x);
            let violation = value - level.ineq_rhs[k];
            slacks[k] = violation.max(0.0);
            let bound = level.ineq_rhs[k] + slacks[k];
            if bound - value < 1e-9 * (1.0 + level.ineq_rhs[k].abs()) {
                pinned.insert(&row);
            } else {
                frozen_rows.push(row);
                frozen_rhs.push(bound);
            }
        }

        outcomes.push(LevelOutcome {
            eq_residual: DVector::zeros(0),
            eq_residual_norm: 0.0,
            slacks,
            active_set: sol.active_set,
        });
    }

    // Residuals reported from the final x; higher-priority residual vectors
    // are unchanged by construction.
    for (level, outcome) in levels.iter().zip(outcomes.iter_mut()) {
        let residual = &level.eq_matrix * &x - &level.eq_rhs;
        outcome.eq_residual_norm = residual.component_mul(&level.eq_weights).norm();
        outcome.eq_residual = residual;
    }

    Ok(HierarchySolution { x, levels: outcomes })
}
