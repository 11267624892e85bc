//! Sequential quadratic programming for the COM motion plan.
//!
//! The objective is exactly quadratic in the spline coefficients; only the
//! ZMP constraint (bilinear in position and acceleration after multiplying
//! through by the gravito-inertial denominator) is linearized, so the SQP
//! iterates a small number of Gauss-Newton QPs with an l1-merit line search.

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    eta, evaluate_spline, Edge, MotionPlan, PlanDiagnostics, SplineCoefficients,
    SupportPolygonPhase, SPLINE_COEFFS,
};
use crate::foothold::expected_displacement_2d;
use crate::qp::{solve_qp, QpError, QuadProblem};
use crate::terrain::PlanFrame;

#[derive(Debug, Clone, Error)]
pub enum PlannerError {
    #[error("support polygon sequence is empty")]
    NoPolygons,
    #[error("QP subproblem failed even with softened ZMP constraints: {0}")]
    Qp(#[from] QpError),
    #[error("plan evaluation failed: {0}")]
    Plan(#[from] super::ZmpError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Horizon while driving (s); gaits use stride × horizon_stride_factor.
    pub horizon_driving: f64,
    pub horizon_stride_factor: f64,
    /// ZMP/push samples per spline (endpoints included).
    pub samples_per_spline: usize,
    /// Minimum normal push acceleration, m/s².
    pub push_margin: f64,
    pub weight_acceleration: f64,
    pub weight_previous: f64,
    pub weight_path: f64,
    pub weight_path_velocity: f64,
    pub weight_initial: f64,
    pub weight_final: f64,
    pub weight_z_overshoot: f64,
    /// Quadratic penalty on softened initial ZMP slacks.
    pub zmp_soft_weight: f64,
    /// Samples earlier than this after the plan start are softened (s).
    pub zmp_soft_window: f64,
    /// Tightening pad on hard ZMP constraints (m-scale margin units).
    pub zmp_margin_pad: f64,
    pub max_sqp_iterations: usize,
    pub merit_penalty: f64,
    /// Nominal COM height above the terrain plane (m).
    pub nominal_height: f64,
    /// Width of the degenerate two-stance support band (m).
    pub line_width: f64,
    /// Planner update rate (Hz).
    pub rate: f64,
}

impl Default for PlannerConfig {
    fn default() -> PlannerConfig {
        PlannerConfig {
            horizon_driving: 1.0,
            horizon_stride_factor: 1.2,
            samples_per_spline: 5,
            push_margin: 1.0,
            weight_acceleration: 1e-2,
            weight_previous: 0.5,
            weight_path: 10.0,
            weight_path_velocity: 2.0,
            weight_initial: 1e4,
            weight_final: 1e2,
            weight_z_overshoot: 1e3,
            zmp_soft_weight: 1e3,
            zmp_soft_window: 0.1,
            zmp_margin_pad: 2e-4,
            max_sqp_iterations: 3,
            merit_penalty: 1e4,
            nominal_height: 0.5,
            line_width: 0.04,
            rate: 100.0,
        }
    }
}

/// Inputs to one planning cycle, all in the (new) plan frame.
#[derive(Debug, Clone)]
pub struct MotionProblem<'a> {
    pub start_time: f64,
    pub com_position: Vector3<f64>,
    pub com_velocity: Vector3<f64>,
    pub polygons: Vec<SupportPolygonPhase>,
    pub gravity_plan: Vector3<f64>,
    pub mass: f64,
    /// Commanded planar velocity in the plan frame.
    pub v_ref: Vector2<f64>,
    pub yaw_rate: f64,
    pub plan_frame: PlanFrame,
    pub previous: Option<&'a MotionPlan>,
}

struct Sample {
    segment: usize,
    /// Plan-local time.
    t: f64,
    /// Local time within the polygon phase.
    s: f64,
    soft: bool,
    edges: Vec<Edge>,
}

/// ∫ η̈ η̈ᵀ dt over [a, b], closed form.
pub(crate) fn acceleration_gram(a: f64, b: f64) -> Matrix6<f64> {
    let c = [20.0, 12.0, 6.0, 2.0];
    let e = [3i32, 2, 1, 0];
    let mut g = Matrix6::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let p = e[i] + e[j] + 1;
            g[(i, j)] = c[i] * c[j] * (b.powi(p) - a.powi(p)) / p as f64;
        }
    }
    g
}

struct Objective {
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
}

impl Objective {
    fn new(n: usize) -> Objective {
        Objective {
            hessian: DMatrix::zeros(n, n),
            gradient: DVector::zeros(n),
        }
    }

    /// Add w‖η·α_axis − target‖² for one axis of one segment.
    fn add_axis_sample(&mut self, segment: usize, axis: usize, basis: &Vector6<f64>, w: f64, target: f64) {
        if w <= 0.0 {
            return;
        }
        let off = SPLINE_COEFFS * segment + 6 * axis;
        for i in 0..6 {
            for j in 0..6 {
                self.hessian[(off + i, off + j)] += w * basis[i] * basis[j];
            }
            self.gradient[off + i] -= w * basis[i] * target;
        }
    }

    fn add_gram(&mut self, segment: usize, axis: usize, gram: &Matrix6<f64>, w: f64) {
        let off = SPLINE_COEFFS * segment + 6 * axis;
        for i in 0..6 {
            for j in 0..6 {
                self.hessian[(off + i, off + j)] += w * gram[(i, j)];
            }
        }
    }

    fn value(&self, xi: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * xi).dot(xi) + self.gradient.dot(xi)
    }
}

/// The deformed-edge ZMP constraint value Q(ξ) at one sample for one edge;
/// the stability constraint is Q <= 0 (the denominator sign is fixed by the
/// push constraint).
pub(crate) fn zmp_constraint_value(
    edge: &Edge,
    p: &Vector3<f64>,
    acc: &Vector3<f64>,
    gravity: &Vector3<f64>,
) -> f64 {
    let w = gravity - acc;
    edge.p * (p.x * w.z - w.x * p.z) + edge.q * (p.y * w.z - w.y * p.z) + edge.r * w.z
}

/// Analytic gradient of Q with respect to the 18 segment coefficients.
pub(crate) fn zmp_constraint_gradient(
    edge: &Edge,
    p: &Vector3<f64>,
    acc: &Vector3<f64>,
    gravity: &Vector3<f64>,
    t: f64,
) -> SplineCoefficients {
    let w = gravity - acc;
    let dq_dp = Vector3::new(
        edge.p * w.z,
        edge.q * w.z,
        -(edge.p * w.x + edge.q * w.y),
    );
    let dq_dw = Vector3::new(
        -edge.p * p.z,
        -edge.q * p.z,
        edge.p * p.x + edge.q * p.y + edge.r,
    );
    let b0 = eta(t, 0);
    let b2 = eta(t, 2);
    let mut grad = SplineCoefficients::zeros();
    for axis in 0..3 {
        for i in 0..6 {
            // ∂p/∂α = η, ∂w/∂α = -η̈.
            grad[6 * axis + i] = b0[i] * dq_dp[axis] - b2[i] * dq_dw[axis];
        }
    }
    grad
}

pub fn solve_motion_plan(
    problem: &MotionProblem,
    cfg: &PlannerConfig,
) -> Result<MotionPlan, PlannerError> {
    let t_start = std::time::Instant::now();
    if problem.polygons.is_empty() {
        return Err(PlannerError::NoPolygons);
    }
    let k_segments = problem.polygons.len();
    let n_xi = SPLINE_COEFFS * k_segments;
    let durations: Vec<f64> = problem.polygons.iter().map(|p| p.duration).collect();
    let horizon: f64 = durations.iter().sum();
    let starts: Vec<f64> = {
        let mut acc = 0.0;
        durations
            .iter()
            .map(|d| {
                let s = acc;
                acc += d;
                s
            })
            .collect()
    };

    // Reference path: constant-command integration at nominal height.
    let path = |t: f64| -> Vector3<f64> {
        let d = expected_displacement_2d(problem.v_ref, problem.yaw_rate, t);
        Vector3::new(
            problem.com_position.x + d.x,
            problem.com_position.y + d.y,
            cfg.nominal_height,
        )
    };
    let path_velocity = |t: f64| -> Vector3<f64> {
        let (s, c) = (problem.yaw_rate * t).sin_cos();
        Vector3::new(
            c * problem.v_ref.x - s * problem.v_ref.y,
            s * problem.v_ref.x + c * problem.v_ref.y,
            0.0,
        )
    };

    // Sample grid.
    let ns = cfg.samples_per_spline.max(2);
    let mut samples: Vec<Sample> = Vec::new();
    for (k, phase) in problem.polygons.iter().enumerate() {
        for i in 0..ns {
            let frac = i as f64 / (ns - 1) as f64;
            let t = starts[k] + frac * durations[k];
            let s = frac * durations[k];
            let edges = (0..phase.edges.len())
                .map(|e| phase.edge_at(e, s))
                .collect();
            samples.push(Sample {
                segment: k,
                t,
                s,
                soft: t < cfg.zmp_soft_window,
                edges,
            });
        }
    }

    // Quadratic objective over ξ.
    let mut objective = Objective::new(n_xi);
    for k in 0..k_segments {
        let gram = acceleration_gram(starts[k], starts[k] + durations[k]);
        for axis in 0..3 {
            objective.add_gram(k, axis, &gram, cfg.weight_acceleration);
        }
    }
    for sample in &samples {
        let b0 = eta(sample.t, 0);
        let b1 = eta(sample.t, 1);
        let target = path(sample.t);
        let target_v = path_velocity(sample.t);
        for axis in 0..3 {
            let w_extra = if axis == 2 { cfg.weight_z_overshoot } else { 0.0 };
            objective.add_axis_sample(
                sample.segment,
                axis,
                &b0,
                cfg.weight_path + w_extra,
                target[axis],
            );
            objective.add_axis_sample(
                sample.segment,
                axis,
                &b1,
                cfg.weight_path_velocity,
                target_v[axis],
            );
        }
        if let Some(prev) = problem.previous {
            let abs = problem.start_time + sample.t;
            let clamped = abs.clamp(prev.start_time, prev.start_time + prev.horizon);
            if let Ok((p_prev, _, _)) = prev.evaluate(clamped) {
                let p_world = prev.plan_frame.to_world(&p_prev);
                let p_new = problem.plan_frame.to_plan(&p_world);
                for axis in 0..3 {
                    objective.add_axis_sample(
                        sample.segment,
                        axis,
                        &b0,
                        cfg.weight_previous,
                        p_new[axis],
                    );
                }
            }
        }
    }
    // Initial and final conditions (soft, linear-quadratic).
    {
        let b0 = eta(0.0, 0);
        let b1 = eta(0.0, 1);
        for axis in 0..3 {
            objective.add_axis_sample(0, axis, &b0, cfg.weight_initial, problem.com_position[axis]);
            objective.add_axis_sample(0, axis, &b1, cfg.weight_initial, problem.com_velocity[axis]);
        }
        let bt0 = eta(horizon, 0);
        let bt1 = eta(horizon, 1);
        let pf = path(horizon);
        let vf = path_velocity(horizon);
        for axis in 0..3 {
            objective.add_axis_sample(k_segments - 1, axis, &bt0, cfg.weight_final, pf[axis]);
            objective.add_axis_sample(k_segments - 1, axis, &bt1, cfg.weight_final, vf[axis]);
        }
    }

    // Junction equality constraints: position, velocity, acceleration.
    let n_junctions = k_segments.saturating_sub(1);
    let mut eq_matrix = DMatrix::zeros(9 * n_junctions, n_xi);
    for j in 0..n_junctions {
        let tj = starts[j + 1];
        for d in 0..3 {
            let basis = eta(tj, d);
            for axis in 0..3 {
                let row = 9 * j + 3 * d + axis;
                for i in 0..6 {
                    eq_matrix[(row, SPLINE_COEFFS * j + 6 * axis + i)] = basis[i];
                    eq_matrix[(row, SPLINE_COEFFS * (j + 1) + 6 * axis + i)] = -basis[i];
                }
            }
        }
    }
    // The junction constraints are always active, so the SQP works in their
    // null space: every iterate satisfies continuity by construction and the
    // per-iteration QPs carry no equality constraints at all.
    let z_basis = if n_junctions > 0 {
        crate::qp::null_space_basis(&eq_matrix)
    } else {
        DMatrix::identity(n_xi, n_xi)
    };
    let n_w = z_basis.ncols();
    let hessian_w = z_basis.transpose() * &objective.hessian * &z_basis;
    let junction_projector = if n_junctions > 0 {
        (&eq_matrix * eq_matrix.transpose()).cholesky()
    } else {
        None
    };

    // Warm start: refit the previous plan into the new segment structure, or
    // hold the current COM (constant-height rest trajectory on cold starts).
    let mut xi = DVector::zeros(n_xi);
    for k in 0..k_segments {
        let coeffs = match problem.previous {
            Some(prev) => {
                let sample_fn = |t_plan: f64| -> Vector3<f64> {
                    let abs = problem.start_time + t_plan;
                    let clamped = abs.clamp(prev.start_time, prev.start_time + prev.horizon);
                    match prev.evaluate(clamped) {
                        Ok((p, _, _)) => problem.plan_frame.to_plan(&prev.plan_frame.to_world(&p)),
                        Err(_) => problem.com_position,
                    }
                };
                fit_segment(starts[k], durations[k], sample_fn)
            }
            None => {
                let mut c = SplineCoefficients::zeros();
                for axis in 0..3 {
                    c[6 * axis + 5] = problem.com_position[axis];
                }
                c
            }
        };
        xi.rows_mut(SPLINE_COEFFS * k, SPLINE_COEFFS).copy_from(&coeffs);
    }

    if let Some(chol) = &junction_projector {
        for _ in 0..2 {
            let resid = &eq_matrix * &xi;
            xi -= eq_matrix.transpose() * chol.solve(&resid);
        }
    }

    // Merit function: objective plus l1 penalty on hard constraint violations
    // and the quadratic soft penalty.
    let merit = |xi: &DVector<f64>| -> f64 {
        let mut value = objective.value(xi);
        for sample in &samples {
            let coeffs = SplineCoefficients::from_column_slice(
                xi.rows(SPLINE_COEFFS * sample.segment, SPLINE_COEFFS).as_slice(),
            );
            let (p, _, a) = evaluate_spline(&coeffs, sample.t);
            let push = (a.z - problem.gravity_plan.z) - cfg.push_margin;
            value += cfg.merit_penalty * (-push).max(0.0);
            for edge in &sample.edges {
                let q = zmp_constraint_value(edge, &p, &a, &problem.gravity_plan);
                if sample.soft {
                    value += cfg.zmp_soft_weight * q.max(0.0).powi(2);
                } else {
                    value += cfg.merit_penalty * (q + cfg.zmp_margin_pad).max(0.0);
                }
            }
        }
        if n_junctions > 0 {
            let resid = &eq_matrix * xi;
            value += cfg.merit_penalty * resid.abs().sum();
        }
        value
    };

    let mut merit_history = vec![merit(&xi)];
    let mut degraded = false;
    let mut all_soft = false;
    let mut converged = false;
    let mut iterations = 0;

    'sqp: for _ in 0..cfg.max_sqp_iterations {
        iterations += 1;
        // Assemble the QP around the current iterate.
        let soft_ids: Vec<usize> = samples
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                let soft = s.soft || all_soft;
                s.edges
                    .iter()
                    .enumerate()
                    .filter_map(move |(ei, _)| if soft { Some(si * 64 + ei) } else { None })
            })
            .collect();
        let n_soft = soft_ids.len();
        let n_total = n_w + n_soft;

        let mut hessian = DMatrix::zeros(n_total, n_total);
        hessian.view_mut((0, 0), (n_w, n_w)).copy_from(&hessian_w);
        for s in 0..n_soft {
            hessian[(n_w + s, n_w + s)] = cfg.zmp_soft_weight;
        }
        for i in 0..n_total {
            hessian[(i, i)] += 1e-10;
        }
        // Objective gradient around the current iterate: ξ = ξ_it + Z w.
        let grad_xi = &objective.gradient + &objective.hessian * &xi;
        let mut gradient = DVector::zeros(n_total);
        gradient
            .rows_mut(0, n_w)
            .copy_from(&(z_basis.transpose() * grad_xi));

        let reduce_row = |off: usize, dense: &[f64]| -> DVector<f64> {
            // Zᵀ row for a row supported on one segment's 18 coefficients.
            let mut out = DVector::zeros(n_w);
            for w in 0..n_w {
                let mut acc = 0.0;
                for (i, v) in dense.iter().enumerate() {
                    acc += v * z_basis[(off + i, w)];
                }
                out[w] = acc;
            }
            out
        };

        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut soft_cursor = 0;
        for sample in &samples {
            let off = SPLINE_COEFFS * sample.segment;
            let coeffs =
                SplineCoefficients::from_column_slice(xi.rows(off, SPLINE_COEFFS).as_slice());
            let (p, _, a) = evaluate_spline(&coeffs, sample.t);
            // Push constraint: -z̈(ξ_it + Zw) <= -(a_min + g_z).
            let b2 = eta(sample.t, 2);
            let mut dense = [0.0; SPLINE_COEFFS];
            for i in 0..6 {
                dense[12 + i] = -b2[i];
            }
            let mut row = DVector::zeros(n_total);
            row.rows_mut(0, n_w).copy_from(&reduce_row(off, &dense));
            rows.push(row);
            rhs.push(-(cfg.push_margin + problem.gravity_plan.z) + a.z);

            let soft = sample.soft || all_soft;
            for edge in &sample.edges {
                let q0 = zmp_constraint_value(edge, &p, &a, &problem.gravity_plan);
                let grad = zmp_constraint_gradient(edge, &p, &a, &problem.gravity_plan, sample.t);
                let mut row = DVector::zeros(n_total);
                row.rows_mut(0, n_w)
                    .copy_from(&reduce_row(off, grad.as_slice()));
                let mut bound = -cfg.zmp_margin_pad - q0;
                if soft {
                    row[n_w + soft_cursor] = -1.0;
                    soft_cursor += 1;
                    bound = -q0;
                }
                rows.push(row);
                rhs.push(bound);
            }
        }
        let mut ineq_matrix = DMatrix::zeros(rows.len(), n_total);
        let mut ineq_rhs = DVector::zeros(rows.len());
        for (r, (row, b)) in rows.iter().zip(&rhs).enumerate() {
            ineq_matrix.row_mut(r).copy_from(&row.transpose());
            ineq_rhs[r] = *b;
        }

        let qp = QuadProblem {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, n_total),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs,
        };
        let solution = match solve_qp(&qp) {
            Ok(s) => s,
            Err(_) if !all_soft => {
                // Relax: soften every ZMP sample once and retry this iterate.
                all_soft = true;
                degraded = true;
                iterations -= 1;
                continue 'sqp;
            }
            Err(e) => return Err(PlannerError::Qp(e)),
        };
        let candidate = &xi + &z_basis * solution.x.rows(0, n_w);

        // Backtracking on the merit function.
        let current = *merit_history.last().unwrap();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut alpha = 1.0;
        for _ in 0..4 {
            let trial = &xi * (1.0 - alpha) + &candidate * alpha;
            let m = merit(&trial);
            if best.as_ref().map_or(true, |(bm, _)| m < *bm) {
                best = Some((m, trial));
            }
            alpha *= 0.5;
        }
        let (best_merit, best_xi) = best.unwrap();
        if best_merit > current - 1e-12 {
            converged = true;
            break;
        }
        let step = (&best_xi - &xi).abs().max();
        xi = best_xi;
        merit_history.push(best_merit);
        if step < 1e-10 {
            converged = true;
            break;
        }
    }
    if iterations == cfg.max_sqp_iterations {
        // Ran out of iterations; the best feasible iterate is kept.
        converged = converged || merit_history.len() > 1;
    }

    // The QP satisfies the junction equalities only to its numerical
    // precision, which degrades with the large soft-constraint weights.
    // Project the iterate exactly onto the junction subspace (a
    // minimum-norm correction of the order of the solver tolerance).
    if n_junctions > 0 {
        let gram = &eq_matrix * eq_matrix.transpose();
        if let Some(chol) = gram.cholesky() {
            for _ in 0..2 {
                let resid = &eq_matrix * &xi;
                let correction = eq_matrix.transpose() * chol.solve(&resid);
                xi -= correction;
            }
        }
    }

    let coefficients: Vec<SplineCoefficients> = (0..k_segments)
        .map(|k| SplineCoefficients::from_column_slice(xi.rows(SPLINE_COEFFS * k, SPLINE_COEFFS).as_slice()))
        .collect();

    // Diagnostics: junction continuity and recomputed nonlinear margins.
    let mut max_junction_residual = 0.0f64;
    for j in 0..n_junctions {
        let tj = starts[j + 1];
        let left = evaluate_spline(&coefficients[j], tj);
        let right = evaluate_spline(&coefficients[j + 1], tj);
        max_junction_residual = max_junction_residual
            .max((left.0 - right.0).abs().max())
            .max((left.1 - right.1).abs().max())
            .max((left.2 - right.2).abs().max());
    }
    let gi = super::GravitoInertial {
        mass: problem.mass,
        gravity: problem.gravity_plan,
    };
    let mut min_hard_margin = f64::INFINITY;
    let mut min_sample_margin = f64::INFINITY;
    let mut max_soft_slack = 0.0f64;
    for sample in &samples {
        let (p, _, a) = evaluate_spline(&coefficients[sample.segment], sample.t);
        let Ok(zmp) = super::zmp_position(&p, &a, &nalgebra::Vector3::z_axis(), &gi) else {
            min_sample_margin = f64::NEG_INFINITY;
            continue;
        };
        let xy = Vector2::new(zmp.x, zmp.y);
        let margin = sample
            .edges
            .iter()
            .enumerate()
            .map(|(e, _)| problem.polygons[sample.segment].edge_at(e, sample.s).margin(&xy))
            .fold(f64::INFINITY, f64::min);
        min_sample_margin = min_sample_margin.min(margin);
        if sample.soft || all_soft {
            max_soft_slack = max_soft_slack.max((-margin).max(0.0));
        } else {
            min_hard_margin = min_hard_margin.min(margin);
        }
    }

    Ok(MotionPlan {
        start_time: problem.start_time,
        horizon,
        durations,
        coefficients,
        plan_frame: problem.plan_frame.clone(),
        polygons: problem.polygons.clone(),
        previous_solution: problem.previous.map(|p| p.coefficients.clone()),
        mass: problem.mass,
        gravity_plan: problem.gravity_plan,
        diagnostics: PlanDiagnostics {
            sqp_iterations: iterations,
            converged,
            degraded,
            max_junction_residual,
            min_hard_margin,
            min_sample_margin,
            max_soft_slack,
            merit_history,
            wall_time_ms: t_start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Fit one quintic segment to a sampled trajectory (6 collocation points).
fn fit_segment(
    start: f64,
    duration: f64,
    sample: impl Fn(f64) -> Vector3<f64>,
) -> SplineCoefficients {
    let mut a = Matrix6::zeros();
    let mut targets = [Vector6::zeros(); 3];
    for i in 0..6 {
        let t = start + duration * i as f64 / 5.0;
        a.set_row(i, &eta(t, 0).transpose());
        let p = sample(t);
        for axis in 0..3 {
            targets[axis][i] = p[axis];
        }
    }
    let lu = a.lu();
    let mut coeffs = SplineCoefficients::zeros();
    for axis in 0..3 {
        if let Some(sol) = lu.solve(&targets[axis]) {
            for i in 0..6 {
                coeffs[6 * axis + i] = sol[i];
            }
        }
    }
    coeffs
}
