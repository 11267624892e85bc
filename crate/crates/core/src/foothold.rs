//! Foothold optimization for swing legs, swing-trajectory generation and
//! grounded-wheel motion references.

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{solve_qp, QpSolution, QuadProblem};
use crate::Leg;

#[derive(Debug, Clone, Error)]
pub enum FootholdError {
    #[error("no swing legs scheduled in the horizon")]
    NoSwingLegs,
    #[error("swing duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("foothold QP failed: {0}")]
    Qp(#[from] crate::qp::QpError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FootholdConfig {
    /// Cost (a): deviation from the default foothold under the hip.
    pub weight_default: f64,
    /// Cost (b): deviation from the velocity-projected foothold.
    pub weight_velocity: f64,
    /// Cost (c): deviation from the previous solution.
    pub weight_previous: f64,
    /// Cost (d): inverted-pendulum stabilizing target.
    pub weight_pendulum: f64,
    /// Inverted-pendulum gain on the COM velocity error.
    pub pendulum_gain: f64,
    /// Minimum distance between any two feet (m).
    pub min_separation: f64,
    /// Maximum hip-to-foothold distance (m).
    pub max_reach: f64,
    /// Swing apex height above the liftoff-target line (m).
    pub swing_height: f64,
}

impl Default for FootholdConfig {
    fn default() -> FootholdConfig {
        FootholdConfig {
            weight_default: 1.0,
            weight_velocity: 1.0,
            weight_previous: 0.5,
            weight_pendulum: 1.0,
            pendulum_gain: 0.3,
            min_separation: 0.12,
            max_reach: 0.62,
            swing_height: 0.08,
        }
    }
}

/// Expected foothold after τ seconds under constant commanded velocity and
/// yaw rate: the exact integral of ṗ = Rz(ω t)·v from p0. The z component
/// is carried through unchanged.
pub fn expected_foothold(
    p0: &Vector3<f64>,
    v_ref: &Vector3<f64>,
    yaw_rate: f64,
    tau: f64,
) -> Vector3<f64> {
    let xy = expected_displacement_2d(Vector2::new(v_ref.x, v_ref.y), yaw_rate, tau);
    Vector3::new(p0.x + xy.x, p0.y + xy.y, p0.z)
}

/// ∫₀^τ Rz(ω t) v dt for a planar velocity v.
pub fn expected_displacement_2d(v: Vector2<f64>, yaw_rate: f64, tau: f64) -> Vector2<f64> {
    if yaw_rate.abs() < 1e-6 {
        return v * tau;
    }
    let a = yaw_rate * tau;
    let (s, c) = a.sin_cos();
    Vector2::new(
        (s * v.x - (1.0 - c) * v.y) / yaw_rate,
        ((1.0 - c) * v.x + s * v.y) / yaw_rate,
    )
}

// ---------------------------------------------------------------------------
// Swing trajectories

/// Quintic polynomial segment on [0, duration].
#[derive(Debug, Clone)]
pub struct QuinticSegment {
    /// Per-axis coefficients, highest power first: p(s) = Σ c[i] s^(5-i).
    pub coefficients: [Vector6<f64>; 3],
    pub duration: f64,
}

fn quintic_basis(s: f64, derivative: usize) -> Vector6<f64> {
    let powers = [5i32, 4, 3, 2, 1, 0];
    let mut out = Vector6::zeros();
    for (i, &p) in powers.iter().enumerate() {
        let mut coeff = 1.0;
        let mut power = p;
        for _ in 0..derivative {
            coeff *= power as f64;
            power -= 1;
        }
        if power >= 0 {
            out[i] = coeff * s.powi(power);
        }
    }
    out
}

impl QuinticSegment {
    /// Segment matching position/velocity/acceleration at both ends.
    pub fn from_boundary(
        duration: f64,
        start: (Vector3<f64>, Vector3<f64>, Vector3<f64>),
        end: (Vector3<f64>, Vector3<f64>, Vector3<f64>),
    ) -> QuinticSegment {
        let t = duration;
        let mut a = Matrix6::zeros();
        for (r, (s, d)) in [(0.0, 0usize), (0.0, 1), (0.0, 2), (t, 0), (t, 1), (t, 2)]
            .iter()
            .enumerate()
        {
            a.set_row(r, &quintic_basis(*s, *d).transpose());
        }
        let lu = a.lu();
        let mut coefficients = [Vector6::zeros(); 3];
        for axis in 0..3 {
            let rhs = Vector6::new(
                start.0[axis],
                start.1[axis],
                start.2[axis],
                end.0[axis],
                end.1[axis],
                end.2[axis],
            );
            coefficients[axis] = lu.solve(&rhs).expect("quintic system is nonsingular");
        }
        QuinticSegment {
            coefficients,
            duration,
        }
    }

    pub fn evaluate(&self, s: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let b0 = quintic_basis(s, 0);
        let b1 = quintic_basis(s, 1);
        let b2 = quintic_basis(s, 2);
        let mut p = Vector3::zeros();
        let mut v = Vector3::zeros();
        let mut a = Vector3::zeros();
        for axis in 0..3 {
            p[axis] = self.coefficients[axis].dot(&b0);
            v[axis] = self.coefficients[axis].dot(&b1);
            a[axis] = self.coefficients[axis].dot(&b2);
        }
        (p, v, a)
    }
}

/// Two quintic segments from liftoff through an apex to touchdown, with zero
/// end velocities and accelerations.
#[derive(Debug, Clone)]
pub struct SwingTrajectory {
    pub segments: [QuinticSegment; 2],
    pub duration: f64,
    pub apex_height: f64,
}

/// Fit the swing spline. `up` is the direction in which the apex is lifted
/// (the terrain normal in plan-frame coordinates, i.e. +z).
pub fn swing_trajectory(
    liftoff: &Vector3<f64>,
    target: &Vector3<f64>,
    duration: f64,
    apex_height: f64,
    up: &Vector3<f64>,
) -> Result<SwingTrajectory, FootholdError> {
    if duration <= 0.0 {
        return Err(FootholdError::NonPositiveDuration(duration));
    }
    let apex = 0.5 * (liftoff + target) + up * apex_height;
    let v_mid = (target - liftoff) / duration;
    let zero = Vector3::zeros();
    let half = duration / 2.0;
    let first = QuinticSegment::from_boundary(half, (*liftoff, zero, zero), (apex, v_mid, zero));
    let second = QuinticSegment::from_boundary(half, (apex, v_mid, zero), (*target, zero, zero));
    Ok(SwingTrajectory {
        segments: [first, second],
        duration,
        apex_height,
    })
}

impl SwingTrajectory {
    /// Evaluate at swing time s ∈ [0, duration]; out-of-range times clamp to
    /// the endpoints.
    pub fn evaluate(&self, s: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let s = s.clamp(0.0, self.duration);
        let half = self.duration / 2.0;
        if s <= half {
            self.segments[0].evaluate(s)
        } else {
            self.segments[1].evaluate(s - half)
        }
    }
}

// ---------------------------------------------------------------------------
// Driving references

/// Desired motion of a grounded wheel contact point, plan frame.
#[derive(Debug, Clone, Copy)]
pub struct DrivingReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Reference for a grounded leg: the rigid-body velocity field of the
/// commanded twist (about the plan-frame origin) evaluated at the measured
/// contact point and projected onto the rolling direction. The position
/// reference integrates from the measured contact point, so it equals it at
/// the current instant; the acceleration is zero for piecewise-constant
/// commands.
pub fn driving_contact_reference(
    contact_point_plan: &Vector3<f64>,
    rolling_direction_plan: &Vector3<f64>,
    v_ref: &Vector3<f64>,
    yaw_rate: f64,
) -> DrivingReference {
    let omega = Vector3::new(0.0, 0.0, yaw_rate);
    let field = v_ref + omega.cross(contact_point_plan);
    let velocity = rolling_direction_plan * field.dot(rolling_direction_plan);
    DrivingReference {
        position: *contact_point_plan,
        velocity,
        acceleration: Vector3::zeros(),
    }
}

// ---------------------------------------------------------------------------
// Foothold QP

/// Per-leg inputs to the foothold QP, all in plan-frame xy coordinates.
#[derive(Debug, Clone)]
pub struct LegFootholdInput {
    pub leg: Leg,
    /// Default foothold: hip projected onto the terrain along the normal.
    pub default_xy: Vector2<f64>,
    /// Velocity-projected foothold at touchdown.
    pub velocity_xy: Vector2<f64>,
    /// Previous optimized target, if any.
    pub previous_xy: Option<Vector2<f64>>,
    /// Inverted-pendulum stabilized target.
    pub pendulum_xy: Vector2<f64>,
    /// Center of the kinematic reach disc (hip projection).
    pub reach_center_xy: Vector2<f64>,
    /// Radius of the reach disc on the terrain plane.
    pub reach_radius: f64,
}

#[derive(Debug, Clone)]
pub struct FootholdSolution {
    /// Optimized xy per input leg, in input order.
    pub targets: Vec<Vector2<f64>>,
    /// True if the QP was infeasible and targets fell back to clipped
    /// defaults.
    pub degraded: bool,
    /// The final QP solution (reach cuts appended last), when one exists.
    pub qp: Option<QpSolution>,
}

/// Jointly optimize the xy coordinates of the given swing-leg footholds.
///
/// Costs pull each foothold toward its default, velocity-projected,
/// previous and pendulum targets; linearized separation constraints keep
/// feet apart (including against stance feet) and iterative cutting planes
/// enforce the circular kinematic reach of each leg.
pub fn optimize_footholds(
    inputs: &[LegFootholdInput],
    stance_xy: &[(Leg, Vector2<f64>)],
    cfg: &FootholdConfig,
) -> Result<FootholdSolution, FootholdError> {
    if inputs.is_empty() {
        return Err(FootholdError::NoSwingLegs);
    }
    let n = 2 * inputs.len();
    let mut hessian = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    for (k, input) in inputs.iter().enumerate() {
        let mut add_target = |w: f64, target: &Vector2<f64>| {
            if w <= 0.0 {
                return;
            }
            for axis in 0..2 {
                hessian[(2 * k + axis, 2 * k + axis)] += w;
                gradient[2 * k + axis] -= w * target[axis];
            }
        };
        add_target(cfg.weight_default, &input.default_xy);
        add_target(cfg.weight_velocity, &input.velocity_xy);
        if let Some(prev) = &input.previous_xy {
            add_target(cfg.weight_previous, prev);
        }
        add_target(cfg.weight_pendulum, &input.pendulum_xy);
    }
    // Keep the problem strictly convex even with all weights zeroed in tests.
    for i in 0..n {
        hessian[(i, i)] += 1e-9;
    }

    // Separation constraints linearized along the default-position directions.
    let mut ineq_rows: Vec<DVector<f64>> = Vec::new();
    let mut ineq_rhs: Vec<f64> = Vec::new();
    let direction = |a: &Vector2<f64>, b: &Vector2<f64>| -> Vector2<f64> {
        let d = a - b;
        if d.norm() > 1e-9 {
            d / d.norm()
        } else {
            Vector2::new(1.0, 0.0)
        }
    };
    for i in 0..inputs.len() {
        for j in (i + 1)..inputs.len() {
            let u = direction(&inputs[i].default_xy, &inputs[j].default_xy);
            let mut row = DVector::zeros(n);
            row[2 * i] = -u.x;
            row[2 * i + 1] = -u.y;
            row[2 * j] = u.x;
            row[2 * j + 1] = u.y;
            ineq_rows.push(row);
            ineq_rhs.push(-cfg.min_separation);
        }
        for (_, fixed) in stance_xy {
            let u = direction(&inputs[i].default_xy, fixed);
            let mut row = DVector::zeros(n);
            row[2 * i] = -u.x;
            row[2 * i + 1] = -u.y;
            ineq_rows.push(row);
            ineq_rhs.push(-cfg.min_separation - u.dot(fixed));
        }
    }

    let clip = |p: Vector2<f64>, input: &LegFootholdInput| -> Vector2<f64> {
        let d = p - input.reach_center_xy;
        let norm = d.norm();
        if norm > input.reach_radius {
            input.reach_center_xy + d * (input.reach_radius / norm)
        } else {
            p
        }
    };

    // Iterative cutting planes for the circular reach constraints.
    let mut cuts: Vec<(usize, Vector2<f64>)> = Vec::new();
    let mut last_solution: Option<QpSolution> = None;
    for _ in 0..12 {
        let m = ineq_rows.len() + cuts.len();
        let mut ineq_matrix = DMatrix::zeros(m, n);
        let mut rhs = DVector::zeros(m);
        for (r, (row, b)) in ineq_rows.iter().zip(&ineq_rhs).enumerate() {
            ineq_matrix.row_mut(r).copy_from(&row.transpose());
            rhs[r] = *b;
        }
        for (extra, (k, u)) in cuts.iter().enumerate() {
            let r = ineq_rows.len() + extra;
            ineq_matrix[(r, 2 * k)] = u.x;
            ineq_matrix[(r, 2 * k + 1)] = u.y;
            rhs[r] = u.dot(&inputs[*k].reach_center_xy) + inputs[*k].reach_radius;
        }
        let problem = QuadProblem {
            hessian: hessian.clone(),
            gradient: gradient.clone(),
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix,
            ineq_rhs: rhs,
        };
        let solution = match solve_qp(&problem) {
            Ok(s) => s,
            Err(_) => {
                // Conflicting reach/collision constraints: fall back to the
                // default foothold clipped into the reach disc.
                let targets = inputs
                    .iter()
                    .map(|input| clip(input.default_xy, input))
                    .collect();
                return Ok(FootholdSolution {
                    targets,
                    degraded: true,
                    qp: None,
                });
            }
        };

        let mut added = false;
        for (k, input) in inputs.iter().enumerate() {
            let p = Vector2::new(solution.x[2 * k], solution.x[2 * k + 1]);
            let d = p - input.reach_center_xy;
            if d.norm() > input.reach_radius + 1e-10 {
                cuts.push((k, d / d.norm()));
                added = true;
            }
        }
        if !added {
            let targets = (0..inputs.len())
                .map(|k| Vector2::new(solution.x[2 * k], solution.x[2 * k + 1]))
                .collect();
            return Ok(FootholdSolution {
                targets,
                degraded: false,
                qp: Some(solution),
            });
        }
        last_solution = Some(solution);
    }
    // Cutting planes did not settle; keep the last iterate, clipped.
    let solution = last_solution.expect("at least one QP solve");
    let targets = inputs
        .iter()
        .enumerate()
        .map(|(k, input)| clip(Vector2::new(solution.x[2 * k], solution.x[2 * k + 1]), input))
        .collect();
    Ok(FootholdSolution {
        targets,
        degraded: true,
        qp: Some(solution),
    })
}
