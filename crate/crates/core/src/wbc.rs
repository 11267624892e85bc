//! Hierarchical whole-body controller: builds the prioritized task stack
//! over ξ = [u̇; λ], solves it as a strict cascade and extracts joint
//! torques from the actuated rows of the equations of motion.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::rotation_error;
use crate::model::{
    com_acceleration_bias, com_jacobian, com_state, contact_jacobian, point_acceleration_bias,
    point_velocity, rolling_contact_acceleration, wheel_contact_point, Attachment,
    DynamicsTerms, GeneralizedState, KinematicData, ModelError, RobotModel,
};
use crate::qp::{solve_hierarchy, HierarchyError, TaskLevel};
use crate::terrain::{contact_frame, PlanFrame, TerrainPlane};
use crate::Leg;

#[derive(Debug, Clone, Error)]
pub enum WbcError {
    #[error("missing references for scheduled swing leg {0}")]
    MissingSwingReference(Leg),
    #[error("whole-body controller needs at least 2 contacts, got {0}")]
    TooFewContacts(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hierarchy failed: {0}")]
    Hierarchy(#[from] HierarchyError),
    #[error("terrain frame failed: {0}")]
    Terrain(#[from] crate::terrain::TerrainError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WbcConfig {
    /// Swing/ground leg tracking gains.
    pub kp_leg: f64,
    pub kd_leg: f64,
    /// COM linear tracking gains.
    pub kp_com: f64,
    pub kd_com: f64,
    /// Base orientation tracking gains.
    pub kp_base: f64,
    pub kd_base: f64,
    /// Swing-wheel rotation damping gain.
    pub kd_wheel: f64,
    /// Friction coefficient for the contact pyramid.
    pub friction: f64,
    /// Row weight of the priority-1 equality tasks.
    pub weight_dynamics: f64,
    pub weight_com: f64,
    pub weight_base: f64,
    pub weight_swing: f64,
    pub weight_wheel_damping: f64,
    pub weight_ground: f64,
    pub weight_force_minimization: f64,
    /// Cascade Hessian regularization.
    pub regularization: f64,
    /// Controller rate (Hz).
    pub rate: f64,
}

impl Default for WbcConfig {
    fn default() -> WbcConfig {
        WbcConfig {
            kp_leg: 100.0,
            kd_leg: 20.0,
            kp_com: 50.0,
            kd_com: 10.0,
            kp_base: 50.0,
            kd_base: 10.0,
            kd_wheel: 2.0,
            friction: 0.7,
            weight_dynamics: 100.0,
            weight_com: 1.0,
            weight_base: 1.0,
            weight_swing: 1.0,
            weight_wheel_damping: 0.2,
            weight_ground: 1.0,
            weight_force_minimization: 1.0,
            regularization: 1e-8,
            rate: 400.0,
        }
    }
}

/// Operational-space reference for one leg's contact point, plan frame.
#[derive(Debug, Clone, Copy)]
pub struct LegReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// COM reference in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ComReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Everything the controller needs for one tick.
pub struct WbcInput<'a> {
    pub model: &'a RobotModel,
    pub state: &'a GeneralizedState,
    pub kd: &'a KinematicData,
    pub terms: &'a DynamicsTerms,
    pub plane: &'a TerrainPlane,
    pub plan_frame: &'a PlanFrame,
    pub com: ComReference,
    pub base_orientation_ref: UnitQuaternion<f64>,
    /// Commanded base angular velocity, base frame.
    pub base_angular_velocity_ref: Vector3<f64>,
    /// References for swinging legs (plan frame); one entry per swing leg.
    pub swing: Vec<(Leg, LegReference)>,
    /// References for grounded legs (plan frame).
    pub ground: Vec<(Leg, LegReference)>,
}

#[derive(Debug, Clone)]
pub struct WbcSolution {
    pub u_dot: DVector<f64>,
    /// Contact forces stacked per contact leg in leg order (world frame).
    pub lambda: DVector<f64>,
    /// Joint torques (16).
    pub torques: DVector<f64>,
    /// ‖J_S u̇* - rolling_rhs‖∞.
    pub rolling_residual: f64,
    /// Floating-base EoM residual ∞-norm with (u̇*, λ*, τ).
    pub eom_residual: f64,
    pub level_residuals: Vec<f64>,
    /// Worst friction-pyramid violation (negative slack) of λ*.
    pub friction_violation: f64,
    pub solve_time_ms: f64,
}

/// Right side of the rolling equality for one contact leg:
/// -J̇_C u + the rolling contact acceleration.
pub fn rolling_rhs(
    model: &RobotModel,
    kd: &KinematicData,
    state: &GeneralizedState,
    plane: &TerrainPlane,
    leg: Leg,
) -> Result<Vector3<f64>, ModelError> {
    let point = wheel_contact_point(model, kd, leg, plane)?;
    let drift = point_acceleration_bias(&model.tree, kd, state, model.leg(leg).wheel, &point);
    let centripetal = rolling_contact_acceleration(model, kd, state, plane, leg)?;
    Ok(centripetal - drift)
}

/// Scale each row of (A, b) to unit norm so the cascade weights act on
/// commensurate quantities.
fn normalize_rows(a: &mut DMatrix<f64>, b: &mut DVector<f64>) {
    for r in 0..a.nrows() {
        let norm = a.row(r).norm();
        if norm > 1e-12 {
            for c in 0..a.ncols() {
                a[(r, c)] /= norm;
            }
            b[r] /= norm;
        }
    }
}

struct StackBundle {
    levels: Vec<TaskLevel>,
    /// Unnormalized rolling constraint (for residual reporting).
    rolling_matrix: DMatrix<f64>,
    rolling_rhs: DVector<f64>,
    /// Friction pyramid rows over λ only (for post-hoc checks).
    friction_matrix: DMatrix<f64>,
}

/// Build the three priority levels of the controller.
///
/// Priority 1: floating-base dynamics, torque limits, friction pyramids and
/// the nonholonomic rolling constraint. Priority 2: COM linear and base
/// angular tracking, swing-leg tracking, swing-wheel damping and the
/// rolling-direction ground-leg tracking. Priority 3: contact force
/// minimization.
pub fn build_task_stack(input: &WbcInput, cfg: &WbcConfig) -> Result<Vec<TaskLevel>, WbcError> {
    Ok(assemble(input, cfg)?.levels)
}

fn assemble(input: &WbcInput, cfg: &WbcConfig) -> Result<StackBundle, WbcError> {
    let model = input.model;
    let tree = &model.tree;
    let state = input.state;
    let kd = input.kd;
    let terms = input.terms;
    let n_u = tree.n_u();
    let n_j = tree.n_joints();
    let n_c = terms.contact_legs.len();
    if n_c < 2 {
        return Err(WbcError::TooFewContacts(n_c));
    }
    let n_x = n_u + 3 * n_c;

    // ---- Priority 1 ---------------------------------------------------
    let n_p1 = 6 + 3 * n_c;
    let mut a1 = DMatrix::zeros(n_p1, n_x);
    let mut b1 = DVector::zeros(n_p1);
    // Floating-base rows of M u̇ + h = J_Sᵀ λ (the base block of S is zero).
    a1.view_mut((0, 0), (6, n_u))
        .copy_from(&terms.mass_matrix.rows(0, 6));
    if n_c > 0 {
        let jst_base = terms.support_jacobian.columns(0, 6).transpose();
        a1.view_mut((0, n_u), (6, 3 * n_c)).copy_from(&(-jst_base));
    }
    for i in 0..6 {
        b1[i] = -terms.bias[i];
    }
    // Rolling constraint rows: J_S u̇ = -J̇_S u + contact accelerations.
    a1.view_mut((6, 0), (3 * n_c, n_u))
        .copy_from(&terms.support_jacobian);
    let mut rolling_b = DVector::zeros(3 * n_c);
    for (k, &leg) in terms.contact_legs.iter().enumerate() {
        let rhs = rolling_rhs(model, kd, state, input.plane, leg)?;
        for i in 0..3 {
            rolling_b[3 * k + i] = rhs[i];
            b1[6 + 3 * k + i] = rhs[i];
        }
    }
    let rolling_matrix = {
        let mut m = DMatrix::zeros(3 * n_c, n_x);
        m.view_mut((0, 0), (3 * n_c, n_u))
            .copy_from(&terms.support_jacobian);
        m
    };

    // Torque limits on τ = M_j u̇ + h_j - J_S,jᵀ λ.
    let torque_limits = model.torque_limits();
    let m_j = terms.mass_matrix.rows(6, n_j);
    let jst_j = terms.support_jacobian.columns(6, n_j).transpose();
    let mut d1 = DMatrix::zeros(2 * n_j + 4 * n_c, n_x);
    let mut f1 = DVector::zeros(2 * n_j + 4 * n_c);
    for r in 0..n_j {
        for c in 0..n_u {
            d1[(r, c)] = m_j[(r, c)];
            d1[(n_j + r, c)] = -m_j[(r, c)];
        }
        for c in 0..3 * n_c {
            d1[(r, n_u + c)] = -jst_j[(r, c)];
            d1[(n_j + r, n_u + c)] = jst_j[(r, c)];
        }
        f1[r] = torque_limits[r] - terms.bias[6 + r];
        f1[n_j + r] = torque_limits[r] + terms.bias[6 + r];
    }
    // Friction pyramid: |λ·t| <= (μ/√2) λ·n for both tangents (inner
    // approximation of the cone).
    let mu_facet = cfg.friction / 2f64.sqrt();
    let mut friction_matrix = DMatrix::zeros(4 * n_c, 3 * n_c);
    for (k, &leg) in terms.contact_legs.iter().enumerate() {
        let legs = model.leg(leg);
        let axle = nalgebra::Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
        let center = kd.pose[legs.wheel].translation.vector;
        let frame = contact_frame(input.plane, &axle, &center, model.wheel_radius)?;
        let cx = frame.rolling_direction();
        let cy = frame.lateral();
        let n = frame.normal();
        for (facet, tangent) in [cx, -cx, cy, -cy].into_iter().enumerate() {
            let row = 2 * n_j + 4 * k + facet;
            let coeffs = tangent - n * mu_facet; // facet normal t - μ̂ n
            for i in 0..3 {
                d1[(row, n_u + 3 * k + i)] = coeffs[i];
                friction_matrix[(4 * k + facet, 3 * k + i)] = coeffs[i];
            }
            f1[row] = 0.0;
        }
    }
    normalize_rows(&mut a1, &mut b1);
    let mut f1_norm = f1.clone();
    normalize_rows(&mut d1, &mut f1_norm);
    // Tighten the physical limits by a hair so solver-precision noise can
    // never show up as a raw limit violation.
    for i in 0..f1_norm.len() {
        f1_norm[i] -= 1e-8;
    }
    let level1 = TaskLevel {
        eq_weights: DVector::from_element(b1.len(), cfg.weight_dynamics),
        eq_matrix: a1,
        eq_rhs: b1,
        ineq_weights: DVector::from_element(f1_norm.len(), 1.0),
        ineq_matrix: d1,
        ineq_rhs: f1_norm,
        // Actuator limits and the friction pyramid are physical constraints,
        // not preferences.
        hard_inequalities: true,
    };

    // ---- Priority 2 ---------------------------------------------------
    let n_swing = input.swing.len();
    let n_ground = input.ground.len();
    let n_p2 = 3 + 3 + 3 * n_swing + n_swing + n_ground;
    let mut a2 = DMatrix::zeros(n_p2, n_x);
    let mut b2 = DVector::zeros(n_p2);
    let mut w2 = DVector::from_element(n_p2, 1.0);
    let mut row = 0;

    // COM linear tracking.
    let j_com = com_jacobian(tree, kd);
    let (p_com, v_com, _) = com_state(tree, kd);
    let jdotu_com = com_acceleration_bias(tree, kd, state);
    let a_des = input.com.acceleration
        + cfg.kp_com * (input.com.position - p_com)
        + cfg.kd_com * (input.com.velocity - v_com);
    for i in 0..3 {
        for c in 0..n_u {
            a2[(row, c)] = j_com[(i, c)];
        }
        b2[row] = a_des[i] - jdotu_com[i];
        w2[row] = cfg.weight_com;
        row += 1;
    }
    // Base angular tracking: u̇ rows 3..6 are the base-frame angular
    // acceleration.
    let err_world = rotation_error(&state.base_orientation, &input.base_orientation_ref);
    let err_base = state.base_orientation.inverse() * err_world;
    let omega_err = input.base_angular_velocity_ref - state.base_angular_velocity;
    for i in 0..3 {
        a2[(row, 3 + i)] = 1.0;
        b2[row] = cfg.kp_base * err_base[i] + cfg.kd_base * omega_err[i];
        w2[row] = cfg.weight_base;
        row += 1;
    }
    // Swing-leg tracking (leg-fixed contact point, plan-frame PD).
    for (leg, reference) in &input.swing {
        let leg = *leg;
        if terms.contact_legs.contains(&leg) {
            return Err(WbcError::MissingSwingReference(leg));
        }
        let j = contact_jacobian(model, kd, input.plane, leg, Attachment::LegFixed)?;
        let point = wheel_contact_point(model, kd, leg, input.plane)?;
        let drift = point_acceleration_bias(&model.tree, kd, state, model.leg(leg).shank, &point);
        let p_plan = input.plan_frame.to_plan(&point);
        let v_world = point_velocity(kd, model.leg(leg).shank, &point);
        let v_plan = input.plan_frame.rotate_to_plan(&v_world);
        let desired_plan = reference.acceleration
            + cfg.kp_leg * (reference.position - p_plan)
            + cfg.kd_leg * (reference.velocity - v_plan);
        let desired_world = input.plan_frame.rotate_to_world(&desired_plan) - drift;
        for i in 0..3 {
            for c in 0..n_u {
                a2[(row, c)] = j[(i, c)];
            }
            b2[row] = desired_world[i];
            w2[row] = cfg.weight_swing;
            row += 1;
        }
        // Swing-wheel rotation damping: θ̈ = -k_d θ̇.
        let wheel_dof = model.wheel_dof(leg);
        a2[(row, wheel_dof)] = 1.0;
        b2[row] = -cfg.kd_wheel * state.joint_velocities[wheel_dof - tree.joint_offset()];
        w2[row] = cfg.weight_wheel_damping;
        row += 1;
    }
    // Ground-leg tracking projected on the rolling direction.
    for (leg, reference) in &input.ground {
        let leg = *leg;
        let legs = model.leg(leg);
        let j = contact_jacobian(model, kd, input.plane, leg, Attachment::LegFixed)?;
        let point = wheel_contact_point(model, kd, leg, input.plane)?;
        let drift = point_acceleration_bias(&model.tree, kd, state, legs.shank, &point);
        let axle = nalgebra::Unit::new_unchecked(kd.pose[legs.shank].rotation * Vector3::y());
        let frame = contact_frame(input.plane, &axle, &kd.pose[legs.wheel].translation.vector, model.wheel_radius)?;
        let cx = frame.rolling_direction();
        let p_plan = input.plan_frame.to_plan(&point);
        let v_world = point_velocity(kd, legs.shank, &point);
        let v_plan = input.plan_frame.rotate_to_plan(&v_world);
        let desired_plan = reference.acceleration
            + cfg.kp_leg * (reference.position - p_plan)
            + cfg.kd_leg * (reference.velocity - v_plan);
        let desired_world = input.plan_frame.rotate_to_world(&desired_plan) - drift;
        // π_cx of the 3-row task: a single row cxᵀ J.
        for c in 0..n_u {
            a2[(row, c)] = cx.x * j[(0, c)] + cx.y * j[(1, c)] + cx.z * j[(2, c)];
        }
        b2[row] = cx.dot(&desired_world);
        w2[row] = cfg.weight_ground;
        row += 1;
    }
    debug_assert_eq!(row, n_p2);
    normalize_rows(&mut a2, &mut b2);
    let level2 = TaskLevel {
        eq_matrix: a2,
        eq_rhs: b2,
        eq_weights: w2,
        ineq_matrix: DMatrix::zeros(0, n_x),
        ineq_rhs: DVector::zeros(0),
        ineq_weights: DVector::zeros(0),
        hard_inequalities: false,
    };

    // ---- Priority 3: contact force minimization ------------------------
    let mut a3 = DMatrix::zeros(3 * n_c, n_x);
    for i in 0..3 * n_c {
        a3[(i, n_u + i)] = 1.0;
    }
    let level3 = TaskLevel {
        eq_matrix: a3,
        eq_rhs: DVector::zeros(3 * n_c),
        eq_weights: DVector::from_element(3 * n_c, cfg.weight_force_minimization),
        ineq_matrix: DMatrix::zeros(0, n_x),
        ineq_rhs: DVector::zeros(0),
        ineq_weights: DVector::zeros(0),
        hard_inequalities: false,
    };

    Ok(StackBundle {
        levels: vec![level1, level2, level3],
        rolling_matrix,
        rolling_rhs: rolling_b,
        friction_matrix,
    })
}

/// Solve the cascade and extract torques via the actuated rows of the
/// equations of motion.
pub fn solve_wbc(input: &WbcInput, cfg: &WbcConfig) -> Result<WbcSolution, WbcError> {
    let t0 = std::time::Instant::now();
    let bundle = assemble(input, cfg)?;
    let solution = solve_hierarchy(&bundle.levels, cfg.regularization)?;
    let tree = &input.model.tree;
    let n_u = tree.n_u();
    let n_j = tree.n_joints();
    let n_c = input.terms.contact_legs.len();

    let u_dot = solution.x.rows(0, n_u).into_owned();
    let lambda = solution.x.rows(n_u, 3 * n_c).into_owned();
    let m_j = input.terms.mass_matrix.rows(6, n_j);
    let h_j = input.terms.bias.rows(6, n_j);
    let jst_j = input.terms.support_jacobian.columns(6, n_j).transpose();
    let torques = &m_j * &u_dot + h_j - &jst_j * &lambda;

    let rolling_residual = (&bundle.rolling_matrix * &solution.x - &bundle.rolling_rhs)
        .abs()
        .max();
    // Full floating-base EoM residual with the extracted torques; the
    // actuated rows vanish identically by construction of τ.
    let m_b = input.terms.mass_matrix.rows(0, 6);
    let h_b = input.terms.bias.rows(0, 6);
    let jst_b = input.terms.support_jacobian.columns(0, 6).transpose();
    let eom_residual = (&m_b * &u_dot + h_b - &jst_b * &lambda).abs().max();

    let friction_violation = if n_c > 0 {
        (&bundle.friction_matrix * &lambda).max().max(0.0)
    } else {
        0.0
    };

    Ok(WbcSolution {
        u_dot,
        lambda,
        torques,
        rolling_residual,
        eom_residual,
        level_residuals: solution.levels.iter().map(|l| l.eq_residual_norm).collect(),
        friction_violation,
        solve_time_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}
